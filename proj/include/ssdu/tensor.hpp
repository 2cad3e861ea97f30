#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ssdu/errors.hpp"

namespace ssdu {

using Shape = std::vector<std::size_t>;

/// Element kinds that can be stored in a Tensor and serialized.
enum class DType : std::uint8_t {
  float32 = 1,
  float64 = 2,
  complex64 = 3,
  complex128 = 4,
  uint8 = 5,
};

template <class T>
struct dtype_of;
template <>
struct dtype_of<float> : std::integral_constant<DType, DType::float32> {};
template <>
struct dtype_of<double> : std::integral_constant<DType, DType::float64> {};
template <>
struct dtype_of<std::complex<float>> : std::integral_constant<DType, DType::complex64> {};
template <>
struct dtype_of<std::complex<double>> : std::integral_constant<DType, DType::complex128> {};
template <>
struct dtype_of<std::uint8_t> : std::integral_constant<DType, DType::uint8> {};

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::float32: return 4;
    case DType::float64: return 8;
    case DType::complex64: return 8;
    case DType::complex128: return 16;
    case DType::uint8: return 1;
  }
  throw FormatError("unknown dtype code " + std::to_string(static_cast<int>(d)));
}

inline const char* dtype_name(DType d) {
  switch (d) {
    case DType::float32: return "float32";
    case DType::float64: return "float64";
    case DType::complex64: return "complex64";
    case DType::complex128: return "complex128";
    case DType::uint8: return "uint8";
  }
  return "unknown";
}

template <class T>
struct is_complex : std::false_type {};
template <class R>
struct is_complex<std::complex<R>> : std::true_type {};
template <class T>
inline constexpr bool is_complex_v = is_complex<T>::value;

template <class T>
struct real_of {
  using type = T;
};
template <class R>
struct real_of<std::complex<R>> {
  using type = R;
};
template <class T>
using real_of_t = typename real_of<T>::type;

template <class T>
concept FloatingElement = std::is_floating_point_v<T> || (is_complex_v<T> && std::is_floating_point_v<real_of_t<T>>);

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major N-dimensional array. Complex elements are stored as
/// std::complex, which is layout-compatible with interleaved (re, im) pairs.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw DimensionError("tensor buffer holds " + std::to_string(data_.size()) + " elements, shape " +
                           shape_string(shape_) + " needs " + std::to_string(shape_numel(shape_)));
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <class... I>
  T& operator()(I... idx) noexcept {
    return data_[offset(idx...)];
  }
  template <class... I>
  const T& operator()(I... idx) const noexcept {
    return data_[offset(idx...)];
  }

  /// Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  void reshape(Shape shape) {
    if (shape_numel(shape) != data_.size())
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    shape_ = std::move(shape);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& other) const = default;

 private:
  template <class... I>
  std::size_t offset(I... idx) const noexcept {
    const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t a = 0; a < sizeof...(I); ++a) off = off * shape_[a] + ids[a];
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

template <class T>
using ComplexTensor = Tensor<std::complex<T>>;
using MaskTensor = Tensor<std::uint8_t>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": shape " + shape_string(a) + " vs " + shape_string(b));
}

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& in) {
  Tensor<To> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if constexpr (is_complex_v<To> && is_complex_v<From>)
      out[i] = To(static_cast<real_of_t<To>>(in[i].real()), static_cast<real_of_t<To>>(in[i].imag()));
    else
      out[i] = static_cast<To>(in[i]);
  }
  return out;
}

template <class T>
Tensor<T>& operator+=(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

template <class T>
Tensor<T>& operator-=(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

template <class T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  a += b;
  return a;
}

template <class T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) {
  a -= b;
  return a;
}

template <class T, class S>
Tensor<T> operator*(S c, Tensor<T> a) {
  for (auto& v : a.data()) v *= c;
  return a;
}

/// a += alpha * b
template <class T, class S>
void axpy(S alpha, const Tensor<T>& b, Tensor<T>& a) {
  require_same_shape(a.shape(), b.shape(), "axpy");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += alpha * b[i];
}

/// Real part of sum(conj(a) * b); for real tensors the ordinary dot product.
template <class T>
real_of_t<T> real_dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "real_dot");
  real_of_t<T> acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if constexpr (is_complex_v<T>)
      acc += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
    else
      acc += a[i] * b[i];
  }
  return acc;
}

/// sum(conj(a) * b)
template <class R>
std::complex<R> inner(const Tensor<std::complex<R>>& a, const Tensor<std::complex<R>>& b) {
  require_same_shape(a.shape(), b.shape(), "inner");
  std::complex<R> acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(a[i]) * b[i];
  return acc;
}

template <class T>
real_of_t<T> norm2(const Tensor<T>& a) {
  return std::sqrt(real_dot(a, a));
}

template <class T>
real_of_t<T> norm1(const Tensor<T>& a) {
  real_of_t<T> acc = 0;
  for (const auto& v : a.data()) acc += std::abs(v);
  return acc;
}

template <class T>
real_of_t<T> max_abs(const Tensor<T>& a) {
  real_of_t<T> m = 0;
  for (const auto& v : a.data()) m = std::max<real_of_t<T>>(m, std::abs(v));
  return m;
}

template <class R>
Tensor<R> magnitude(const Tensor<std::complex<R>>& a) {
  Tensor<R> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::abs(a[i]);
  return out;
}

template <class T>
bool all_finite(const Tensor<T>& a) {
  for (const auto& v : a.data()) {
    if constexpr (is_complex_v<T>) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace ssdu
