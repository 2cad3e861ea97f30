#pragma once

#include <string>

#include "ssdu/autodiff.hpp"
#include "ssdu/fft.hpp"
#include "ssdu/tensor.hpp"

namespace ssdu {

enum class MaskKind : std::uint8_t { omega = 0, theta = 1, lambda = 2 };

inline const char* mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::omega: return "omega";
    case MaskKind::theta: return "theta";
    case MaskKind::lambda: return "lambda";
  }
  return "unknown";
}

/// Boolean k-space grid [H,W] (one byte per entry, 0 or 1).
struct SamplingMask {
  MaskTensor grid;
  MaskKind kind = MaskKind::omega;
  std::string descriptor;  // generation scheme, seed, rho

  SamplingMask() = default;
  SamplingMask(std::size_t rows, std::size_t cols, bool value = false, MaskKind k = MaskKind::omega)
      : grid({rows, cols}, static_cast<std::uint8_t>(value)), kind(k) {}
  SamplingMask(MaskTensor g, MaskKind k, std::string desc = {}) : grid(std::move(g)), kind(k), descriptor(std::move(desc)) {
    if (grid.rank() != 2) throw DimensionError("sampling mask must be [H,W], got " + shape_string(grid.shape()));
  }

  std::size_t rows() const { return grid.extent(0); }
  std::size_t cols() const { return grid.extent(1); }
  const Shape& shape() const { return grid.shape(); }
  bool operator()(std::size_t r, std::size_t c) const { return grid(r, c) != 0; }
  bool test(std::size_t i) const { return grid[i] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) { grid(r, c) = static_cast<std::uint8_t>(v); }
  void set_index(std::size_t i, bool v = true) { grid[i] = static_cast<std::uint8_t>(v); }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : grid.data()) n += v != 0;
    return n;
  }
  bool empty() const { return count() == 0; }

  /// Every true entry of this mask is also true in `other`.
  bool subset_of(const SamplingMask& other) const {
    require_same_shape(shape(), other.shape(), "mask subset");
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (grid[i] && !other.grid[i]) return false;
    return true;
  }

  static SamplingMask full(std::size_t rows, std::size_t cols) { return SamplingMask(rows, cols, true); }
};

inline SamplingMask mask_and(const SamplingMask& a, const SamplingMask& b) {
  require_same_shape(a.shape(), b.shape(), "mask and");
  SamplingMask out = a;
  for (std::size_t i = 0; i < a.grid.size(); ++i) out.grid[i] = a.grid[i] && b.grid[i];
  return out;
}

inline SamplingMask mask_or(const SamplingMask& a, const SamplingMask& b) {
  require_same_shape(a.shape(), b.shape(), "mask or");
  SamplingMask out = a;
  for (std::size_t i = 0; i < a.grid.size(); ++i) out.grid[i] = a.grid[i] || b.grid[i];
  return out;
}

/// Per-coil complex sensitivities [n_coils,H,W].
template <class Real>
struct CoilMaps {
  ComplexTensor<Real> maps;

  std::size_t n_coils() const { return maps.extent(0); }
  std::size_t rows() const { return maps.extent(1); }
  std::size_t cols() const { return maps.extent(2); }
  Shape image_shape() const { return {rows(), cols()}; }

  template <class To>
  CoilMaps<To> cast() const {
    return {tensor_cast<std::complex<To>>(maps)};
  }
};

/// Multi-coil k-space of one slice. Entries outside acquired_mask are zero;
/// `scale` is the factor the stored data was divided by.
template <class Real>
struct KSpaceVolume {
  ComplexTensor<Real> data;
  SamplingMask acquired_mask;
  std::string slice_id;
  double scale = 1.0;

  template <class To>
  KSpaceVolume<To> cast() const {
    return {tensor_cast<std::complex<To>>(data), acquired_mask, slice_id, scale};
  }
};

namespace detail {

template <class Real>
void check_operator_shapes(const Shape& image, const CoilMaps<Real>& maps, const SamplingMask& mask) {
  if (maps.maps.rank() != 3) throw DimensionError("coil maps must be [C,H,W], got " + shape_string(maps.maps.shape()));
  require_same_shape(image, maps.image_shape(), "image vs coil maps");
  require_same_shape(mask.shape(), maps.image_shape(), "mask vs coil maps");
}

// In-place multiplication of each [H,W] plane by the mask.
template <class Real>
void apply_mask_planes(ComplexTensor<Real>& t, const SamplingMask& mask) {
  const std::size_t plane = mask.grid.size();
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!mask.grid[i % plane]) t[i] = {};
}

}  // namespace detail

/// Restricts a [...,H,W] array to the mask (zeros elsewhere).
template <class Real>
ComplexTensor<Real> apply_mask(ComplexTensor<Real> t, const SamplingMask& mask) {
  if (t.rank() < 2 || t.extent(t.rank() - 2) != mask.rows() || t.extent(t.rank() - 1) != mask.cols())
    throw DimensionError("mask " + shape_string(mask.shape()) + " does not match " + shape_string(t.shape()));
  detail::apply_mask_planes(t, mask);
  return t;
}

/// Per coil c: mask * fft2_centered(maps_c * x).
template <class Real>
ComplexTensor<Real> apply_E(const ComplexTensor<Real>& x, const CoilMaps<Real>& maps, const SamplingMask& mask) {
  detail::check_operator_shapes(x.shape(), maps, mask);
  const std::size_t plane = x.size();
  ComplexTensor<Real> coil_images(maps.maps.shape());
  for (std::size_t c = 0; c < maps.n_coils(); ++c)
    for (std::size_t i = 0; i < plane; ++i) coil_images[c * plane + i] = maps.maps[c * plane + i] * x[i];
  auto k = fft2_centered(coil_images);
  detail::apply_mask_planes(k, mask);
  return k;
}

/// sum_c conj(maps_c) * ifft2_centered(mask * y_c); the adjoint of apply_E.
template <class Real>
ComplexTensor<Real> apply_EH(const ComplexTensor<Real>& y, const CoilMaps<Real>& maps, const SamplingMask& mask) {
  require_same_shape(y.shape(), maps.maps.shape(), "k-space vs coil maps");
  detail::check_operator_shapes(maps.image_shape(), maps, mask);
  auto masked = y;
  detail::apply_mask_planes(masked, mask);
  const auto coil_images = ifft2_centered(masked);
  const std::size_t plane = mask.grid.size();
  ComplexTensor<Real> x(maps.image_shape());
  for (std::size_t c = 0; c < maps.n_coils(); ++c)
    for (std::size_t i = 0; i < plane; ++i) x[i] += std::conj(maps.maps[c * plane + i]) * coil_images[c * plane + i];
  return x;
}

/// E^H E x without materializing more than one coil stack.
template <class Real>
ComplexTensor<Real> apply_EHE(const ComplexTensor<Real>& x, const CoilMaps<Real>& maps, const SamplingMask& mask) {
  return apply_EH(apply_E(x, maps, mask), maps, mask);
}

/// SENSE-1 coil combination: sum_c conj(maps_c) * coil_image_c.
template <class Real>
ComplexTensor<Real> sense1_combine(const ComplexTensor<Real>& coil_images, const CoilMaps<Real>& maps) {
  require_same_shape(coil_images.shape(), maps.maps.shape(), "sense1_combine");
  const std::size_t plane = maps.rows() * maps.cols();
  ComplexTensor<Real> x(maps.image_shape());
  for (std::size_t c = 0; c < maps.n_coils(); ++c)
    for (std::size_t i = 0; i < plane; ++i) x[i] += std::conj(maps.maps[c * plane + i]) * coil_images[c * plane + i];
  return x;
}

/// x0 = E_mask^H y, the zero-filled starting image of the unrolled network.
template <class Real>
ComplexTensor<Real> zero_filled_init(const KSpaceVolume<Real>& y, const CoilMaps<Real>& maps, const SamplingMask& mask) {
  if (!mask.subset_of(y.acquired_mask))
    throw ConsistencyError("slice " + y.slice_id + ": mask selects k-space entries that were not acquired");
  return apply_EH(y.data, maps, mask);
}

namespace ad {

/// Taped apply_E; backward applies apply_EH.
template <class Real>
Var<std::complex<Real>> encode(const Var<std::complex<Real>>& x, const CoilMaps<Real>& maps, const SamplingMask& mask) {
  return x.tape().record("encode", apply_E(x.value(), maps, mask), {x.id()}, [x = x.id(), &maps, &mask](auto& t, std::size_t self) {
    t.accumulate(x, apply_EH(t.template grad<std::complex<Real>>(self), maps, mask));
  });
}

/// Taped apply_EH; backward applies apply_E.
template <class Real>
Var<std::complex<Real>> encode_adjoint(const Var<std::complex<Real>>& y, const CoilMaps<Real>& maps, const SamplingMask& mask) {
  return y.tape().record("encode_adjoint", apply_EH(y.value(), maps, mask), {y.id()},
                         [y = y.id(), &maps, &mask](auto& t, std::size_t self) {
                           t.accumulate(y, apply_E(t.template grad<std::complex<Real>>(self), maps, mask));
                         });
}

/// Taped E^H E; the operator is Hermitian so backward reuses it.
template <class Real>
Var<std::complex<Real>> normal(const Var<std::complex<Real>>& x, const CoilMaps<Real>& maps, const SamplingMask& mask) {
  return x.tape().record("normal", apply_EHE(x.value(), maps, mask), {x.id()}, [x = x.id(), &maps, &mask](auto& t, std::size_t self) {
    t.accumulate(x, apply_EHE(t.template grad<std::complex<Real>>(self), maps, mask));
  });
}

/// Elementwise restriction to a mask; self-adjoint.
template <class Real>
Var<std::complex<Real>> restrict_to(const Var<std::complex<Real>>& x, const SamplingMask& mask) {
  return x.tape().record("restrict", apply_mask(x.value(), mask), {x.id()}, [x = x.id(), &mask](auto& t, std::size_t self) {
    t.accumulate(x, apply_mask(t.template grad<std::complex<Real>>(self), mask));
  });
}

}  // namespace ad

}  // namespace ssdu
