#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <new>
#include <mutex>
#include <tuple>
#include <vector>

#include "ssdu/tensor.hpp"

namespace ssdu {

namespace detail {

template <class Real>
struct Fftw;

template <>
struct Fftw<double> {
  using plan_t = fftw_plan;
  using cplx_t = fftw_complex;
  static plan_t plan(int n0, int n1, cplx_t* buf, int sign) { return fftw_plan_dft_2d(n0, n1, buf, buf, sign, FFTW_ESTIMATE); }
  static void execute(plan_t p, cplx_t* buf) { fftw_execute_dft(p, buf, buf); }
  static void* alloc(std::size_t bytes) { return fftw_malloc(bytes); }
  static void release(void* p) { fftw_free(p); }
};

template <>
struct Fftw<float> {
  using plan_t = fftwf_plan;
  using cplx_t = fftwf_complex;
  static plan_t plan(int n0, int n1, cplx_t* buf, int sign) { return fftwf_plan_dft_2d(n0, n1, buf, buf, sign, FFTW_ESTIMATE); }
  static void execute(plan_t p, cplx_t* buf) { fftwf_execute_dft(p, buf, buf); }
  static void* alloc(std::size_t bytes) { return fftwf_malloc(bytes); }
  static void release(void* p) { fftwf_free(p); }
};

// SIMD-aligned scratch; plans are made without FFTW_UNALIGNED and only ever
// executed on buffers from this allocator.
template <class Real>
class AlignedBuffer {
 public:
  explicit AlignedBuffer(std::size_t n) : n_(n), p_(static_cast<std::complex<Real>*>(Fftw<Real>::alloc(n * sizeof(std::complex<Real>)))) {
    if (!p_) throw std::bad_alloc();
  }
  ~AlignedBuffer() { Fftw<Real>::release(p_); }
  AlignedBuffer(const AlignedBuffer&) = delete;
  AlignedBuffer& operator=(const AlignedBuffer&) = delete;
  std::complex<Real>* data() { return p_; }
  std::size_t size() const { return n_; }
  typename Fftw<Real>::cplx_t* get() { return reinterpret_cast<typename Fftw<Real>::cplx_t*>(p_); }

 private:
  std::size_t n_;
  std::complex<Real>* p_;
};

// FFTW planning is not thread-safe; execution of an existing plan is. Plans
// are created once per (rows, cols, sign) and reused for the process lifetime,
// which also keeps results bit-identical across calls.
template <class Real>
typename Fftw<Real>::plan_t cached_plan(std::size_t rows, std::size_t cols, int sign) {
  static std::mutex mutex;
  static std::map<std::tuple<std::size_t, std::size_t, int>, typename Fftw<Real>::plan_t> plans;
  std::lock_guard lock(mutex);
  auto key = std::make_tuple(rows, cols, sign);
  if (auto it = plans.find(key); it != plans.end()) return it->second;
  AlignedBuffer<Real> scratch(rows * cols);
  auto plan = Fftw<Real>::plan(static_cast<int>(rows), static_cast<int>(cols), scratch.get(), sign);
  plans.emplace(key, plan);
  return plan;
}

// Cyclic roll of a rows x cols plane by (s0, s1), times `scale`:
// out[(i+s0)%rows][(j+s1)%cols] = scale * in[i][j].
template <class Real>
void roll_plane(const std::complex<Real>* in, std::complex<Real>* out, std::size_t rows, std::size_t cols, std::size_t s0,
                std::size_t s1, Real scale) {
  const std::size_t head = cols - s1;  // input columns [0, head) land at [s1, cols)
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t oi = i + s0 < rows ? i + s0 : i + s0 - rows;
    const auto* src = in + i * cols;
    auto* dst = out + oi * cols;
    for (std::size_t j = 0; j < head; ++j) dst[s1 + j] = scale * src[j];
    for (std::size_t j = head; j < cols; ++j) dst[j - head] = scale * src[j];
  }
}

template <class Real>
ComplexTensor<Real> centered_transform(const ComplexTensor<Real>& input, int sign) {
  if (input.rank() < 2) throw DimensionError("fft2_centered needs at least two axes, got " + shape_string(input.shape()));
  const std::size_t rows = input.extent(input.rank() - 2);
  const std::size_t cols = input.extent(input.rank() - 1);
  const std::size_t plane = rows * cols;
  ComplexTensor<Real> out(input.shape());
  if (plane == 0) return out;
  auto plan = cached_plan<Real>(rows, cols, sign);
  const Real norm = Real(1) / std::sqrt(static_cast<Real>(plane));
  thread_local std::map<std::size_t, std::unique_ptr<AlignedBuffer<Real>>> buffers;
  auto& slot = buffers[plane];
  if (!slot) slot = std::make_unique<AlignedBuffer<Real>>(plane);
  auto& buf = *slot;
  // ifftshift rolls by -(n/2) == +(n - n/2); fftshift rolls by +(n/2)
  const std::size_t pre0 = rows - rows / 2, pre1 = cols - cols / 2;
  for (std::size_t b = 0; b < input.size() / plane; ++b) {
    roll_plane(input.raw() + b * plane, buf.data(), rows, cols, pre0 % rows, pre1 % cols, Real(1));
    Fftw<Real>::execute(plan, buf.get());
    roll_plane(buf.data(), out.raw() + b * plane, rows, cols, rows / 2, cols / 2, norm);
  }
  return out;
}

}  // namespace detail

/// Orthonormal 2-D DFT over the last two axes with the DC sample at the
/// center: fftshift(fft2(ifftshift(x))) / sqrt(H*W). Leading axes are batched.
template <class Real>
ComplexTensor<Real> fft2_centered(const ComplexTensor<Real>& input) {
  return detail::centered_transform(input, FFTW_FORWARD);
}

/// Inverse (and adjoint) of fft2_centered.
template <class Real>
ComplexTensor<Real> ifft2_centered(const ComplexTensor<Real>& input) {
  return detail::centered_transform(input, FFTW_BACKWARD);
}

}  // namespace ssdu
