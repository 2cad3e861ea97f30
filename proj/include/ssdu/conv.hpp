#pragma once

#include <Eigen/Core>

#include <optional>

#include "ssdu/tensor.hpp"

namespace ssdu {

namespace detail {

struct ConvGeometry {
  std::size_t in_channels, out_channels, rows, cols, k;
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& kernel) {
  if (input.size() != 3) throw DimensionError("conv2d input must be [C_in,H,W], got " + shape_string(input));
  if (kernel.size() != 4) throw DimensionError("conv2d kernel must be [C_out,C_in,k,k], got " + shape_string(kernel));
  if (kernel[1] != input[0])
    throw DimensionError("conv2d kernel expects " + std::to_string(kernel[1]) + " input channels, got " +
                         std::to_string(input[0]));
  if (kernel[2] != kernel[3] || kernel[2] % 2 == 0)
    throw DimensionError("conv2d kernel must be square with odd size, got " + shape_string(kernel));
  return {input[0], kernel[0], input[1], input[2], kernel[2]};
}

template <class Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Columns matrix [C_in*k*k, H*W] with zero padding; row (i, ky, kx) holds the
// input plane shifted by (ky - p, kx - p).
template <class Real>
RowMatrix<Real> im2col(const Tensor<Real>& input, const ConvGeometry& g) {
  const std::size_t plane = g.rows * g.cols;
  const long pad = static_cast<long>(g.k / 2);
  RowMatrix<Real> cols = RowMatrix<Real>::Zero(g.in_channels * g.k * g.k, plane);
  for (std::size_t i = 0; i < g.in_channels; ++i) {
    const Real* src = input.raw() + i * plane;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        Real* dst = cols.data() + ((i * g.k + ky) * g.k + kx) * plane;
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        const long rows = static_cast<long>(g.rows), ncols = static_cast<long>(g.cols);
        const long y0 = std::max(0L, -dy), y1 = std::min(rows, rows - dy);
        const long x0 = std::max(0L, -dx), x1 = std::min(ncols, ncols - dx);
        for (long y = y0; y < y1; ++y) {
          const Real* s = src + (y + dy) * ncols + dx;
          Real* d = dst + y * ncols;
          for (long x = x0; x < x1; ++x) d[x] = s[x];
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-add columns back onto the input planes.
template <class Real>
void col2im_add(const RowMatrix<Real>& cols, const ConvGeometry& g, Tensor<Real>& grad_input) {
  const std::size_t plane = g.rows * g.cols;
  const long pad = static_cast<long>(g.k / 2);
  for (std::size_t i = 0; i < g.in_channels; ++i) {
    Real* dst = grad_input.raw() + i * plane;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const Real* src = cols.data() + ((i * g.k + ky) * g.k + kx) * plane;
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        const long rows = static_cast<long>(g.rows), ncols = static_cast<long>(g.cols);
        const long y0 = std::max(0L, -dy), y1 = std::min(rows, rows - dy);
        const long x0 = std::max(0L, -dx), x1 = std::min(ncols, ncols - dx);
        for (long y = y0; y < y1; ++y) {
          const Real* s = src + y * ncols;
          Real* d = dst + (y + dy) * ncols + dx;
          for (long x = x0; x < x1; ++x) d[x] += s[x];
        }
      }
    }
  }
}

template <class Real>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Real>>;
template <class Real>
using MatrixMap = Eigen::Map<RowMatrix<Real>>;

}  // namespace detail

/// Same-padded 2-D cross-correlation: [C_in,H,W] * [C_out,C_in,k,k] -> [C_out,H,W].
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& kernel, const Tensor<Real>* bias = nullptr) {
  const auto g = detail::conv_geometry(input.shape(), kernel.shape());
  if (bias && bias->shape() != Shape{g.out_channels})
    throw DimensionError("conv2d bias must be [" + std::to_string(g.out_channels) + "], got " + shape_string(bias->shape()));
  const std::size_t plane = g.rows * g.cols;
  Tensor<Real> out({g.out_channels, g.rows, g.cols});
  if (plane == 0) return out;
  const auto cols = detail::im2col(input, g);
  detail::ConstMatrixMap<Real> w(kernel.raw(), g.out_channels, g.in_channels * g.k * g.k);
  detail::MatrixMap<Real> o(out.raw(), g.out_channels, plane);
  o.noalias() = w * cols;
  if (bias)
    for (std::size_t c = 0; c < g.out_channels; ++c) o.row(c).array() += (*bias)[c];
  return out;
}

/// Gradients of conv2d with respect to input, kernel and bias given the
/// output cotangent. Any of the outputs may be null to skip that term.
template <class Real>
void conv2d_backward(const Tensor<Real>& input, const Tensor<Real>& kernel, const Tensor<Real>& grad_out,
                     Tensor<Real>* grad_input, Tensor<Real>* grad_kernel, Tensor<Real>* grad_bias) {
  const auto g = detail::conv_geometry(input.shape(), kernel.shape());
  const std::size_t plane = g.rows * g.cols;
  const std::size_t patch = g.in_channels * g.k * g.k;
  detail::ConstMatrixMap<Real> go(grad_out.raw(), g.out_channels, plane);
  detail::ConstMatrixMap<Real> w(kernel.raw(), g.out_channels, patch);
  if (grad_kernel) {
    const auto cols = detail::im2col(input, g);
    detail::MatrixMap<Real> gk(grad_kernel->raw(), g.out_channels, patch);
    gk.noalias() += go * cols.transpose();
  }
  if (grad_input) {
    detail::RowMatrix<Real> gcols = w.transpose() * go;
    detail::col2im_add(gcols, g, *grad_input);
  }
  // plain loop: Eigen's vectorized redux peels by pointer alignment, which
  // would make the summation order depend on where the heap put the buffer
  if (grad_bias)
    for (std::size_t c = 0; c < g.out_channels; ++c) {
      Real acc = 0;
      for (const Real* p = grad_out.raw() + c * plane; p != grad_out.raw() + (c + 1) * plane; ++p) acc += *p;
      (*grad_bias)[c] += acc;
    }
}

}  // namespace ssdu
