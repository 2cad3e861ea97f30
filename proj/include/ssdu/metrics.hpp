#pragma once

#include <vector>

#include "ssdu/tensor.hpp"

namespace ssdu {

/// ||est - ref||^2 / ||ref||^2 (squared-norm ratio).
template <class T>
double nmse(const Tensor<T>& ref, const Tensor<T>& est) {
  require_same_shape(ref.shape(), est.shape(), "nmse");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num += std::norm(std::complex<double>(est[i]) - std::complex<double>(ref[i]));
    den += std::norm(std::complex<double>(ref[i]));
  }
  if (den == 0.0) throw DegenerateError("nmse: reference is identically zero");
  return num / den;
}

struct SsimParams {
  std::size_t window = 7;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 0.0;  // <= 0 selects max(ref)
};

inline std::string describe(const SsimParams& p) {
  return "uniform" + std::to_string(p.window) + "x" + std::to_string(p.window) + ";k1=0.01;k2=0.03;range=" +
         (p.data_range > 0 ? std::to_string(p.data_range) : std::string("max_ref"));
}

/// Mean SSIM over all fully contained window positions, uniform window,
/// sample (N-1) variances.
inline double ssim(const Tensor<double>& ref, const Tensor<double>& est, const SsimParams& p = {}) {
  require_same_shape(ref.shape(), est.shape(), "ssim");
  if (ref.rank() != 2) throw DimensionError("ssim expects [H,W] images, got " + shape_string(ref.shape()));
  const std::size_t H = ref.extent(0), W = ref.extent(1), w = p.window;
  if (w < 2 || w > H || w > W)
    throw DimensionError("ssim window " + std::to_string(w) + " does not fit image " + shape_string(ref.shape()));
  double range = p.data_range;
  if (range <= 0) {
    for (double v : ref.data()) range = std::max(range, v);
  }
  if (range <= 0) throw DegenerateError("ssim: data range is zero");
  const double c1 = (p.k1 * range) * (p.k1 * range), c2 = (p.k2 * range) * (p.k2 * range);
  const double n = static_cast<double>(w * w);

  // summed-area tables with a zero border row/column
  const std::size_t S = W + 1;
  std::vector<double> sx((H + 1) * S), sy((H + 1) * S), sxx((H + 1) * S), syy((H + 1) * S), sxy((H + 1) * S);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const double a = ref(r, c), b = est(r, c);
      const std::size_t i = (r + 1) * S + (c + 1), up = r * S + (c + 1), left = (r + 1) * S + c, diag = r * S + c;
      sx[i] = a + sx[up] + sx[left] - sx[diag];
      sy[i] = b + sy[up] + sy[left] - sy[diag];
      sxx[i] = a * a + sxx[up] + sxx[left] - sxx[diag];
      syy[i] = b * b + syy[up] + syy[left] - syy[diag];
      sxy[i] = a * b + sxy[up] + sxy[left] - sxy[diag];
    }
  }
  auto box = [&](const std::vector<double>& t, std::size_t r, std::size_t c) {
    return t[(r + w) * S + (c + w)] - t[r * S + (c + w)] - t[(r + w) * S + c] + t[r * S + c];
  };
  double total = 0.0;
  for (std::size_t r = 0; r + w <= H; ++r) {
    for (std::size_t c = 0; c + w <= W; ++c) {
      const double mx = box(sx, r, c) / n, my = box(sy, r, c) / n;
      const double vx = (box(sxx, r, c) - n * mx * mx) / (n - 1);
      const double vy = (box(syy, r, c) - n * my * my) / (n - 1);
      const double cov = (box(sxy, r, c) - n * mx * my) / (n - 1);
      total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  }
  return total / static_cast<double>((H - w + 1) * (W - w + 1));
}

}  // namespace ssdu
