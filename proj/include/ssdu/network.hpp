#pragma once

#include <cmath>
#include <random>
#include <string>

#include "ssdu/params.hpp"
#include "ssdu/solvers.hpp"

namespace ssdu {

/// Residual CNN regularizer. Input and output are 2-channel (real, imag).
struct ResNetConfig {
  std::size_t n_res_blocks = 3;
  std::size_t n_channels = 16;
  std::size_t kernel_size = 3;
  double scale_c = 0.1;
  bool io_bias = true;   // biases on the input and output convolutions
  bool rb_bias = false;  // biases inside residual blocks

  void validate() const {
    if (n_res_blocks < 1) throw UsageError("n_res_blocks must be >= 1");
    if (n_channels < 1) throw UsageError("n_channels must be >= 1");
    if (kernel_size % 2 == 0) throw UsageError("kernel_size must be odd");
    if (!(scale_c > 0)) throw UsageError("scale_c must be positive");
  }
};

struct UnrollConfig {
  std::size_t n_unrolls = 5;
  DCConfig dc{};          // dc.mu is the initial penalty
  bool freeze_mu = false;  // keep log_mu out of training

  void validate() const {
    if (n_unrolls < 1) throw UsageError("n_unrolls must be >= 1");
    dc.validate();
    if (!(dc.mu > 0)) throw UsageError("initial mu must be positive (it is stored as log_mu)");
  }
};

/// Scalar parameter count of the regularizer plus the penalty scalar.
inline std::size_t parameter_count(const ResNetConfig& cfg) {
  const std::size_t c = cfg.n_channels, k2 = cfg.kernel_size * cfg.kernel_size;
  std::size_t n = 2 * c * k2 + (cfg.io_bias ? c : 0);
  n += cfg.n_res_blocks * 2 * (c * c * k2 + (cfg.rb_bias ? c : 0));
  n += c * 2 * k2 + (cfg.io_bias ? 2 : 0);
  return n + 1;
}

/// Count quoted for the 15-block, 64-channel reference design. It equals
/// 8 blocks without biases plus mu, not 15 blocks; both are reported.
inline constexpr std::size_t kReferenceParameterCount = 592129;

inline ResNetConfig reference_scale_resnet() {
  ResNetConfig cfg;
  cfg.n_res_blocks = 15;
  cfg.n_channels = 64;
  return cfg;
}

namespace detail {

inline std::string rb_name(std::size_t b, int conv) { return "rb" + std::to_string(b) + ".conv" + std::to_string(conv); }

template <class Real>
Tensor<Real> glorot_kernel(std::size_t out_c, std::size_t in_c, std::size_t k, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in_c * k * k), fan_out = static_cast<double>(out_c * k * k);
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor<Real> w({out_c, in_c, k, k});
  for (auto& v : w.data()) v = static_cast<Real>(dist(rng));
  return w;
}

}  // namespace detail

/// Fresh parameters: Glorot-uniform kernels, zero biases, log_mu = log(dc.mu).
template <class Real>
ParamStore<Real> init_params(const ResNetConfig& net, const UnrollConfig& unroll, std::uint64_t seed) {
  net.validate();
  unroll.validate();
  std::mt19937_64 rng(seed);
  const std::size_t c = net.n_channels, k = net.kernel_size;
  ParamStore<Real> p;
  p.add("conv_in.weight", detail::glorot_kernel<Real>(c, 2, k, rng));
  if (net.io_bias) p.add("conv_in.bias", Tensor<Real>({c}));
  for (std::size_t b = 0; b < net.n_res_blocks; ++b) {
    for (int j = 1; j <= 2; ++j) {
      p.add(detail::rb_name(b, j) + ".weight", detail::glorot_kernel<Real>(c, c, k, rng));
      if (net.rb_bias) p.add(detail::rb_name(b, j) + ".bias", Tensor<Real>({c}));
    }
  }
  p.add("conv_out.weight", detail::glorot_kernel<Real>(2, c, k, rng));
  if (net.io_bias) p.add("conv_out.bias", Tensor<Real>({2}));
  p.add("log_mu", Tensor<Real>::scalar(static_cast<Real>(std::log(unroll.dc.mu))), !unroll.freeze_mu);
  return p;
}

namespace ad {

template <class Real>
Var<Real> optional_param(const typename ParamStore<Real>::Bound& params, const ParamStore<Real>& store, const std::string& name) {
  return store.contains(name) ? params[name] : Var<Real>{};
}

/// complex -> 2 channels -> conv_in -> residual blocks -> conv_out -> complex.
template <class Real>
Var<std::complex<Real>> resnet_forward(const Var<std::complex<Real>>& x, const ParamStore<Real>& store,
                                       const typename ParamStore<Real>::Bound& params, const ResNetConfig& cfg) {
  auto h = conv2d(to_channels(x), params["conv_in.weight"], optional_param(params, store, "conv_in.bias"));
  for (std::size_t b = 0; b < cfg.n_res_blocks; ++b) {
    const auto n1 = ssdu::detail::rb_name(b, 1), n2 = ssdu::detail::rb_name(b, 2);
    auto t = relu(conv2d(h, params[n1 + ".weight"], optional_param(params, store, n1 + ".bias")));
    t = conv2d(t, params[n2 + ".weight"], optional_param(params, store, n2 + ".bias"));
    h = h + scale(t, static_cast<Real>(cfg.scale_c));
  }
  return from_channels(conv2d(h, params["conv_out.weight"], optional_param(params, store, "conv_out.bias")));
}

/// T alternations of regularizer and data consistency with shared weights,
/// started from the zero-filled image of `dc_mask`. Data consistency only
/// sees k-space entries selected by `dc_mask`.
template <class Real>
Var<std::complex<Real>> unrolled_forward(Tape<Real>& tape, const KSpaceVolume<Real>& y, const CoilMaps<Real>& maps,
                                         const SamplingMask& dc_mask, const ParamStore<Real>& store,
                                         const typename ParamStore<Real>::Bound& params, const ResNetConfig& net,
                                         const UnrollConfig& cfg) {
  auto adjoint_data = tape.constant(zero_filled_init(y, maps, dc_mask));
  const auto mu = exp(params["log_mu"]);
  auto x = adjoint_data;
  for (std::size_t i = 0; i < cfg.n_unrolls; ++i) {
    const auto z = resnet_forward(x, store, params, net);
    x = dc_solve(z, adjoint_data, maps, dc_mask, mu, cfg.dc);
  }
  return x;
}

}  // namespace ad

/// Inference: unrolled network with data consistency on `dc_mask`.
template <class Real>
ComplexTensor<Real> reconstruct(const KSpaceVolume<Real>& y, const CoilMaps<Real>& maps, const SamplingMask& dc_mask,
                                const ParamStore<Real>& params, const ResNetConfig& net, const UnrollConfig& cfg) {
  ad::Tape<Real> tape;
  const auto bound = params.bind(tape, false);
  return ad::unrolled_forward(tape, y, maps, dc_mask, params, bound, net, cfg).value();
}

}  // namespace ssdu
