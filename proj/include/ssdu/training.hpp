#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ssdu/network.hpp"

namespace ssdu {

// ---------------------------------------------------------------------------
// Partitioning of acquired indices into a data-consistency set (theta) and a
// loss set (lambda).

enum class SelectionScheme { uniform, gaussian };

inline const char* scheme_name(SelectionScheme s) { return s == SelectionScheme::uniform ? "uniform" : "gaussian"; }

inline SelectionScheme parse_scheme(const std::string& s) {
  if (s == "uniform") return SelectionScheme::uniform;
  if (s == "gaussian") return SelectionScheme::gaussian;
  throw UsageError("unknown selection scheme '" + s + "' (expected uniform|gaussian)");
}

struct PartitionPolicy {
  double rho = 0.4;  // |lambda| / |omega|
  SelectionScheme scheme = SelectionScheme::gaussian;
  double gaussian_std_fraction = 0.25;  // sigma per axis, as a fraction of the axis extent
  std::size_t center_keep_rows = 4, center_keep_cols = 4;
  double overlap_fraction = 0.0;        // share of lambda also placed in theta
  bool identical_sets = false;          // theta = lambda = omega
  std::uint64_t per_slice_seed_base = 1000;

  void validate() const {
    if (!(rho > 0 && rho < 1)) throw PolicyError("rho must lie in (0,1), got " + std::to_string(rho));
    if (!(overlap_fraction >= 0 && overlap_fraction <= 1)) throw PolicyError("overlap_fraction must lie in [0,1]");
    if (!(gaussian_std_fraction > 0)) throw PolicyError("gaussian_std_fraction must be positive");
  }
};

struct Partition {
  SamplingMask theta;
  SamplingMask lambda;
};

/// Splits omega into theta (data consistency) and lambda (loss). The central
/// center_keep block always stays in theta; lambda has round(rho*|omega|)
/// entries drawn without replacement from the rest of omega.
inline Partition partition_mask(const SamplingMask& omega, const PartitionPolicy& policy, std::uint64_t slice_seed) {
  policy.validate();
  const std::size_t H = omega.rows(), W = omega.cols();
  const std::size_t n_omega = omega.count();
  if (n_omega == 0) throw PolicyError("cannot partition an empty sampling mask");
  std::string desc = std::string(scheme_name(policy.scheme)) + " rho=" + std::to_string(policy.rho) +
                     " seed=" + std::to_string(slice_seed);

  if (policy.identical_sets) {
    Partition p{omega, omega};
    p.theta.kind = MaskKind::theta;
    p.lambda.kind = MaskKind::lambda;
    p.theta.descriptor = p.lambda.descriptor = "identical";
    return p;
  }

  if (policy.center_keep_rows > H || policy.center_keep_cols > W)
    throw PolicyError("center_keep block does not fit inside the grid");
  const std::size_t r0 = H / 2 - policy.center_keep_rows / 2, c0 = W / 2 - policy.center_keep_cols / 2;
  auto protected_index = [&](std::size_t r, std::size_t c) {
    return r >= r0 && r < r0 + policy.center_keep_rows && c >= c0 && c < c0 + policy.center_keep_cols;
  };

  std::vector<std::uint8_t> candidate(H * W, 0);
  std::vector<std::size_t> candidates;
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      if (omega(r, c) && !protected_index(r, c)) {
        candidate[r * W + c] = 1;
        candidates.push_back(r * W + c);
      }

  const auto n_lambda = static_cast<std::size_t>(std::llround(policy.rho * static_cast<double>(n_omega)));
  if (n_lambda < 1) throw PolicyError("rho * |omega| rounds to zero loss samples");
  if (n_lambda > candidates.size())
    throw PolicyError("rho = " + std::to_string(policy.rho) + " needs " + std::to_string(n_lambda) +
                      " loss samples but only " + std::to_string(candidates.size()) + " are outside the center block");

  std::mt19937_64 rng(slice_seed);
  SamplingMask lambda(H, W, false, MaskKind::lambda);
  if (policy.scheme == SelectionScheme::uniform) {
    for (std::size_t i = 0; i < n_lambda; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
      std::swap(candidates[i], candidates[pick(rng)]);
      lambda.set_index(candidates[i]);
    }
  } else {
    // rejection sampling from a Gaussian density centered on the k-space center
    std::normal_distribution<double> dr(static_cast<double>(H / 2), policy.gaussian_std_fraction * static_cast<double>(H));
    std::normal_distribution<double> dc(static_cast<double>(W / 2), policy.gaussian_std_fraction * static_cast<double>(W));
    const std::size_t max_draws = 10000 * (H * W) + 100000;
    std::size_t chosen = 0, draws = 0;
    while (chosen < n_lambda) {
      if (++draws > max_draws) throw PolicyError("gaussian selection failed to place all loss samples");
      const double rf = std::round(dr(rng)), cf = std::round(dc(rng));
      if (rf < 0 || cf < 0 || rf >= static_cast<double>(H) || cf >= static_cast<double>(W)) continue;
      const std::size_t idx = static_cast<std::size_t>(rf) * W + static_cast<std::size_t>(cf);
      if (!candidate[idx] || lambda.test(idx)) continue;
      lambda.set_index(idx);
      ++chosen;
    }
  }

  SamplingMask theta = omega;
  theta.kind = MaskKind::theta;
  for (std::size_t i = 0; i < theta.grid.size(); ++i)
    if (lambda.test(i)) theta.set_index(i, false);

  if (policy.overlap_fraction > 0) {
    std::vector<std::size_t> in_lambda;
    for (std::size_t i = 0; i < lambda.grid.size(); ++i)
      if (lambda.test(i)) in_lambda.push_back(i);
    const auto n_overlap = static_cast<std::size_t>(std::llround(policy.overlap_fraction * static_cast<double>(in_lambda.size())));
    for (std::size_t i = 0; i < n_overlap; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, in_lambda.size() - 1);
      std::swap(in_lambda[i], in_lambda[pick(rng)]);
      theta.set_index(in_lambda[i]);
    }
    desc += " overlap=" + std::to_string(policy.overlap_fraction);
  }
  theta.descriptor = lambda.descriptor = desc;
  return {std::move(theta), std::move(lambda)};
}

// ---------------------------------------------------------------------------
// Losses

/// ||u - v||_2 / ||u||_2 + ||u - v||_1 / ||u||_1 over complex moduli.
template <class T>
double normalized_l1l2_loss(const Tensor<T>& u, const Tensor<T>& v) {
  require_same_shape(u.shape(), v.shape(), "normalized_l1l2_loss");
  const double n2 = norm2(u), n1 = norm1(u);
  if (n2 == 0.0) throw DegenerateError("normalized_l1l2_loss: reference is identically zero");
  const auto d = u - v;
  return norm2(d) / n2 + norm1(d) / n1;
}

enum class TrainMode { ssdu, supervised_kspace, supervised_image };

inline const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::ssdu: return "ssdu";
    case TrainMode::supervised_kspace: return "supervised_kspace";
    case TrainMode::supervised_image: return "supervised_image";
  }
  return "unknown";
}

inline TrainMode parse_mode(const std::string& s) {
  if (s == "ssdu") return TrainMode::ssdu;
  if (s == "supervised_kspace") return TrainMode::supervised_kspace;
  if (s == "supervised_image") return TrainMode::supervised_image;
  throw UsageError("unknown training mode '" + s + "' (expected ssdu|supervised_kspace|supervised_image)");
}

namespace ad {

/// Differentiable in v; u is a fixed reference.
template <class Real>
Var<Real> normalized_l1l2_loss(const ComplexTensor<Real>& u, const Var<std::complex<Real>>& v) {
  require_same_shape(u.shape(), v.shape(), "normalized_l1l2_loss");
  const double n2 = norm2(u), n1 = norm1(u);
  if (n2 == 0.0) throw DegenerateError("normalized_l1l2_loss: reference is identically zero");
  auto d = v.tape().constant(u) - v;
  return scale(l2_norm(d), static_cast<Real>(1.0 / n2)) + scale(l1_norm(d), static_cast<Real>(1.0 / n1));
}

/// Self-supervised loss: the network sees only theta in its data-consistency
/// units; its output is compared with the measurements on lambda.
template <class Real>
Var<Real> ssdu_loss(Tape<Real>& tape, const KSpaceVolume<Real>& y, const CoilMaps<Real>& maps, const SamplingMask& theta,
                    const SamplingMask& lambda, const ParamStore<Real>& store, const typename ParamStore<Real>::Bound& params,
                    const ResNetConfig& net, const UnrollConfig& cfg) {
  if (lambda.empty()) throw DegenerateError("slice " + y.slice_id + ": loss set lambda is empty");
  if (!theta.subset_of(y.acquired_mask) || !lambda.subset_of(y.acquired_mask))
    throw ConsistencyError("slice " + y.slice_id + ": theta/lambda exceed the acquired samples");
  const auto x = unrolled_forward(tape, y, maps, theta, store, params, net, cfg);
  return normalized_l1l2_loss(apply_mask(y.data, lambda), encode(x, maps, lambda));
}

/// Supervised loss against fully sampled data: image domain compares with
/// the SENSE-1 reference, k-space compares E_full(x) with y_full.
template <class Real>
Var<Real> supervised_loss(Tape<Real>& tape, const KSpaceVolume<Real>& y, const ComplexTensor<Real>* y_full,
                          const CoilMaps<Real>& maps, TrainMode mode, const ParamStore<Real>& store,
                          const typename ParamStore<Real>::Bound& params, const ResNetConfig& net, const UnrollConfig& cfg,
                          const SamplingMask& full) {
  if (!y_full) throw UsageError("slice " + y.slice_id + ": supervised training needs fully sampled reference k-space");
  const auto x = unrolled_forward(tape, y, maps, y.acquired_mask, store, params, net, cfg);
  if (mode == TrainMode::supervised_image) return normalized_l1l2_loss(sense1_combine(ifft2_centered(*y_full), maps), x);
  if (mode == TrainMode::supervised_kspace) return normalized_l1l2_loss(*y_full, encode(x, maps, full));
  throw UsageError("supervised_loss called with mode ssdu");
}

}  // namespace ad

/// Plain-value wrapper around ad::ssdu_loss (no gradients).
template <class Real>
double ssdu_loss(const KSpaceVolume<Real>& y, const CoilMaps<Real>& maps, const SamplingMask& theta, const SamplingMask& lambda,
                 const ParamStore<Real>& params, const ResNetConfig& net, const UnrollConfig& cfg) {
  ad::Tape<Real> tape;
  const auto bound = params.bind(tape, false);
  return ad::ssdu_loss(tape, y, maps, theta, lambda, params, bound, net, cfg).value()[0];
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of every trainable entry; `step` counts from 1.
template <class Real>
void adam_step(ParamStore<Real>& params, const AdamConfig& cfg, std::size_t step) {
  if (step < 1) throw UsageError("adam step index starts at 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const auto b1 = static_cast<Real>(cfg.beta1), b2 = static_cast<Real>(cfg.beta2);
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const Real g = e.grad[i];
      e.adam_m[i] = b1 * e.adam_m[i] + (Real(1) - b1) * g;
      e.adam_v[i] = b2 * e.adam_v[i] + (Real(1) - b2) * g * g;
      const double m_hat = e.adam_m[i] / bc1, v_hat = e.adam_v[i] / bc2;
      e.value[i] -= static_cast<Real>(cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

enum class Precision { float32, float64 };

inline const char* precision_name(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "float32") return Precision::float32;
  if (s == "float64") return Precision::float64;
  throw UsageError("unknown precision '" + s + "' (expected float32|float64)");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t n_epochs = 100;
  std::size_t batch_size = 1;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_epsilon = 1e-8;
  Precision precision = Precision::float32;
  TrainMode mode = TrainMode::ssdu;
  PartitionPolicy partition{};
  UnrollConfig unroll{};
  ResNetConfig resnet{};
  std::uint64_t seed = 0;
  bool shuffle = true;

  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_epsilon}; }

  void validate() const {
    if (!(learning_rate >= 0)) throw UsageError("learning_rate must be nonnegative");
    if (batch_size != 1) throw UsageError("batch_size must be 1");
    partition.validate();
    unroll.validate();
    resnet.validate();
  }
};

/// One training example. kspace holds the undersampled acquisition (its
/// acquired_mask is omega); kspace_full is only consulted by supervised modes.
template <class Real>
struct TrainingSlice {
  KSpaceVolume<Real> kspace;
  CoilMaps<Real> maps;
  std::optional<ComplexTensor<Real>> kspace_full;
};

struct EpochRecord {
  std::size_t epoch;
  double mean_train_loss;
  double val_loss;
};

template <class Real>
struct TrainResult {
  ParamStore<Real> params;
  std::vector<EpochRecord> history;
  std::vector<Partition> partitions;  // per training slice, fixed for the run
};

/// Scales data (and the fully sampled reference) so that the acquired data
/// has maximum modulus 1; the factor is folded into `scale`.
template <class Real>
TrainingSlice<Real> normalize_slice(TrainingSlice<Real> s) {
  const double m = max_abs(s.kspace.data);
  if (m > 0) {
    const Real inv = static_cast<Real>(1.0 / m);
    for (auto& v : s.kspace.data.data()) v *= inv;
    if (s.kspace_full)
      for (auto& v : s.kspace_full->data()) v *= inv;
    s.kspace.scale *= m;
  }
  return s;
}

/// Partition of slice `index` under a policy; seeds are base + index.
inline Partition slice_partition(const SamplingMask& omega, const PartitionPolicy& policy, std::size_t index,
                                 const std::string& slice_id) {
  try {
    auto p = partition_mask(omega, policy, policy.per_slice_seed_base + index);
    if (p.lambda.empty()) throw DegenerateError("loss set lambda is empty");
    return p;
  } catch (const Error& e) {
    throw PolicyError("slice " + slice_id + ": " + e.what());
  }
}

template <class Real>
using EpochCallback = std::function<void(const EpochRecord&)>;

template <class Real>
TrainResult<Real> train(const std::vector<TrainingSlice<Real>>& train_set, const std::vector<TrainingSlice<Real>>& val_set,
                        const TrainConfig& cfg, const EpochCallback<Real>& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw UsageError("training set is empty");

  std::vector<TrainingSlice<Real>> data, val;
  for (const auto& s : train_set) {
    auto n = normalize_slice(s);
    if (cfg.mode == TrainMode::ssdu) n.kspace_full.reset();
    data.push_back(std::move(n));
  }
  for (const auto& s : val_set) {
    auto n = normalize_slice(s);
    n.kspace_full.reset();
    val.push_back(std::move(n));
  }

  TrainResult<Real> result;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (cfg.mode == TrainMode::ssdu)
      result.partitions.push_back(slice_partition(data[i].kspace.acquired_mask, cfg.partition, i, data[i].kspace.slice_id));
    else
      result.partitions.push_back({data[i].kspace.acquired_mask, {}});
  }
  std::vector<Partition> val_partitions;
  for (std::size_t j = 0; j < val.size(); ++j)
    val_partitions.push_back(
        slice_partition(val[j].kspace.acquired_mask, cfg.partition, data.size() + j, val[j].kspace.slice_id));

  result.params = init_params<Real>(cfg.resnet, cfg.unroll, cfg.seed);
  auto& params = result.params;
  const auto adam = cfg.adam();
  std::mt19937_64 order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.n_epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0.0;
    for (std::size_t idx : order) {
      const auto& s = data[idx];
      ad::Tape<Real> tape;
      const auto bound = params.bind(tape);
      const SamplingMask full = SamplingMask::full(s.kspace.acquired_mask.rows(), s.kspace.acquired_mask.cols());
      const auto loss = cfg.mode == TrainMode::ssdu
                            ? ad::ssdu_loss(tape, s.kspace, s.maps, result.partitions[idx].theta,
                                            result.partitions[idx].lambda, params, bound, cfg.resnet, cfg.unroll)
                            : ad::supervised_loss(tape, s.kspace, s.kspace_full ? &*s.kspace_full : nullptr, s.maps,
                                                  cfg.mode, params, bound, cfg.resnet, cfg.unroll, full);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv))
        throw Error("non-finite loss on slice " + s.kspace.slice_id + " in epoch " + std::to_string(epoch));
      params.zero_grad();
      backward(loss, params, bound);
      adam_step(params, adam, ++step);
      total += lv;
    }
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    if (!val.empty()) {
      double acc = 0.0;
      for (std::size_t j = 0; j < val.size(); ++j)
        acc += ssdu_loss(val[j].kspace, val[j].maps, val_partitions[j].theta, val_partitions[j].lambda, params,
                         cfg.resnet, cfg.unroll);
      val_loss = acc / static_cast<double>(val.size());
    }
    EpochRecord rec{epoch, total / static_cast<double>(data.size()), val_loss};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace ssdu
