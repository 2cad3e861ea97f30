#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "ssdu/metrics.hpp"
#include "ssdu/sim.hpp"
#include "ssdu/training.hpp"

namespace ssdu {

/// One evaluation result: a method applied to one test slice.
struct MetricsRow {
  std::string slice_id;
  std::string method;
  std::size_t R = 0;
  double rho = 0.0;
  std::string scheme;
  std::string overlap;
  double nmse = 0.0;
  double ssim = 0.0;
  double wall_time = 0.0;  // seconds spent reconstructing this slice
  std::string ssim_params;
};

enum class PatternKind { equispaced, sheared };

inline PatternKind parse_pattern(const std::string& s) {
  if (s == "equispaced") return PatternKind::equispaced;
  if (s == "sheared") return PatternKind::sheared;
  throw UsageError("unknown sampling pattern '" + s + "' (expected equispaced|sheared)");
}

/// Synthetic study: dataset, acquisition pattern, training setup and baseline.
inline DatasetSpec experiment_dataset() {
  DatasetSpec d;
  d.phantom.noise_std = 0.01;
  return d;
}

struct ExperimentConfig {
  DatasetSpec data = experiment_dataset();
  std::uint64_t data_seed = 1;
  std::size_t n_train = 30, n_val = 2, n_test = 6;
  PatternKind pattern = PatternKind::equispaced;
  std::size_t R = 4;
  std::size_t acs_lines = 8;                 // equispaced
  std::size_t acs_rows = 32, acs_cols = 32;  // sheared
  TrainConfig train{};
  std::size_t cg_sense_iterations = 15;
  double cg_sense_l2 = 0.0;

  void validate() const {
    if (n_train < 1 || n_test < 1) throw UsageError("experiment needs training and test slices");
    if (data.n_slices < n_train + n_val + n_test)
      throw UsageError("dataset has " + std::to_string(data.n_slices) + " slices, split needs " +
                       std::to_string(n_train + n_val + n_test));
  }
};

inline SamplingMask acquisition_pattern(const ExperimentConfig& cfg, std::size_t R) {
  const auto& p = cfg.data.phantom;
  return cfg.pattern == PatternKind::equispaced ? equispaced_mask(p.rows, p.cols, R, cfg.acs_lines)
                                                : sheared_mask(p.rows, p.cols, R, cfg.acs_rows, cfg.acs_cols);
}

/// Simulated slices split into train / validation / test.
struct ExperimentData {
  std::vector<SimulatedSlice> train, val, test;
};

inline ExperimentData make_experiment_data(const ExperimentConfig& cfg) {
  cfg.validate();
  auto all = simulate_dataset(cfg.data, cfg.data_seed);
  ExperimentData d;
  std::size_t i = 0;
  for (; i < cfg.n_train; ++i) d.train.push_back(std::move(all[i]));
  for (; i < cfg.n_train + cfg.n_val; ++i) d.val.push_back(std::move(all[i]));
  for (; i < cfg.n_train + cfg.n_val + cfg.n_test; ++i) d.test.push_back(std::move(all[i]));
  return d;
}

/// Retrospective undersampling of a simulated slice. The fully sampled
/// reference is attached only when requested.
template <class Real>
TrainingSlice<Real> to_training_slice(const SimulatedSlice& s, const SamplingMask& omega, bool with_full) {
  TrainingSlice<Real> t{restrict_acquisition(s.kspace_full, omega).template cast<Real>(), s.maps.template cast<Real>(), std::nullopt};
  if (with_full) t.kspace_full = tensor_cast<std::complex<Real>>(s.kspace_full.data);
  return t;
}

template <class Real>
std::vector<TrainingSlice<Real>> to_training_slices(const std::vector<SimulatedSlice>& slices, const SamplingMask& omega,
                                                    bool with_full) {
  std::vector<TrainingSlice<Real>> out;
  for (const auto& s : slices) out.push_back(to_training_slice<Real>(s, omega, with_full));
  return out;
}

/// Tags attached to every row produced by one study variant.
struct VariantTags {
  std::string method;
  std::size_t R = 0;
  double rho = 0.0;
  std::string scheme;
  std::string overlap;
};

/// Evaluates a reconstruction function on test slices against the
/// noiseless ground truth, both expressed in normalized data units.
template <class Real>
std::vector<MetricsRow> evaluate_slices(
    const std::vector<SimulatedSlice>& test, const SamplingMask& omega, const VariantTags& tags,
    const std::function<ComplexTensor<Real>(const TrainingSlice<Real>&)>& recon) {
  std::vector<MetricsRow> rows;
  const SsimParams sp{};
  for (const auto& s : test) {
    const auto slice = normalize_slice(to_training_slice<Real>(s, omega, false));
    const auto t0 = std::chrono::steady_clock::now();
    const auto est = tensor_cast<std::complex<double>>(recon(slice));
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto ref = (1.0 / slice.kspace.scale) * s.x_true;
    rows.push_back({s.id, tags.method, tags.R, tags.rho, tags.scheme, tags.overlap, nmse(ref, est),
                    ssim(magnitude(ref), magnitude(est), sp), dt, describe(sp)});
  }
  return rows;
}

template <class Real>
std::vector<MetricsRow> evaluate_cg_sense(const ExperimentConfig& cfg, const std::vector<SimulatedSlice>& test,
                                          const SamplingMask& omega, std::size_t R) {
  return evaluate_slices<Real>(test, omega, {"cg_sense", R, 0.0, "", ""}, [&](const TrainingSlice<Real>& s) {
    return cg_sense(s.kspace, s.maps, s.kspace.acquired_mask, cfg.cg_sense_iterations, cfg.cg_sense_l2);
  });
}

template <class Real>
struct TrainedVariant {
  TrainResult<Real> result;
  std::vector<MetricsRow> rows;
};

/// Trains one configuration on the training split and evaluates on the test
/// split with data consistency on the full acquisition pattern.
template <class Real>
TrainedVariant<Real> run_variant(const ExperimentData& data, const SamplingMask& omega, const TrainConfig& train_cfg,
                                 const VariantTags& tags, const EpochCallback<Real>& on_epoch = {}) {
  const bool supervised = train_cfg.mode != TrainMode::ssdu;
  auto train_set = to_training_slices<Real>(data.train, omega, supervised);
  auto val_set = to_training_slices<Real>(data.val, omega, false);
  TrainedVariant<Real> out{train(train_set, val_set, train_cfg, on_epoch), {}};
  const auto& params = out.result.params;
  out.rows = evaluate_slices<Real>(data.test, omega, tags, [&](const TrainingSlice<Real>& s) {
    return reconstruct(s.kspace, s.maps, s.kspace.acquired_mask, params, train_cfg.resnet, train_cfg.unroll);
  });
  return out;
}

inline std::string overlap_label(const PartitionPolicy& p) {
  if (p.identical_sets) return "identical";
  return std::to_string(p.overlap_fraction).substr(0, 4);
}

inline VariantTags tags_for(const TrainConfig& cfg, std::size_t R) {
  return {mode_name(cfg.mode), R, cfg.mode == TrainMode::ssdu ? cfg.partition.rho : 0.0,
          cfg.mode == TrainMode::ssdu ? scheme_name(cfg.partition.scheme) : "",
          cfg.mode == TrainMode::ssdu ? overlap_label(cfg.partition) : ""};
}

using ProgressFn = std::function<void(const std::string& variant, const EpochRecord&)>;

template <class Real>
std::vector<MetricsRow> run_rho_sweep(const ExperimentConfig& cfg, const std::vector<double>& rhos, const ProgressFn& progress = {}) {
  const auto data = make_experiment_data(cfg);
  const auto omega = acquisition_pattern(cfg, cfg.R);
  std::vector<MetricsRow> rows;
  for (double rho : rhos) {
    TrainConfig t = cfg.train;
    t.mode = TrainMode::ssdu;
    t.partition.rho = rho;
    const std::string name = "rho=" + std::to_string(rho);
    try {
      auto v = run_variant<Real>(data, omega, t, tags_for(t, cfg.R), [&](const EpochRecord& r) { if (progress) progress(name, r); });
      rows.insert(rows.end(), v.rows.begin(), v.rows.end());
    } catch (const Error& e) {
      throw Error(name + ": " + e.what());
    }
  }
  return rows;
}

/// Overlap study; a negative entry stands for identical sets (theta = lambda = omega).
template <class Real>
std::vector<MetricsRow> run_overlap_study(const ExperimentConfig& cfg, const std::vector<double>& overlaps,
                                          const ProgressFn& progress = {}) {
  const auto data = make_experiment_data(cfg);
  const auto omega = acquisition_pattern(cfg, cfg.R);
  std::vector<MetricsRow> rows;
  for (double ov : overlaps) {
    TrainConfig t = cfg.train;
    t.mode = TrainMode::ssdu;
    t.partition.identical_sets = ov < 0;
    t.partition.overlap_fraction = ov < 0 ? 0.0 : ov;
    const std::string name = "overlap=" + overlap_label(t.partition);
    auto v = run_variant<Real>(data, omega, t, tags_for(t, cfg.R), [&](const EpochRecord& r) { if (progress) progress(name, r); });
    rows.insert(rows.end(), v.rows.begin(), v.rows.end());
  }
  return rows;
}

template <class Real>
std::vector<MetricsRow> run_scheme_comparison(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
  const auto data = make_experiment_data(cfg);
  const auto omega = acquisition_pattern(cfg, cfg.R);
  std::vector<MetricsRow> rows;
  for (auto scheme : {SelectionScheme::uniform, SelectionScheme::gaussian}) {
    TrainConfig t = cfg.train;
    t.mode = TrainMode::ssdu;
    t.partition.scheme = scheme;
    const std::string name = std::string("scheme=") + scheme_name(scheme);
    auto v = run_variant<Real>(data, omega, t, tags_for(t, cfg.R), [&](const EpochRecord& r) { if (progress) progress(name, r); });
    rows.insert(rows.end(), v.rows.begin(), v.rows.end());
  }
  return rows;
}

/// SSDU at each acceleration next to CG-SENSE at the same acceleration.
template <class Real>
std::vector<MetricsRow> run_acceleration_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& rates,
                                               const ProgressFn& progress = {}) {
  const auto data = make_experiment_data(cfg);
  std::vector<MetricsRow> rows;
  for (std::size_t R : rates) {
    const auto omega = acquisition_pattern(cfg, R);
    auto base = evaluate_cg_sense<Real>(cfg, data.test, omega, R);
    rows.insert(rows.end(), base.begin(), base.end());
    TrainConfig t = cfg.train;
    t.mode = TrainMode::ssdu;
    const std::string name = "R=" + std::to_string(R);
    auto v = run_variant<Real>(data, omega, t, tags_for(t, R), [&](const EpochRecord& r) { if (progress) progress(name, r); });
    rows.insert(rows.end(), v.rows.begin(), v.rows.end());
  }
  return rows;
}

/// SSDU, supervised (k-space and image loss) and CG-SENSE on one dataset.
template <class Real>
std::vector<MetricsRow> run_method_comparison(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
  const auto data = make_experiment_data(cfg);
  const auto omega = acquisition_pattern(cfg, cfg.R);
  auto rows = evaluate_cg_sense<Real>(cfg, data.test, omega, cfg.R);
  for (auto mode : {TrainMode::ssdu, TrainMode::supervised_kspace, TrainMode::supervised_image}) {
    TrainConfig t = cfg.train;
    t.mode = mode;
    auto v = run_variant<Real>(data, omega, t, tags_for(t, cfg.R), [&](const EpochRecord& r) { if (progress) progress(mode_name(mode), r); });
    rows.insert(rows.end(), v.rows.begin(), v.rows.end());
  }
  return rows;
}

/// Mean of a metric over rows whose method/variant predicate matches.
inline double mean_metric(const std::vector<MetricsRow>& rows, const std::function<bool(const MetricsRow&)>& pick,
                          double MetricsRow::*field) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (pick(r)) {
      s += r.*field;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace ssdu
