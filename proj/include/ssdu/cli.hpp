#pragma once

#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "ssdu/io.hpp"

namespace ssdu {

namespace cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// One simulated slice as stored by `simulate`: <id>.kspace.ksp (fully
/// sampled), <id>.maps.ksp, <id>.truth.ksp.
struct StoredSlice {
  std::string id;
  KSpaceVolume<double> kspace;
  CoilMaps<double> maps;
};

inline std::vector<std::string> dataset_ids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("dataset directory " + dir.string() + " not found");
  std::vector<std::string> ids;
  const std::string suffix = ".kspace.ksp";
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw FormatError("no *.kspace.ksp files in " + dir.string());
  return ids;
}

inline StoredSlice load_slice(const fs::path& dir, const std::string& id) {
  return {id, read_kspace<double>(dir / (id + ".kspace.ksp")), read_maps<double>(dir / (id + ".maps.ksp"))};
}

/// Slices [first, first + count) of the sorted dataset.
inline std::vector<StoredSlice> load_range(const fs::path& dir, std::size_t first, std::size_t count) {
  const auto ids = dataset_ids(dir);
  if (first + count > ids.size())
    throw FormatError("dataset " + dir.string() + " has " + std::to_string(ids.size()) + " slices, requested " +
                      std::to_string(first) + "+" + std::to_string(count));
  std::vector<StoredSlice> out;
  for (std::size_t i = first; i < first + count; ++i) out.push_back(load_slice(dir, ids[i]));
  return out;
}

template <class Real>
TrainingSlice<Real> training_slice(const StoredSlice& s, const SamplingMask& omega, bool with_full) {
  if (omega.shape() != s.maps.image_shape())
    throw DimensionError("pattern " + shape_string(omega.shape()) + " does not match slice " + s.id);
  TrainingSlice<Real> t{restrict_acquisition(s.kspace, omega).template cast<Real>(), s.maps.template cast<Real>(), std::nullopt};
  if (with_full) {
    if (s.kspace.acquired_mask.count() != s.kspace.acquired_mask.grid.size())
      throw ConsistencyError("slice " + s.id + " is not fully sampled; supervised training needs a full reference");
    t.kspace_full = tensor_cast<std::complex<Real>>(s.kspace.data);
  }
  return t;
}

/// Field flags (--<key>) collected during parsing and applied after an
/// optional --config file so that explicit flags win.
class FieldFlags {
 public:
  FieldFlags(CLI::App* app, std::vector<ConfigField> fields, const std::string& no_flag = "") : fields_(std::move(fields)) {
    for (const auto& f : fields_) {
      const std::string key = f.key;
      if (key == no_flag) continue;  // settable from --config only
      app->add_option_function<std::string>("--" + key, [this, key](const std::string& v) { given_.emplace_back(key, v); },
                                            f.help);
    }
  }
  void apply(const std::string& config_path) const {
    if (!config_path.empty()) apply_config(fields_, parse_config_text(read_text(config_path)));
    apply_config(fields_, given_);
  }
  const std::vector<ConfigField>& fields() const { return fields_; }

 private:
  std::vector<ConfigField> fields_;
  std::vector<std::pair<std::string, std::string>> given_;
};

inline std::vector<ConfigField> pick(std::vector<ConfigField> all, const std::vector<std::string>& keys) {
  std::vector<ConfigField> out;
  for (const auto& k : keys) {
    auto it = std::find_if(all.begin(), all.end(), [&](const ConfigField& f) { return f.key == k; });
    if (it == all.end()) throw std::logic_error("no config field " + k);
    out.push_back(*it);
  }
  return out;
}

// Validation failures before any data is touched are usage errors.
template <class F>
void as_usage(F&& f) {
  try {
    f();
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

inline std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto end = s.find(',', pos);
    if (end == std::string::npos) end = s.size();
    const auto item = s.substr(pos, end - pos);
    out.push_back(item == "identical" ? -1.0 : parse_double(item, what));
    pos = end + 1;
  }
  return out;
}

struct State {
  std::ostream* out;
  std::ostream* err;

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;

  // simulate
  DatasetSpec dataset = experiment_dataset();
  std::uint64_t data_seed = 1;
  std::string out_path;

  // genmask
  std::string pattern = "equispaced";
  std::size_t rows = 64, cols = 64, R = 4, acs_lines = 8, acs_rows = 32, acs_cols = 32;

  // partition
  std::string mask_path, theta_path, lambda_path;

  // train / reconstruct / eval
  TrainConfig train{};
  std::string data_dir;
  std::size_t n_train = 30, n_val = 2, first = 0, count = 0;
  std::string checkpoint_path, method = "network";
  std::size_t cg_sense_iterations = 15;
  double cg_sense_l2 = 0.0;
  std::string ref_path, est_path;
  bool no_preview = false;

  // sweep
  ExperimentConfig experiment{};
  std::string sweep_kind, values;
  bool quiet = false;
};

inline void log_epoch(std::ostream& err, const std::string& tag, const EpochRecord& r) {
  err << tag << " epoch " << r.epoch << " train_loss " << exact(r.mean_train_loss) << " val_loss " << exact(r.val_loss) << "\n";
}

inline void cmd_simulate(State& st) {
  fs::create_directories(st.out_path);
  for (std::size_t i = 0; i < st.dataset.n_slices; ++i) {
    const auto s = simulate_slice(st.dataset.phantom, i, st.data_seed, st.dataset.jitter);
    const Metadata seeds{{"data_seed", std::to_string(st.data_seed)}, {"slice_index", std::to_string(i)},
                         {"noise_std", exact(st.dataset.phantom.noise_std)}};
    const fs::path dir = st.out_path;
    write_kspace(dir / (s.id + ".kspace.ksp"), s.kspace_full, seeds);
    write_maps(dir / (s.id + ".maps.ksp"), s.maps, {{"slice_id", s.id}});
    write_image(dir / (s.id + ".truth.ksp"), s.x_true, {{"slice_id", s.id}, {"method", "truth"}});
  }
  auto spec = st.dataset;
  auto seed = st.data_seed;
  write_text(fs::path(st.out_path) / "dataset.cfg", format_config(dataset_fields(spec, seed)));
  *st.out << "wrote " << st.dataset.n_slices << " slices to " << st.out_path << "\n";
}

inline void cmd_genmask(State& st) {
  SamplingMask m;
  as_usage([&] {
    if (st.R < 1) throw UsageError("R must be >= 1");
    const auto kind = parse_pattern(st.pattern);
    m = kind == PatternKind::equispaced ? equispaced_mask(st.rows, st.cols, st.R, st.acs_lines)
                                        : sheared_mask(st.rows, st.cols, st.R, st.acs_rows, st.acs_cols);
  });
  m.descriptor = st.pattern + " R=" + std::to_string(st.R);
  write_mask(st.out_path, m, {{"R", std::to_string(st.R)}, {"seed", std::to_string(st.seed)}});
  *st.out << "omega " << m.count() << "/" << m.grid.size() << " samples, effective R "
          << exact(static_cast<double>(m.grid.size()) / static_cast<double>(m.count())) << "\n";
}

inline void cmd_partition(State& st) {
  as_usage([&] { st.train.partition.validate(); });
  const auto omega = read_mask(st.mask_path);
  const auto p = partition_mask(omega, st.train.partition, st.seed);
  const Metadata meta{{"seed", std::to_string(st.seed)}, {"rho", exact(st.train.partition.rho)}};
  if (!st.theta_path.empty()) write_mask(st.theta_path, p.theta, meta);
  write_mask(st.lambda_path, p.lambda, meta);
  *st.out << "theta " << p.theta.count() << " lambda " << p.lambda.count() << " of omega " << omega.count() << "\n";
}

template <class Real>
void train_with(State& st, const SamplingMask& omega) {
  const bool supervised = st.train.mode != TrainMode::ssdu;
  const auto stored = load_range(st.data_dir, 0, st.n_train + st.n_val);
  std::vector<TrainingSlice<Real>> train_set, val_set;
  for (std::size_t i = 0; i < stored.size(); ++i) {
    if (i < st.n_train) train_set.push_back(training_slice<Real>(stored[i], omega, supervised));
    else val_set.push_back(training_slice<Real>(stored[i], omega, false));
  }
  const auto result = train(train_set, val_set, st.train, [&](const EpochRecord& r) {
    if (!st.quiet) log_epoch(*st.err, mode_name(st.train.mode), r);
  });
  const fs::path dir = st.out_path;
  save_checkpoint(dir / "checkpoint.ckpt", st.train, result.params);
  write_text(dir / "loss_history.csv", loss_history_csv(result.history));
  write_text(dir / "train.cfg", format_train_config(st.train));
  for (std::size_t i = 0; i < result.partitions.size() && st.train.mode == TrainMode::ssdu; ++i) {
    const auto& id = stored[i].id;
    write_mask(dir / "partitions" / (id + ".theta.ksp"), result.partitions[i].theta);
    write_mask(dir / "partitions" / (id + ".lambda.ksp"), result.partitions[i].lambda);
  }
  *st.out << "trained " << result.history.size() << " epochs; checkpoint " << (dir / "checkpoint.ckpt").string() << "\n";
}

inline void cmd_train(State& st) {
  as_usage([&] {
    st.train.validate();
    if (st.n_train < 1) throw UsageError("n_train must be >= 1");
  });
  const auto omega = read_mask(st.mask_path);
  fs::create_directories(st.out_path);
  if (st.train.precision == Precision::float32) train_with<float>(st, omega);
  else train_with<double>(st, omega);
}

template <class Real>
ComplexTensor<double> reconstruct_one(const State& st, const TrainingSlice<Real>& s, const ParamStore<Real>* params,
                                      const TrainConfig& cfg) {
  const auto& omega = s.kspace.acquired_mask;
  ComplexTensor<Real> x;
  if (st.method == "network") x = reconstruct(s.kspace, s.maps, omega, *params, cfg.resnet, cfg.unroll);
  else if (st.method == "cg_sense") x = cg_sense(s.kspace, s.maps, omega, st.cg_sense_iterations, st.cg_sense_l2);
  else x = zero_filled_init(s.kspace, s.maps, omega);
  return s.kspace.scale * tensor_cast<std::complex<double>>(x);
}

template <class Real>
void reconstruct_with(State& st, const SamplingMask& omega, const std::optional<Checkpoint>& ck) {
  std::optional<ParamStore<Real>> params;
  if (ck) params = checkpoint_params<Real>(*ck);
  const TrainConfig cfg = ck ? ck->config : TrainConfig{};
  const auto ids = dataset_ids(st.data_dir);
  const std::size_t count = st.count ? st.count : ids.size() - std::min(st.first, ids.size());
  const auto slices = load_range(st.data_dir, st.first, count);
  const auto mask_meta = read_container(st.mask_path).metadata;
  const auto* r_tag = find_meta(mask_meta, "R");
  const std::string R = r_tag ? *r_tag : "0";
  for (const auto& s : slices) {
    // inference uses the whole acquired pattern in data consistency
    const auto t = normalize_slice(training_slice<Real>(s, omega, false));
    const auto x = reconstruct_one<Real>(st, t, params ? &*params : nullptr, cfg);
    Metadata meta{{"slice_id", s.id}, {"method", st.method == "network" ? mode_name(cfg.mode) : st.method}, {"R", R}};
    if (st.method == "network" && cfg.mode == TrainMode::ssdu) {
      meta.emplace_back("rho", exact(cfg.partition.rho));
      meta.emplace_back("scheme", scheme_name(cfg.partition.scheme));
      meta.emplace_back("overlap", overlap_label(cfg.partition));
    }
    const fs::path dir = st.out_path;
    write_image(dir / (s.id + ".recon.ksp"), x, meta);
    if (!st.no_preview) write_text(dir / (s.id + ".recon.pgm"), pgm_preview(x));
  }
  *st.out << "reconstructed " << slices.size() << " slices with " << st.method << "\n";
}

inline void cmd_reconstruct(State& st) {
  as_usage([&] {
    if (st.method != "network" && st.method != "cg_sense" && st.method != "zero_filled")
      throw UsageError("unknown method '" + st.method + "' (expected network|cg_sense|zero_filled)");
    if (st.method == "network" && st.checkpoint_path.empty()) throw UsageError("--checkpoint is required for method network");
  });
  std::optional<Checkpoint> ck;
  if (st.method == "network") ck = load_checkpoint(st.checkpoint_path);
  const auto omega = read_mask(st.mask_path);
  fs::create_directories(st.out_path);
  if (ck && ck->dtype == DType::float32) reconstruct_with<float>(st, omega, ck);
  else reconstruct_with<double>(st, omega, ck);
}

// Image containers of a file or directory, keyed by slice id.
inline std::map<std::string, std::pair<ComplexTensor<double>, Metadata>> load_images(const fs::path& p, const std::string& suffix) {
  std::map<std::string, std::pair<ComplexTensor<double>, Metadata>> out;
  std::vector<fs::path> files;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p))
      if (e.path().filename().string().ends_with(suffix)) files.push_back(e.path());
  } else {
    files.push_back(p);
  }
  for (const auto& f : files) {
    Metadata meta;
    auto x = read_image(f, &meta);
    const auto* id = find_meta(meta, "slice_id");
    const std::string key = id ? *id : f.filename().string();
    out[key] = {std::move(x), std::move(meta)};
  }
  if (out.empty()) throw FormatError("no image containers (*" + suffix + ") under " + p.string());
  return out;
}

inline void cmd_eval(State& st) {
  const auto refs = load_images(st.ref_path, ".truth.ksp");
  const auto ests = load_images(st.est_path, ".recon.ksp");
  const bool single = !fs::is_directory(st.ref_path) && !fs::is_directory(st.est_path);
  std::vector<MetricsRow> rows;
  const SsimParams sp{};
  for (const auto& [id, est] : ests) {
    auto it = single ? refs.begin() : refs.find(id);
    if (it == refs.end()) throw ConsistencyError("no reference image for slice " + id);
    const auto& ref = it->second.first;
    const auto& meta = est.second;
    auto tag = [&](const char* k) { const auto* v = find_meta(meta, k); return v ? *v : std::string(); };
    MetricsRow r;
    r.slice_id = id;
    r.method = tag("method").empty() ? "unknown" : tag("method");
    r.R = tag("R").empty() ? 0 : parse_uint(tag("R"), "R");
    r.rho = tag("rho").empty() ? 0.0 : parse_double(tag("rho"), "rho");
    r.scheme = tag("scheme");
    r.overlap = tag("overlap");
    r.nmse = nmse(ref, est.first);
    r.ssim = ssim(magnitude(ref), magnitude(est.first), sp);
    r.wall_time = std::numeric_limits<double>::quiet_NaN();
    r.ssim_params = describe(sp);
    rows.push_back(r);
  }
  const auto csv = metrics_csv(rows);
  if (st.out_path.empty()) *st.out << csv;
  else write_text(st.out_path, csv);
  double mean_nmse = 0, mean_ssim = 0;
  for (const auto& r : rows) {
    mean_nmse += r.nmse / static_cast<double>(rows.size());
    mean_ssim += r.ssim / static_cast<double>(rows.size());
  }
  *st.err << rows.size() << " slices: mean nmse " << exact(mean_nmse) << " mean ssim " << exact(mean_ssim) << "\n";
}

template <class Real>
std::vector<MetricsRow> sweep_with(const State& st) {
  const auto& cfg = st.experiment;
  ProgressFn progress = [&](const std::string& v, const EpochRecord& r) {
    if (!st.quiet) log_epoch(*st.err, v, r);
  };
  if (st.sweep_kind == "rho") {
    std::vector<double> rhos = st.values.empty() ? std::vector<double>{} : parse_list(st.values, "rho list");
    if (rhos.empty())
      for (int i = 1; i <= 18; ++i) rhos.push_back(0.05 * i);
    return run_rho_sweep<Real>(cfg, rhos, progress);
  }
  if (st.sweep_kind == "overlap")
    return run_overlap_study<Real>(cfg, st.values.empty() ? std::vector<double>{0.0, 0.5, 1.0, -1.0} : parse_list(st.values, "overlap list"),
                                   progress);
  if (st.sweep_kind == "scheme") return run_scheme_comparison<Real>(cfg, progress);
  if (st.sweep_kind == "acceleration") {
    std::vector<std::size_t> rates;
    for (double r : st.values.empty() ? std::vector<double>{2, 4, 6, 8} : parse_list(st.values, "rate list"))
      rates.push_back(static_cast<std::size_t>(r));
    return run_acceleration_sweep<Real>(cfg, rates, progress);
  }
  return run_method_comparison<Real>(cfg, progress);
}

inline void cmd_sweep(State& st) {
  as_usage([&] {
    if (st.sweep_kind != "rho" && st.sweep_kind != "overlap" && st.sweep_kind != "scheme" && st.sweep_kind != "acceleration" &&
        st.sweep_kind != "methods")
      throw UsageError("unknown sweep '" + st.sweep_kind + "' (expected rho|overlap|scheme|acceleration|methods)");
    st.experiment.validate();
    st.experiment.train.validate();
    if (!st.values.empty()) (void)parse_list(st.values, "values");
  });
  const auto rows = st.experiment.train.precision == Precision::float32 ? sweep_with<float>(st) : sweep_with<double>(st);
  const auto csv = metrics_csv(rows);
  if (st.out_path.empty()) *st.out << csv;
  else write_text(st.out_path, csv);
}

}  // namespace cli

/// Entry point of the `ssdu` tool. Returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli;
  State st;
  st.out = &out;
  st.err = &err;
  CLI::App app{"Unrolled MRI reconstruction with self-supervised (SSDU) and supervised training", "ssdu"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<FieldFlags>> flags;

  auto common = [&](CLI::App* sub, bool with_config = true) {
    if (with_config) sub->add_option("--config", st.config_path, "key=value file; explicit flags take precedence");
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { st.seed = s; st.seed_given = true; }, "random seed");
  };

  auto* sim = app.add_subcommand("simulate", "phantom dataset to KSP files");
  common(sim);
  sim->add_option("--out", st.out_path, "output directory")->required();
  flags.push_back(std::make_unique<FieldFlags>(sim, dataset_fields(st.dataset, st.data_seed)));
  auto* sim_flags = flags.back().get();

  auto* gen = app.add_subcommand("genmask", "acquisition pattern omega");
  common(gen, false);
  gen->add_option("--out", st.out_path, "output mask file")->required();
  gen->add_option("--pattern", st.pattern, "equispaced|sheared");
  gen->add_option("--rows", st.rows);
  gen->add_option("--cols", st.cols);
  gen->add_option("--R", st.R, "acceleration");
  gen->add_option("--acs_lines", st.acs_lines, "equispaced calibration rows");
  gen->add_option("--acs_rows", st.acs_rows, "sheared calibration block rows");
  gen->add_option("--acs_cols", st.acs_cols, "sheared calibration block columns");

  const std::vector<std::string> partition_keys{"rho", "scheme", "gaussian_std_fraction", "center_keep_rows", "center_keep_cols",
                                                "overlap_fraction", "identical_sets"};
  auto* part = app.add_subcommand("partition", "split omega into theta (DC) and lambda (loss)");
  common(part);
  part->add_option("--mask", st.mask_path, "omega mask file")->required();
  part->add_option("--lambda", st.lambda_path, "output loss mask")->required();
  part->add_option("--theta", st.theta_path, "output DC mask");
  flags.push_back(std::make_unique<FieldFlags>(part, pick(config_fields(st.train), partition_keys)));
  auto* part_flags = flags.back().get();

  auto* tr = app.add_subcommand("train", "train the unrolled network");
  common(tr);
  tr->add_option("--data", st.data_dir, "dataset directory from simulate")->required();
  tr->add_option("--mask", st.mask_path, "omega mask file")->required();
  tr->add_option("--out", st.out_path, "output directory")->required();
  tr->add_option("--n_train", st.n_train, "first slices used for training");
  tr->add_option("--n_val", st.n_val, "following slices used for validation");
  tr->add_flag("--quiet", st.quiet);
  flags.push_back(std::make_unique<FieldFlags>(tr, config_fields(st.train), "seed"));
  auto* tr_flags = flags.back().get();

  auto* rec = app.add_subcommand("reconstruct", "checkpoint + k-space to images and previews");
  common(rec, false);
  rec->add_option("--data", st.data_dir, "dataset directory")->required();
  rec->add_option("--mask", st.mask_path, "omega mask file")->required();
  rec->add_option("--out", st.out_path, "output directory")->required();
  rec->add_option("--checkpoint", st.checkpoint_path);
  rec->add_option("--method", st.method, "network|cg_sense|zero_filled");
  rec->add_option("--first", st.first, "index of the first slice");
  rec->add_option("--count", st.count, "number of slices (0: to the end)");
  rec->add_option("--cg_sense_iterations", st.cg_sense_iterations);
  rec->add_option("--cg_sense_l2", st.cg_sense_l2);
  rec->add_flag("--no_preview", st.no_preview);

  auto* ev = app.add_subcommand("eval", "NMSE / SSIM table");
  common(ev, false);
  ev->add_option("--ref", st.ref_path, "reference image file or directory of *.truth.ksp")->required();
  ev->add_option("--est", st.est_path, "estimate image file or directory of *.recon.ksp")->required();
  ev->add_option("--out", st.out_path, "CSV path (default stdout)");

  auto* sw = app.add_subcommand("sweep", "train and evaluate a family of variants");
  common(sw);
  sw->add_option("kind", st.sweep_kind, "rho|overlap|scheme|acceleration|methods")->required();
  sw->add_option("--values", st.values, "comma-separated rho, overlap (or 'identical') or R values");
  sw->add_option("--out", st.out_path, "CSV path (default stdout)");
  sw->add_flag("--quiet", st.quiet);
  flags.push_back(std::make_unique<FieldFlags>(sw, config_fields(st.experiment), "seed"));
  auto* sw_flags = flags.back().get();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim) {
      sim_flags->apply(st.config_path);
      if (st.seed_given) st.data_seed = st.seed;
      cmd_simulate(st);
    } else if (*gen) {
      cmd_genmask(st);
    } else if (*part) {
      part_flags->apply(st.config_path);
      cmd_partition(st);
    } else if (*tr) {
      tr_flags->apply(st.config_path);
      if (st.seed_given) st.train.seed = st.seed;
      cmd_train(st);
    } else if (*rec) {
      cmd_reconstruct(st);
    } else if (*ev) {
      cmd_eval(st);
    } else if (*sw) {
      sw_flags->apply(st.config_path);
      if (st.seed_given) st.experiment.train.seed = st.seed;
      cmd_sweep(st);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace ssdu
