#include <gtest/gtest.h>

#include "ssdu/experiments.hpp"
#include "test_support.hpp"

using namespace ssdu;
using namespace ssdu::testing;

namespace {

SamplingMask omega_with_count(std::size_t h, std::size_t w, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> idx(h * w);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  SamplingMask m(h, w);
  for (std::size_t i = 0; i < n; ++i) m.set_index(idx[i]);
  return m;
}

bool center_in(const SamplingMask& m, std::size_t kr, std::size_t kc, const SamplingMask& omega) {
  const std::size_t r0 = m.rows() / 2 - kr / 2, c0 = m.cols() / 2 - kc / 2;
  for (std::size_t r = r0; r < r0 + kr; ++r)
    for (std::size_t c = c0; c < c0 + kc; ++c)
      if (omega(r, c) && !m(r, c)) return false;
  return true;
}

double mean_radius(const SamplingMask& m) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      if (m(r, c)) {
        s += std::hypot(static_cast<double>(r) - static_cast<double>(m.rows() / 2),
                        static_cast<double>(c) - static_cast<double>(m.cols() / 2));
        ++n;
      }
  return s / static_cast<double>(n);
}

ResNetConfig small_net() {
  ResNetConfig c;
  c.n_res_blocks = 1;
  c.n_channels = 4;
  return c;
}

UnrollConfig small_unroll() {
  UnrollConfig u;
  u.n_unrolls = 2;
  u.dc.n_cg_iterations = 4;
  return u;
}

/// A few small simulated slices with fully sampled references attached.
std::vector<TrainingSlice<double>> small_set(std::size_t n, std::size_t first = 0) {
  PhantomSpec spec;
  spec.rows = spec.cols = 16;
  spec.n_coils = 4;
  spec.noise_std = 0.01;
  const auto omega = equispaced_mask(16, 16, 2, 4);
  std::vector<TrainingSlice<double>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(to_training_slice<double>(simulate_slice(spec, first + i, 5), omega, true));
  return out;
}

TrainConfig small_train() {
  TrainConfig t;
  t.n_epochs = 2;
  t.precision = Precision::float64;
  t.resnet = small_net();
  t.unroll = small_unroll();
  t.partition.center_keep_rows = t.partition.center_keep_cols = 2;
  return t;
}

}  // namespace

TEST(Partition, DisjointCountsAndCoverage) {
  const auto omega = omega_with_count(64, 64, 1000, 1);
  PartitionPolicy pol;
  for (auto scheme : {SelectionScheme::uniform, SelectionScheme::gaussian}) {
    pol.scheme = scheme;
    const auto p = partition_mask(omega, pol, 7);
    EXPECT_EQ(p.lambda.count(), 400u);
    EXPECT_EQ(p.theta.count(), 600u);
    EXPECT_EQ(mask_and(p.theta, p.lambda).count(), 0u);
    EXPECT_EQ(mask_or(p.theta, p.lambda).grid, omega.grid);
    EXPECT_EQ(p.theta.kind, MaskKind::theta);
    EXPECT_EQ(p.lambda.kind, MaskKind::lambda);
  }
}

TEST(Partition, CenterBlockAlwaysInTheta) {
  const auto omega = equispaced_mask(64, 64, 4, 8);
  for (std::uint64_t seed = 0; seed < 50; ++seed)
    for (auto scheme : {SelectionScheme::uniform, SelectionScheme::gaussian})
      for (double ov : {0.0, 0.5}) {
        PartitionPolicy pol;
        pol.scheme = scheme;
        pol.overlap_fraction = ov;
        pol.rho = 0.05 + 0.017 * static_cast<double>(seed);
        const auto p = partition_mask(omega, pol, seed);
        EXPECT_TRUE(center_in(p.theta, 4, 4, omega));
        EXPECT_TRUE(p.theta.subset_of(omega));
        EXPECT_TRUE(p.lambda.subset_of(omega));
      }
}

TEST(Partition, RealizedOverlapWithinOneElement) {
  const auto omega = equispaced_mask(64, 64, 4, 8);
  for (double ov : {0.1, 0.25, 0.5, 0.77, 1.0}) {
    PartitionPolicy pol;
    pol.overlap_fraction = ov;
    const auto p = partition_mask(omega, pol, 3);
    const double shared = static_cast<double>(mask_and(p.theta, p.lambda).count());
    EXPECT_LE(std::abs(shared - ov * static_cast<double>(p.lambda.count())), 1.0) << ov;
    EXPECT_EQ(mask_or(p.theta, p.lambda).grid, omega.grid);
  }
}

TEST(Partition, IdenticalSetsUseWholePattern) {
  const auto omega = equispaced_mask(32, 32, 4, 4);
  PartitionPolicy pol;
  pol.identical_sets = true;
  const auto p = partition_mask(omega, pol, 1);
  EXPECT_EQ(p.theta.grid, omega.grid);
  EXPECT_EQ(p.lambda.grid, omega.grid);
}

TEST(Partition, Errors) {
  PartitionPolicy pol;
  EXPECT_THROW(partition_mask(SamplingMask(8, 8), pol, 1), PolicyError);
  // Only the 4x4 center is acquired: nothing is left to draw from.
  SamplingMask center(8, 8);
  for (std::size_t r = 2; r < 6; ++r)
    for (std::size_t c = 2; c < 6; ++c) center.set(r, c);
  EXPECT_THROW(partition_mask(center, pol, 1), PolicyError);
  pol.rho = 1.0;
  EXPECT_THROW(partition_mask(SamplingMask::full(8, 8), pol, 1), PolicyError);
  pol.rho = 0.4;
  pol.overlap_fraction = 1.5;
  EXPECT_THROW(partition_mask(SamplingMask::full(8, 8), pol, 1), PolicyError);
}

TEST(Partition, SeededAndDeterministic) {
  const auto omega = equispaced_mask(64, 64, 4, 8);
  PartitionPolicy pol;
  const auto a = partition_mask(omega, pol, 11), b = partition_mask(omega, pol, 11), c = partition_mask(omega, pol, 12);
  EXPECT_EQ(a.lambda.grid, b.lambda.grid);
  EXPECT_EQ(a.theta.grid, b.theta.grid);
  EXPECT_NE(a.lambda.grid, c.lambda.grid);
}

TEST(Partition, GaussianSelectionIsMoreCentralThanUniform) {
  const auto omega = equispaced_mask(64, 64, 4, 8);
  PartitionPolicy g, u;
  u.scheme = SelectionScheme::uniform;
  double rg = 0, ru = 0;
  const std::size_t draws = 10000;
  for (std::size_t s = 0; s < draws; ++s) {
    rg += mean_radius(partition_mask(omega, g, s).lambda);
    ru += mean_radius(partition_mask(omega, u, s).lambda);
  }
  EXPECT_LT(rg / draws, ru / draws);
}

TEST(Loss, Examples) {
  std::mt19937_64 rng(1);
  const auto u = random_complex({5, 7}, rng);
  EXPECT_EQ(normalized_l1l2_loss(u, u), 0.0);
  EXPECT_DOUBLE_EQ(normalized_l1l2_loss(u, CT({5, 7})), 2.0);
  CT a({2}), b({2});
  a[0] = 2.0;
  b[0] = 1.0;
  EXPECT_DOUBLE_EQ(normalized_l1l2_loss(a, b), 1.0);
  EXPECT_THROW(normalized_l1l2_loss(CT({3}), CT({4})), DimensionError);
  EXPECT_THROW(normalized_l1l2_loss(CT({3}), CT({3})), DegenerateError);
}

TEST(Loss, TapeValueAndGradient) {
  std::mt19937_64 rng(2);
  const auto u = random_complex({6, 6}, rng);
  const auto v0 = random_complex({6, 6}, rng);
  ad::Tape<double> tape;
  auto v = tape.variable(v0);
  auto l = ad::normalized_l1l2_loss(u, v);
  EXPECT_NEAR(l.value()[0], normalized_l1l2_loss(u, v0), 1e-14);
  tape.backward(l);
  const auto g = tape.grad<cd>(v.id());
  const double h = 1e-6;
  double err2 = 0, ref2 = 0;
  for (std::size_t i = 0; i < v0.size(); ++i)
    for (int part = 0; part < 2; ++part) {
      CT p = v0, m = v0;
      const cd step = part ? cd(0, h) : cd(h, 0);
      p[i] += step;
      m[i] -= step;
      const double fd = (normalized_l1l2_loss(u, p) - normalized_l1l2_loss(u, m)) / (2 * h);
      const double an = part ? g[i].imag() : g[i].real();
      err2 += (an - fd) * (an - fd);
      ref2 += fd * fd;
    }
  EXPECT_LT(std::sqrt(err2 / ref2), 1e-7);
}

TEST(SsduLoss, ZeroWhenOutputMatchesLossSamples) {
  // Full pattern, unit-RSS maps: E^H E = I, so a vanishing penalty makes the
  // output reproduce y exactly and the loss on lambda is ~0.
  std::mt19937_64 rng(3);
  const auto maps = random_maps(4, 16, 16, rng);
  const auto full = SamplingMask::full(16, 16);
  const auto y = volume(apply_E(random_complex({16, 16}, rng), maps, full), full);
  auto unroll = small_unroll();
  unroll.dc.mu = 1e-10;
  const auto p = init_params<double>(small_net(), unroll, 3);
  PartitionPolicy pol;
  pol.identical_sets = true;
  const auto part = partition_mask(full, pol, 0);
  EXPECT_LT(ssdu_loss(y, maps, part.theta, part.lambda, p, small_net(), unroll), 1e-8);
}

TEST(SsduLoss, IgnoresSamplesOutsideThetaAndLambda) {
  std::mt19937_64 rng(4);
  const auto maps = random_maps(3, 16, 16, rng);
  const auto omega = random_mask(16, 16, 0.6, rng);
  const auto y = volume(random_complex({3, 16, 16}, rng), omega);
  // partition a strict sub-pattern so that part of omega is unused
  const auto sub = mask_and(omega, random_mask(16, 16, 0.6, rng));
  const auto part = partition_mask(sub, PartitionPolicy{}, 9);
  const auto p = init_params<double>(small_net(), small_unroll(), 4);
  const double base = ssdu_loss(y, maps, part.theta, part.lambda, p, small_net(), small_unroll());
  auto y2 = y;
  const auto used = mask_or(part.theta, part.lambda);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 256; ++i)
      if (omega.test(i) && !used.test(i)) y2.data[c * 256 + i] = cd(5.0, -3.0);
  EXPECT_EQ(ssdu_loss(y2, maps, part.theta, part.lambda, p, small_net(), small_unroll()), base);
}

TEST(SsduLoss, EmptyLambdaAndSubsetViolation) {
  std::mt19937_64 rng(5);
  const auto maps = random_maps(2, 8, 8, rng);
  const auto omega = random_mask(8, 8, 0.5, rng);
  const auto y = volume(random_complex({2, 8, 8}, rng), omega);
  const auto p = init_params<double>(small_net(), small_unroll(), 5);
  EXPECT_THROW(ssdu_loss(y, maps, omega, SamplingMask(8, 8), p, small_net(), small_unroll()), DegenerateError);
  EXPECT_THROW(ssdu_loss(y, maps, SamplingMask::full(8, 8), omega, p, small_net(), small_unroll()), ConsistencyError);
}

TEST(SsduLoss, GradientStepDescends) {
  auto set = small_set(1);
  const auto s = normalize_slice(set[0]);
  const auto part = partition_mask(s.kspace.acquired_mask, PartitionPolicy{}, 1);
  auto p = init_params<double>(small_net(), small_unroll(), 6);
  const double l0 = ssdu_loss(s.kspace, s.maps, part.theta, part.lambda, p, small_net(), small_unroll());
  ad::Tape<double> tape;
  const auto b = p.bind(tape);
  p.zero_grad();
  backward(ad::ssdu_loss(tape, s.kspace, s.maps, part.theta, part.lambda, p, b, small_net(), small_unroll()), p, b);
  bool decreased = false;
  for (double eta = 1e-1; eta > 1e-8 && !decreased; eta *= 0.5) {
    auto q = p;
    for (auto& e : q.entries())
      for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] -= eta * e.grad[i];
    decreased = ssdu_loss(s.kspace, s.maps, part.theta, part.lambda, q, small_net(), small_unroll()) < l0;
  }
  EXPECT_TRUE(decreased);
}

TEST(SupervisedLoss, KspaceAndImageDifferOnlyInL1TermForUnitarySingleCoil) {
  std::mt19937_64 rng(7);
  CoilMaps<double> maps{CT({1, 12, 12})};
  maps.maps.fill(1.0);
  const auto y_full = random_complex({1, 12, 12}, rng);
  const auto omega = random_mask(12, 12, 0.5, rng);
  const auto y = volume(y_full, omega);
  const auto p = init_params<double>(small_net(), small_unroll(), 7);
  const auto full = SamplingMask::full(12, 12);
  auto eval = [&](TrainMode mode) {
    ad::Tape<double> tape;
    const auto b = p.bind(tape, false);
    return ad::supervised_loss(tape, y, &y_full, maps, mode, p, b, small_net(), small_unroll(), full).value()[0];
  };
  const auto x = reconstruct(y, maps, omega, p, small_net(), small_unroll());
  const auto ref = ifft2_centered(y_full.reshaped({12, 12}));
  const auto fx = fft2_centered(x);
  const auto yf = y_full.reshaped({12, 12});
  const double l1_gap = norm1(yf - fx) / norm1(yf) - norm1(ref - x) / norm1(ref);
  EXPECT_NEAR(eval(TrainMode::supervised_kspace) - eval(TrainMode::supervised_image), l1_gap, 1e-12);
}

TEST(SupervisedLoss, PerfectReconstructionGivesZero) {
  // With a full pattern and unit-RSS maps the vanishing-penalty network
  // reproduces the reference exactly.
  std::mt19937_64 rng(8);
  const auto maps = random_maps(3, 12, 12, rng);
  const auto full = SamplingMask::full(12, 12);
  const auto y_full = apply_E(random_complex({12, 12}, rng), maps, full);
  const auto y = volume(y_full, full);
  auto unroll = small_unroll();
  unroll.dc.mu = 1e-10;
  const auto p = init_params<double>(small_net(), unroll, 8);
  for (auto mode : {TrainMode::supervised_kspace, TrainMode::supervised_image}) {
    ad::Tape<double> tape;
    const auto b = p.bind(tape, false);
    EXPECT_LT(ad::supervised_loss(tape, y, &y_full, maps, mode, p, b, small_net(), unroll, full).value()[0], 1e-8);
  }
}

TEST(SupervisedLoss, MissingReferenceThrows) {
  std::mt19937_64 rng(9);
  const auto maps = random_maps(2, 8, 8, rng);
  const auto y = volume(random_complex({2, 8, 8}, rng), SamplingMask::full(8, 8));
  const auto p = init_params<double>(small_net(), small_unroll(), 9);
  ad::Tape<double> tape;
  const auto b = p.bind(tape);
  EXPECT_THROW(ad::supervised_loss(tape, y, static_cast<const CT*>(nullptr), maps, TrainMode::supervised_image, p, b, small_net(), small_unroll(),
                                   SamplingMask::full(8, 8)),
               UsageError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamStore<double> p;
  p.add("w", RT({3}, 0.5));
  const auto before = p.value("w");
  adam_step(p, AdamConfig{}, 1);
  EXPECT_EQ(p.value("w"), before);
}

TEST(Adam, FirstStepHasLearningRateMagnitude) {
  for (double g : {1e-4, 0.3, 250.0}) {
    ParamStore<double> p;
    p.add("w", RT({4}, 1.0));
    p.at("w").grad.fill(g);
    adam_step(p, AdamConfig{0.01}, 1);
    for (auto v : p.value("w").data()) EXPECT_NEAR(1.0 - v, 0.01, 1e-4) << g;
  }
}

TEST(Adam, QuadraticBowlConverges) {
  ParamStore<double> p;
  RT w({4});
  w[0] = 0.6;
  w[1] = -0.48;
  w[2] = 0.64;  // norm 1
  p.add("w", w);
  for (std::size_t t = 1; t <= 200; ++t) {
    auto& e = p.at("w");
    for (std::size_t i = 0; i < 4; ++i) e.grad[i] = 2 * e.value[i];
    adam_step(p, AdamConfig{1e-2}, t);
  }
  EXPECT_LT(norm2(p.value("w")), 1e-3);
}

TEST(Adam, FrozenEntriesUntouched) {
  ParamStore<double> p;
  p.add("w", RT({2}, 1.0), false);
  p.at("w").grad.fill(1.0);
  adam_step(p, AdamConfig{}, 1);
  EXPECT_EQ(p.value("w"), RT({2}, 1.0));
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  auto cfg = small_train();
  cfg.learning_rate = 0.0;
  cfg.n_epochs = 1;
  const auto r = train(small_set(1), {}, cfg);
  const auto init = init_params<double>(cfg.resnet, cfg.unroll, cfg.seed);
  for (std::size_t i = 0; i < init.size(); ++i) EXPECT_EQ(r.params.entries()[i].value, init.entries()[i].value);
}

TEST(Train, HistoryFiniteAndDeterministic) {
  const auto set = small_set(3), val = small_set(1, 3);
  const auto cfg = small_train();
  const auto a = train(set, val, cfg), b = train(set, val, cfg);
  ASSERT_EQ(a.history.size(), 2u);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_TRUE(std::isfinite(a.history[i].mean_train_loss));
    EXPECT_TRUE(std::isfinite(a.history[i].val_loss));
    EXPECT_EQ(a.history[i].mean_train_loss, b.history[i].mean_train_loss);
    EXPECT_EQ(a.history[i].val_loss, b.history[i].val_loss);
  }
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params.entries()[i].value, b.params.entries()[i].value);
  for (std::size_t i = 0; i < a.partitions.size(); ++i) EXPECT_EQ(a.partitions[i].lambda.grid, b.partitions[i].lambda.grid);
}

TEST(Train, PartitionsFixedPerSliceFromSeedBase) {
  const auto set = small_set(3);
  const auto cfg = small_train();
  const auto r = train(set, {}, cfg);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto p = partition_mask(set[i].kspace.acquired_mask, cfg.partition, cfg.partition.per_slice_seed_base + i);
    EXPECT_EQ(r.partitions[i].lambda.grid, p.lambda.grid);
    EXPECT_EQ(r.partitions[i].theta.grid, p.theta.grid);
  }
}

TEST(Train, SelfSupervisedNeverReadsOutsideAcquisition) {
  // Corrupt the fully sampled reference and the unacquired entries; the SSDU
  // run must not change.
  auto set = small_set(2);
  auto cfg = small_train();
  cfg.n_epochs = 1;
  const auto a = train(set, {}, cfg);
  for (auto& s : set) {
    for (auto& v : s.kspace_full->data()) v = cd(9.0, 9.0);
  }
  const auto b = train(set, {}, cfg);
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params.entries()[i].value, b.params.entries()[i].value);
  EXPECT_EQ(a.history[0].mean_train_loss, b.history[0].mean_train_loss);
}

TEST(Train, EmptyLossSetAbortsWithSliceId) {
  auto cfg = small_train();
  cfg.partition.rho = 1e-4;
  try {
    train(small_set(1), {}, cfg);
    FAIL() << "expected a policy error";
  } catch (const PolicyError& e) {
    EXPECT_NE(std::string(e.what()).find("slice_000"), std::string::npos) << e.what();
  }
}

TEST(Train, SupervisedNeedsReference) {
  auto set = small_set(1);
  set[0].kspace_full.reset();
  auto cfg = small_train();
  cfg.mode = TrainMode::supervised_kspace;
  EXPECT_THROW(train(set, {}, cfg), UsageError);
}

TEST(Train, SupervisedKspaceAndImageModesComparable) {
  ExperimentConfig cfg;
  cfg.data.phantom.rows = cfg.data.phantom.cols = 32;
  cfg.data.phantom.noise_std = 0.01;
  cfg.data.n_slices = 12;
  cfg.n_train = 8;
  cfg.n_val = 0;
  cfg.n_test = 4;
  cfg.acs_lines = 4;
  cfg.train.n_epochs = 6;
  cfg.train.precision = Precision::float64;
  const auto data = make_experiment_data(cfg);
  const auto omega = acquisition_pattern(cfg, cfg.R);
  auto run = [&](TrainMode mode) {
    auto t = cfg.train;
    t.mode = mode;
    auto v = run_variant<double>(data, omega, t, tags_for(t, cfg.R));
    return mean_metric(v.rows, [](const MetricsRow&) { return true; }, &MetricsRow::nmse);
  };
  const double k = run(TrainMode::supervised_kspace), im = run(TrainMode::supervised_image);
  EXPECT_LT(std::max(k, im), 2.0 * std::min(k, im)) << "kspace " << k << " image " << im;
}
