#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace ssdu;
using namespace ssdu::testing;

namespace {

ResNetConfig tiny_net() {
  ResNetConfig c;
  c.n_res_blocks = 2;
  c.n_channels = 8;
  return c;
}

UnrollConfig tiny_unroll(std::size_t T = 2) {
  UnrollConfig u;
  u.n_unrolls = T;
  return u;
}

/// Small random problem with data on a random pattern.
struct Problem {
  CoilMaps<double> maps;
  KSpaceVolume<double> y;
};

Problem make_problem(std::size_t nc, std::size_t n, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto maps = random_maps(nc, n, n, rng);
  auto mask = random_mask(n, n, p, rng);
  const auto x = random_complex({n, n}, rng);
  auto k = apply_E(x, maps, mask);
  const double m = max_abs(k);
  return {std::move(maps), volume((1.0 / m) * k, mask)};
}

void zero_weight(ParamStore<double>& p, const std::string& name) { p.value(name).fill(0.0); }

CT resnet_eval(const CT& x, const ParamStore<double>& p, const ResNetConfig& cfg) {
  ad::Tape<double> tape;
  const auto b = p.bind(tape, false);
  return ad::resnet_forward(tape.constant(x), p, b, cfg).value();
}

}  // namespace

TEST(ResNet, ZeroInputWithZeroOutputConvGivesZero) {
  auto p = init_params<double>(tiny_net(), tiny_unroll(), 1);
  zero_weight(p, "conv_out.weight");
  EXPECT_EQ(max_abs(resnet_eval(CT({12, 12}), p, tiny_net())), 0.0);
}

TEST(ResNet, ZeroInputZeroBiasesGivesZero) {
  const auto p = init_params<double>(tiny_net(), tiny_unroll(), 2);
  EXPECT_EQ(max_abs(resnet_eval(CT({12, 12}), p, tiny_net())), 0.0);
}

TEST(ResNet, ShapePreserved) {
  const auto p = init_params<double>(tiny_net(), tiny_unroll(), 3);
  std::mt19937_64 rng(3);
  for (auto [h, w] : {std::pair{5, 9}, std::pair{16, 16}, std::pair{1, 7}}) {
    const auto out = resnet_eval(random_complex({std::size_t(h), std::size_t(w)}, rng), p, tiny_net());
    EXPECT_EQ(out.shape(), (Shape{std::size_t(h), std::size_t(w)}));
  }
}

TEST(ResNet, ZeroKernelBlocksAreIdentity) {
  // With every residual-block kernel zero the network reduces to conv_out(conv_in(x)).
  auto p = init_params<double>(tiny_net(), tiny_unroll(), 4);
  for (std::size_t b = 0; b < 2; ++b)
    for (int j = 1; j <= 2; ++j) zero_weight(p, "rb" + std::to_string(b) + ".conv" + std::to_string(j) + ".weight");
  std::mt19937_64 rng(4);
  const auto x = random_complex({10, 10}, rng);
  RT ch({2, 10, 10});
  for (std::size_t i = 0; i < 100; ++i) {
    ch[i] = x[i].real();
    ch[100 + i] = x[i].imag();
  }
  const auto h = conv2d(ch, p.value("conv_in.weight"), &p.value("conv_in.bias"));
  const auto o = conv2d(h, p.value("conv_out.weight"), &p.value("conv_out.bias"));
  CT expect({10, 10});
  for (std::size_t i = 0; i < 100; ++i) expect[i] = {o[i], o[100 + i]};
  EXPECT_LT(max_abs_diff(resnet_eval(x, p, tiny_net()), expect), 1e-14);
}

TEST(ResNet, ParameterCounts) {
  ResNetConfig desk;
  EXPECT_EQ(parameter_count(desk), init_params<double>(desk, UnrollConfig{}, 0).parameter_count());
  EXPECT_EQ(parameter_count(tiny_net()), init_params<double>(tiny_net(), UnrollConfig{}, 0).parameter_count());
  // Reference design: 15 blocks of 64 channels, biases on the outer convolutions.
  const auto ref = reference_scale_resnet();
  const std::size_t by_hand = (2 * 64 * 9 + 64) + 15 * 2 * (64 * 64 * 9) + (64 * 2 * 9 + 2) + 1;
  EXPECT_EQ(parameter_count(ref), by_hand);
  EXPECT_EQ(parameter_count(ref), 1108291u);
  EXPECT_NE(parameter_count(ref), kReferenceParameterCount);
  // The quoted count is what 8 bias-free blocks give.
  ResNetConfig eight = ref;
  eight.n_res_blocks = 8;
  eight.io_bias = false;
  EXPECT_EQ(parameter_count(eight), kReferenceParameterCount);
}

TEST(Unrolled, SingleStepPureDataConsistency) {
  // T = 1 with a silenced regularizer and tiny mu returns the inverse FFT of y.
  std::mt19937_64 rng(5);
  CoilMaps<double> maps{CT({1, 8, 8})};
  maps.maps.fill(1.0);
  const auto k = random_complex({1, 8, 8}, rng);
  const auto full = SamplingMask::full(8, 8);
  const auto y = volume(k, full);
  auto unroll = tiny_unroll(1);
  unroll.dc.mu = 1e-9;
  auto p = init_params<double>(tiny_net(), unroll, 5);
  zero_weight(p, "conv_out.weight");
  const auto x = reconstruct(y, maps, full, p, tiny_net(), unroll);
  EXPECT_LT(rel_diff(x, ifft2_centered(k.reshaped({8, 8}))), 1e-8);
}

TEST(Unrolled, DcMaskOutsideAcquisitionThrows) {
  const auto pr = make_problem(2, 8, 0.3, 6);
  const auto p = init_params<double>(tiny_net(), tiny_unroll(), 6);
  EXPECT_THROW(reconstruct(pr.y, pr.maps, SamplingMask::full(8, 8), p, tiny_net(), tiny_unroll()), ConsistencyError);
}

TEST(Unrolled, LogMuGradientMatchesFiniteDifferences) {
  const auto pr = make_problem(2, 12, 0.4, 7);
  const auto net = tiny_net();
  const auto unroll = tiny_unroll(2);
  auto p = init_params<double>(net, unroll, 7);
  std::mt19937_64 rng(70);
  const auto v = random_complex({12, 12}, rng);
  auto f = [&](const ParamStore<double>& s) { return real_dot(v, reconstruct(pr.y, pr.maps, pr.y.acquired_mask, s, net, unroll)); };
  ad::Tape<double> tape;
  const auto b = p.bind(tape);
  auto loss = ad::dot(tape.constant(v), ad::unrolled_forward(tape, pr.y, pr.maps, pr.y.acquired_mask, p, b, net, unroll));
  p.zero_grad();
  backward(loss, p, b);
  const double an = p.at("log_mu").grad[0];
  const double h = 1e-6, mu0 = p.value("log_mu")[0];
  p.value("log_mu")[0] = mu0 + h;
  const double fp = f(p);
  p.value("log_mu")[0] = mu0 - h;
  const double fm = f(p);
  EXPECT_LT(rel_err(an, (fp - fm) / (2 * h)), 1e-4);
}

TEST(Unrolled, FullFiniteDifferenceSweepOfSsduLoss) {
  const auto pr = make_problem(2, 16, 0.5, 8);
  const auto net = tiny_net();
  const auto unroll = tiny_unroll(2);
  auto p = init_params<double>(net, unroll, 8);
  // nonzero biases so their gradients are exercised away from the init point
  std::mt19937_64 rng(80);
  for (const char* n : {"conv_in.bias", "conv_out.bias"}) p.value(n) = random_real(p.value(n).shape(), rng, -0.05, 0.05);
  PartitionPolicy pol;
  const auto part = partition_mask(pr.y.acquired_mask, pol, 81);
  auto loss = [&](const ParamStore<double>& s) { return ssdu_loss(pr.y, pr.maps, part.theta, part.lambda, s, net, unroll); };
  auto grad = [&](ParamStore<double>& s) {
    ad::Tape<double> tape;
    const auto b = s.bind(tape);
    backward(ad::ssdu_loss(tape, pr.y, pr.maps, part.theta, part.lambda, s, b, net, unroll), s, b);
  };
  const auto rep = finite_difference_sweep(p, loss, grad);
  EXPECT_EQ(rep.n_checked, parameter_count(net));
  EXPECT_LT(rep.worst_rel, 1e-5) << rep.worst_name;
}

TEST(Unrolled, WeightsSharedAcrossSteps) {
  const auto pr = make_problem(2, 12, 0.4, 9);
  const auto net = tiny_net();
  auto p = init_params<double>(net, tiny_unroll(3), 9);
  // Record one forward pass; every unroll step must read the same leaf.
  ad::Tape<double> tape;
  const auto b = p.bind(tape);
  ad::unrolled_forward(tape, pr.y, pr.maps, pr.y.acquired_mask, p, b, net, tiny_unroll(3));
  std::size_t uses = 0;
  for (const auto& node : tape.nodes())
    for (auto in : node.inputs) uses += in == b["rb0.conv1.weight"].id();
  EXPECT_EQ(uses, 3u);
  // Perturbing one kernel changes the output of every truncation depth.
  for (std::size_t T = 1; T <= 3; ++T) {
    const auto base = reconstruct(pr.y, pr.maps, pr.y.acquired_mask, p, net, tiny_unroll(T));
    auto q = p;
    q.value("rb1.conv2.weight")[0] += 0.1;
    EXPECT_GT(max_abs_diff(reconstruct(pr.y, pr.maps, pr.y.acquired_mask, q, net, tiny_unroll(T)), base), 0.0);
  }
}

TEST(Unrolled, Deterministic) {
  const auto pr = make_problem(3, 16, 0.3, 10);
  const auto p = init_params<double>(tiny_net(), tiny_unroll(), 10);
  const auto a = reconstruct(pr.y, pr.maps, pr.y.acquired_mask, p, tiny_net(), tiny_unroll());
  const auto b = reconstruct(pr.y, pr.maps, pr.y.acquired_mask, p, tiny_net(), tiny_unroll());
  EXPECT_EQ(a, b);
  EXPECT_EQ(init_params<double>(tiny_net(), tiny_unroll(), 10).value("rb0.conv1.weight"), p.value("rb0.conv1.weight"));
}

TEST(Unrolled, SmallMuEnforcesDataConsistency) {
  // Well-conditioned instance: 8 coils on a 16x16 grid, half the samples.
  const auto pr = make_problem(8, 16, 0.5, 11);
  auto unroll = tiny_unroll(2);
  unroll.dc.mu = 1e-6;
  unroll.dc.n_cg_iterations = 30;
  const auto p = init_params<double>(tiny_net(), unroll, 11);
  const auto x = reconstruct(pr.y, pr.maps, pr.y.acquired_mask, p, tiny_net(), unroll);
  EXPECT_LT(rel_diff(apply_E(x, pr.maps, pr.y.acquired_mask), pr.y.data), 1e-3);
}
