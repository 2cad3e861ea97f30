#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace ssdu;
using namespace ssdu::testing;

namespace {

CoilMaps<double> unit_maps(std::size_t h, std::size_t w) {
  CoilMaps<double> m{CT({1, h, w})};
  m.maps.fill(1.0);
  return m;
}

cd inner_full(const CT& a, const CT& b) { return inner(a, b); }

}  // namespace

TEST(ApplyE, ZeroImageGivesZeroKspace) {
  std::mt19937_64 rng(1);
  const auto maps = random_maps(3, 8, 8, rng);
  const auto k = apply_E(CT({8, 8}), maps, random_mask(8, 8, 0.5, rng));
  EXPECT_EQ(max_abs(k), 0.0);
}

TEST(ApplyE, IdentitySensitivitiesFullMaskIsFFT) {
  std::mt19937_64 rng(2);
  const auto x = random_complex({8, 6}, rng);
  const auto k = apply_E(x, unit_maps(8, 6), SamplingMask::full(8, 6));
  const auto f = fft2_centered(x);
  EXPECT_LT(max_abs_diff(k.reshaped({8, 6}), f), 1e-14);
}

TEST(ApplyE, MatchesDenseMatrixOracle) {
  std::mt19937_64 rng(3);
  const std::size_t H = 4, W = 4, nc = 2;
  const auto maps = random_maps(nc, H, W, rng);
  const auto mask = random_mask(H, W, 0.6, rng);
  // Oracle: A = blockdiag(M) * blockdiag(F) * [S_1; S_2], built from the direct DFT.
  auto oracle_apply = [&](const CT& x) {
    CT out({nc, H, W});
    for (std::size_t c = 0; c < nc; ++c) {
      CT coil({H, W});
      for (std::size_t i = 0; i < H * W; ++i) coil[i] = maps.maps[c * H * W + i] * x[i];
      const auto k = naive_fft2c(coil);
      for (std::size_t i = 0; i < H * W; ++i) out[c * H * W + i] = mask.test(i) ? k[i] : cd{};
    }
    return out;
  };
  const auto A = dense_matrix(oracle_apply, H * W, {H, W});
  for (int trial = 0; trial < 3; ++trial) {
    const auto x = random_complex({H, W}, rng);
    const auto k = apply_E(x, maps, mask);
    double err = 0;
    for (std::size_t i = 0; i < nc * H * W; ++i) {
      cd acc = 0;
      for (std::size_t j = 0; j < H * W; ++j) acc += A[j][i] * x[j];
      err = std::max(err, std::abs(acc - k[i]));
    }
    EXPECT_LT(err, 1e-12);
  }
  // Adjoint against the conjugate transpose of the same matrix.
  const auto y = random_complex({nc, H, W}, rng);
  const auto xh = apply_EH(y, maps, mask);
  double err = 0;
  for (std::size_t j = 0; j < H * W; ++j) {
    cd acc = 0;
    for (std::size_t i = 0; i < nc * H * W; ++i) acc += std::conj(A[j][i]) * y[i];
    err = std::max(err, std::abs(acc - xh[j]));
  }
  EXPECT_LT(err, 1e-12);
}

TEST(ApplyE, ShapeMismatchThrows) {
  std::mt19937_64 rng(4);
  const auto maps = random_maps(2, 8, 8, rng);
  EXPECT_THROW(apply_E(CT({8, 6}), maps, SamplingMask::full(8, 8)), DimensionError);
  EXPECT_THROW(apply_E(CT({8, 8}), maps, SamplingMask::full(8, 6)), DimensionError);
  EXPECT_THROW(apply_EH(CT({3, 8, 8}), maps, SamplingMask::full(8, 8)), DimensionError);
  EXPECT_THROW(sense1_combine(CT({2, 8, 6}), maps), DimensionError);
}

TEST(ApplyEH, ZeroKspaceGivesZeroImage) {
  std::mt19937_64 rng(5);
  const auto maps = random_maps(3, 8, 8, rng);
  EXPECT_EQ(max_abs(apply_EH(CT({3, 8, 8}), maps, SamplingMask::full(8, 8))), 0.0);
}

TEST(ApplyEH, AdjointIdentityTwentyInstances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const auto maps = random_maps(8, 32, 32, rng);
    const auto mask = random_mask(32, 32, 0.3, rng);
    const auto x = random_complex({32, 32}, rng);
    const auto y = random_complex({8, 32, 32}, rng);
    const cd lhs = inner_full(apply_E(x, maps, mask), y);
    const cd rhs = inner_full(x, apply_EH(y, maps, mask));
    EXPECT_LT(std::abs(lhs - rhs) / std::abs(lhs), 1e-10) << "seed " << seed;
  }
}

TEST(OperatorProperties, Linearity) {
  std::mt19937_64 rng(6);
  const auto maps = random_maps(4, 16, 12, rng);
  const auto mask = random_mask(16, 12, 0.4, rng);
  const auto x1 = random_complex({16, 12}, rng), x2 = random_complex({16, 12}, rng);
  const cd alpha(0.7, -1.3);
  CT combo = x2;
  for (std::size_t i = 0; i < combo.size(); ++i) combo[i] += alpha * x1[i];
  auto expect = apply_E(x2, maps, mask);
  const auto e1 = apply_E(x1, maps, mask);
  for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += alpha * e1[i];
  EXPECT_LT(rel_diff(apply_E(combo, maps, mask), expect), 1e-14);
}

TEST(OperatorProperties, RestrictionComposition) {
  std::mt19937_64 rng(7);
  const auto maps = random_maps(4, 16, 16, rng);
  const auto lambda = random_mask(16, 16, 0.25, rng);
  const auto x = random_complex({16, 16}, rng);
  const auto restricted = apply_E(x, maps, lambda);
  const auto masked_full = apply_mask(apply_E(x, maps, SamplingMask::full(16, 16)), lambda);
  EXPECT_EQ(restricted, masked_full);
}

TEST(OperatorProperties, NormalOperatorHermitianPSD) {
  std::mt19937_64 rng(8);
  const auto maps = random_maps(4, 16, 16, rng);
  const auto mask = random_mask(16, 16, 0.3, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x1 = random_complex({16, 16}, rng), x2 = random_complex({16, 16}, rng);
    const cd q = inner_full(x1, apply_EHE(x1, maps, mask));
    EXPECT_GE(q.real(), 0.0);
    EXPECT_LT(std::abs(q.imag()), 1e-10 * std::abs(q));
    const cd a = inner_full(x2, apply_EHE(x1, maps, mask));
    const cd b = inner_full(x1, apply_EHE(x2, maps, mask));
    EXPECT_LT(std::abs(a - std::conj(b)), 1e-10 * std::abs(a));
  }
}

TEST(Sense1, SingleUnitCoilIsIdentity) {
  std::mt19937_64 rng(9);
  const auto x = random_complex({1, 8, 8}, rng);
  EXPECT_EQ(sense1_combine(x, unit_maps(8, 8)), x.reshaped({8, 8}));
}

TEST(Sense1, UnitRssMapsInvertCoilImages) {
  std::mt19937_64 rng(10);
  const auto maps = random_maps(5, 12, 12, rng);
  const auto x = random_complex({12, 12}, rng);
  CT coil({5, 12, 12});
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t i = 0; i < 144; ++i) coil[c * 144 + i] = maps.maps[c * 144 + i] * x[i];
  EXPECT_LT(max_abs_diff(sense1_combine(coil, maps), x), 1e-14);
}

TEST(Sense1, MatchesLoopOracle) {
  std::mt19937_64 rng(11);
  const auto maps = random_maps(3, 7, 9, rng);
  const auto coil = random_complex({3, 7, 9}, rng);
  const auto out = sense1_combine(coil, maps);
  double err = 0;
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 9; ++c) {
      cd acc = 0;
      for (std::size_t k = 0; k < 3; ++k) acc += std::conj(maps.maps(k, r, c)) * coil(k, r, c);
      err = std::max(err, std::abs(acc - out(r, c)));
    }
  EXPECT_LT(err, 1e-12);
}

TEST(ZeroFilled, FullMaskSingleUnitCoilIsInverseFFT) {
  std::mt19937_64 rng(12);
  const auto k = random_complex({1, 8, 8}, rng);
  const auto y = volume(k, SamplingMask::full(8, 8));
  const auto x = zero_filled_init(y, unit_maps(8, 8), SamplingMask::full(8, 8));
  EXPECT_LT(max_abs_diff(x, ifft2_centered(k.reshaped({8, 8}))), 1e-14);
}

TEST(ZeroFilled, AcquiredMaskReproducesAdjoint) {
  std::mt19937_64 rng(13);
  const auto maps = random_maps(3, 8, 8, rng);
  const auto y = volume(random_complex({3, 8, 8}, rng), random_mask(8, 8, 0.4, rng));
  EXPECT_EQ(zero_filled_init(y, maps, y.acquired_mask), apply_EH(y.data, maps, y.acquired_mask));
}

TEST(ZeroFilled, MaskOutsideAcquisitionThrows) {
  std::mt19937_64 rng(14);
  const auto maps = random_maps(2, 8, 8, rng);
  const auto y = volume(random_complex({2, 8, 8}, rng), random_mask(8, 8, 0.3, rng));
  EXPECT_THROW(zero_filled_init(y, maps, SamplingMask::full(8, 8)), ConsistencyError);
}

TEST(ZeroFilled, AliasedAtRate4ComparedWithCgSense) {
  PhantomSpec spec;
  const auto ph = make_phantom(spec, 21);
  const auto omega = equispaced_mask(spec.rows, spec.cols, 4, 8);
  const auto y = simulate_acquisition(ph.image, ph.maps, omega, 0.0, 1);
  const auto ref = (1.0 / y.scale) * ph.image;
  const double zf = nmse(ref, zero_filled_init(y, ph.maps, omega));
  const double cg = nmse(ref, cg_sense(y, ph.maps, omega, 15, 0.0));
  EXPECT_GT(zf, cg);
}

TEST(Masks, AndOrAndSubset) {
  std::mt19937_64 rng(15);
  const auto a = random_mask(8, 8, 0.5, rng), b = random_mask(8, 8, 0.5, rng);
  const auto both = mask_and(a, b), any = mask_or(a, b);
  EXPECT_TRUE(both.subset_of(a));
  EXPECT_TRUE(both.subset_of(b));
  EXPECT_TRUE(a.subset_of(any));
  EXPECT_EQ(both.count() + any.count(), a.count() + b.count());
}
