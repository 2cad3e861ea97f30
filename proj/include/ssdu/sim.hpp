#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ssdu/operators.hpp"

namespace ssdu {

/// Ellipse in normalized coordinates [-1, 1]^2 (x along columns, y along rows).
struct Ellipse {
  double intensity;
  double semi_x, semi_y;
  double center_x, center_y;
  double angle_deg;
};

/// Modified Shepp-Logan head (Toft intensities).
inline std::vector<Ellipse> shepp_logan_ellipses() {
  return {
      {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},        {-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0},
      {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},    {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
      {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},       {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
      {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},     {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
      {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},   {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
  };
}

struct PhantomSpec {
  std::size_t rows = 64, cols = 64;
  std::vector<Ellipse> ellipses = shepp_logan_ellipses();
  double phase_amplitude = 0.6;     // radians of smooth object phase
  std::size_t n_coils = 8;
  double coil_ring_radius = 1.3;     // coil centers, in normalized coordinates
  double coil_bump_width = 0.75;     // Gaussian width of each coil profile
  double coil_phase_slope = 1.0;     // radians per unit distance along the coil axis
  double support_margin = 1.06;      // support = outer ellipse with axes scaled by this
  double noise_std = 0.0;            // per complex k-space sample

  void validate() const {
    if (rows < 1 || cols < 1) throw UsageError("phantom grid must be nonempty");
    if (n_coils < 1) throw UsageError("n_coils must be >= 1");
    if (ellipses.empty()) throw UsageError("phantom needs at least one ellipse");
    if (!(noise_std >= 0)) throw UsageError("noise_std must be nonnegative");
  }
};

struct Phantom {
  ComplexTensor<double> image;
  CoilMaps<double> maps;
  SamplingMask support;  // object support on the image grid
};

namespace detail {

inline double grid_x(std::size_t c, std::size_t cols) { return (2.0 * static_cast<double>(c) + 1.0 - static_cast<double>(cols)) / static_cast<double>(cols); }
inline double grid_y(std::size_t r, std::size_t rows) { return (2.0 * static_cast<double>(r) + 1.0 - static_cast<double>(rows)) / static_cast<double>(rows); }

inline bool inside(const Ellipse& e, double x, double y, double grow = 1.0) {
  const double t = e.angle_deg * std::numbers::pi / 180.0;
  const double dx = x - e.center_x, dy = y - e.center_y;
  const double u = dx * std::cos(t) + dy * std::sin(t);
  const double v = -dx * std::sin(t) + dy * std::cos(t);
  const double a = e.semi_x * grow, b = e.semi_y * grow;
  return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
}

}  // namespace detail

/// Rasterized ellipses times a smooth complex phase, with coil maps made of
/// Gaussian bumps on a ring, normalized to unit root-sum-of-squares on the
/// object support and zero outside it.
inline Phantom make_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t H = spec.rows, W = spec.cols, plane = H * W;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  const double p1 = coef(rng), p2 = coef(rng), p3 = coef(rng), p4 = coef(rng);

  Phantom ph;
  ph.image = ComplexTensor<double>({H, W});
  ph.support = SamplingMask(H, W);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const double x = detail::grid_x(c, W), y = detail::grid_y(r, H);
      double m = 0.0;
      for (const auto& e : spec.ellipses)
        if (detail::inside(e, x, y)) m += e.intensity;
      m = std::clamp(m, 0.0, 1.02);
      const double phi = spec.phase_amplitude * (0.5 * p1 * x + 0.5 * p2 * y + 0.25 * p3 * x * y + 0.25 * p4 * (x * x - y * y));
      ph.image(r, c) = std::polar(m, phi);
      ph.support.set(r, c, detail::inside(spec.ellipses.front(), x, y, spec.support_margin));
    }
  }

  const std::size_t nc = spec.n_coils;
  ph.maps.maps = ComplexTensor<double>({nc, H, W});
  const double ref_angle = 0.0;
  for (std::size_t k = 0; k < nc; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(nc);
    const double cx = spec.coil_ring_radius * std::cos(angle), cy = spec.coil_ring_radius * std::sin(angle);
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        const double x = detail::grid_x(c, W), y = detail::grid_y(r, H);
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const double mag = std::exp(-d2 / (2.0 * spec.coil_bump_width * spec.coil_bump_width));
        // phase relative to coil 0, so a single coil has a real map
        const double phase = spec.coil_phase_slope * ((x * std::cos(angle) + y * std::sin(angle)) -
                                                      (x * std::cos(ref_angle) + y * std::sin(ref_angle)));
        ph.maps.maps(k, r, c) = std::polar(mag, phase);
      }
    }
  }
  for (std::size_t i = 0; i < plane; ++i) {
    double rss = 0.0;
    for (std::size_t k = 0; k < nc; ++k) rss += std::norm(ph.maps.maps[k * plane + i]);
    rss = std::sqrt(rss);
    for (std::size_t k = 0; k < nc; ++k) {
      auto& v = ph.maps.maps[k * plane + i];
      v = ph.support.test(i) && rss > 0 ? v / rss : std::complex<double>{};
    }
  }
  return ph;
}

/// Per-slice variation of a base phantom: jittered ellipse geometry and
/// intensities plus a few random small features inside the head.
inline PhantomSpec jitter_phantom(const PhantomSpec& base, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PhantomSpec s = base;
  const double head_scale = 1.0 + 0.06 * u(rng);
  const double head_aspect = 1.0 + 0.05 * u(rng);
  for (std::size_t i = 0; i < s.ellipses.size(); ++i) {
    auto& e = s.ellipses[i];
    e.semi_x *= head_scale * head_aspect;
    e.semi_y *= head_scale / head_aspect;
    e.center_x *= head_scale;
    e.center_y *= head_scale;
    if (i >= 2) {
      e.center_x += 0.04 * u(rng);
      e.center_y += 0.04 * u(rng);
      e.semi_x *= 1.0 + 0.2 * u(rng);
      e.semi_y *= 1.0 + 0.2 * u(rng);
      e.angle_deg += 10.0 * u(rng);
      e.intensity *= 1.0 + 0.3 * u(rng);
    }
  }
  const int extra = 3;
  for (int k = 0; k < extra; ++k) {
    Ellipse e;
    e.center_x = 0.4 * u(rng) * head_scale;
    e.center_y = 0.55 * u(rng) * head_scale;
    e.semi_x = 0.04 + 0.05 * (0.5 + 0.5 * u(rng));
    e.semi_y = 0.04 + 0.05 * (0.5 + 0.5 * u(rng));
    e.angle_deg = 90.0 * u(rng);
    e.intensity = 0.1 + 0.1 * (0.5 + 0.5 * u(rng));
    s.ellipses.push_back(e);
  }
  return s;
}

/// y = omega * (fft2_centered(maps_c * x) + n), normalized to max modulus 1.
/// Noise is drawn for every grid entry so its value at a location does not
/// depend on the mask.
inline KSpaceVolume<double> simulate_acquisition(const ComplexTensor<double>& x_true, const CoilMaps<double>& maps,
                                                 const SamplingMask& omega, double noise_std, std::uint64_t seed,
                                                 std::string slice_id = {}) {
  auto k = apply_E(x_true, maps, SamplingMask::full(maps.rows(), maps.cols()));
  if (noise_std > 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, noise_std / std::sqrt(2.0));
    for (auto& v : k.data()) {
      const double re = n(rng);
      const double im = n(rng);
      v += std::complex<double>(re, im);
    }
  }
  k = apply_mask(std::move(k), omega);
  const double m = max_abs(k);
  const double scale = m > 0 ? m : 1.0;
  for (auto& v : k.data()) v /= scale;
  SamplingMask acquired = omega;
  acquired.kind = MaskKind::omega;
  return {std::move(k), std::move(acquired), std::move(slice_id), scale};
}

/// Restricts an acquisition to a sub-pattern, keeping its normalization.
template <class Real>
KSpaceVolume<Real> restrict_acquisition(const KSpaceVolume<Real>& y, const SamplingMask& omega) {
  if (!omega.subset_of(y.acquired_mask))
    throw ConsistencyError("slice " + y.slice_id + ": pattern selects entries that were not acquired");
  KSpaceVolume<Real> out{apply_mask(y.data, omega), omega, y.slice_id, y.scale};
  out.acquired_mask.kind = MaskKind::omega;
  return out;
}

/// Every R-th phase-encode row (the center row included) plus a centered
/// block of fully sampled ACS rows; readout fully sampled.
inline SamplingMask equispaced_mask(std::size_t rows, std::size_t cols, std::size_t R, std::size_t acs_lines) {
  if (R < 1) throw UsageError("acceleration R must be >= 1");
  if (acs_lines > rows) throw UsageError("acs_lines exceeds the number of phase-encode rows");
  SamplingMask m(rows, cols);
  const std::size_t offset = (rows / 2) % R;
  const std::size_t acs0 = rows / 2 - acs_lines / 2;
  for (std::size_t r = 0; r < rows; ++r) {
    const bool sampled = (r % R == offset) || (r >= acs0 && r < acs0 + acs_lines);
    if (sampled)
      for (std::size_t c = 0; c < cols; ++c) m.set(r, c);
  }
  m.descriptor = "equispaced R=" + std::to_string(R) + " acs=" + std::to_string(acs_lines);
  return m;
}

/// Equispaced ky-kz pattern whose row offset advances by `shift` per kz
/// column, plus a centered acs_rows x acs_cols calibration block.
inline SamplingMask sheared_mask(std::size_t rows, std::size_t cols, std::size_t R, std::size_t acs_rows = 32,
                                 std::size_t acs_cols = 32, std::size_t shift = 1) {
  if (R < 1) throw UsageError("acceleration R must be >= 1");
  SamplingMask m(rows, cols);
  acs_rows = std::min(acs_rows, rows);
  acs_cols = std::min(acs_cols, cols);
  const std::size_t r0 = rows / 2 - acs_rows / 2, c0 = cols / 2 - acs_cols / 2;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const bool lattice = (r + c * shift) % R == 0;
      const bool acs = r >= r0 && r < r0 + acs_rows && c >= c0 && c < c0 + acs_cols;
      if (lattice || acs) m.set(r, c);
    }
  }
  m.descriptor = "sheared R=" + std::to_string(R) + " acs=" + std::to_string(acs_rows) + "x" + std::to_string(acs_cols) +
                 " shift=" + std::to_string(shift);
  return m;
}

/// One simulated slice: ground truth, maps and fully sampled noisy k-space.
struct SimulatedSlice {
  std::string id;
  ComplexTensor<double> x_true;
  CoilMaps<double> maps;
  SamplingMask support;
  KSpaceVolume<double> kspace_full;  // normalized; x_true / kspace_full.scale matches its units
};

struct DatasetSpec {
  PhantomSpec phantom{};
  std::size_t n_slices = 38;
  bool jitter = true;
};

inline SimulatedSlice simulate_slice(const PhantomSpec& base, std::size_t index, std::uint64_t seed, bool jitter = true) {
  std::seed_seq seq{seed, static_cast<std::uint64_t>(index), std::uint64_t{0x55d0}};
  std::uint64_t s[3];
  {
    std::uint32_t w[6];
    seq.generate(w, w + 6);
    for (int i = 0; i < 3; ++i) s[i] = (static_cast<std::uint64_t>(w[2 * i]) << 32) | w[2 * i + 1];
  }
  const PhantomSpec spec = jitter ? jitter_phantom(base, s[0]) : base;
  auto ph = make_phantom(spec, s[1]);
  char name[32];
  std::snprintf(name, sizeof name, "slice_%03zu", index);
  auto y = simulate_acquisition(ph.image, ph.maps, SamplingMask::full(spec.rows, spec.cols), spec.noise_std, s[2], name);
  return {name, std::move(ph.image), std::move(ph.maps), std::move(ph.support), std::move(y)};
}

inline std::vector<SimulatedSlice> simulate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  std::vector<SimulatedSlice> out;
  out.reserve(spec.n_slices);
  for (std::size_t i = 0; i < spec.n_slices; ++i) out.push_back(simulate_slice(spec.phantom, i, seed, spec.jitter));
  return out;
}

}  // namespace ssdu
