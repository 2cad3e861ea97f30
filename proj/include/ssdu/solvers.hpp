#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ssdu/autodiff.hpp"
#include "ssdu/operators.hpp"

namespace ssdu {

/// Data-consistency solve of (E^H E + mu I) x = E^H y + mu z.
struct DCConfig {
  std::size_t n_cg_iterations = 10;
  double mu = 0.05;
  // Stop once ||r|| / ||rhs|| drops below this; 0 keeps the iteration count fixed.
  double residual_tol = 0.0;

  void validate() const {
    if (n_cg_iterations < 1) throw UsageError("n_cg_iterations must be >= 1");
    if (!(mu >= 0)) throw UsageError("mu must be nonnegative");
  }
};

template <class Real>
struct CgResult {
  ComplexTensor<Real> x;
  std::vector<double> residual_norms;  // ||r_k|| for k = 0..iterations
  std::size_t iterations = 0;
};

/// Conjugate gradient for a Hermitian positive (semi)definite operator.
template <class Real>
CgResult<Real> conjugate_gradient(const std::function<ComplexTensor<Real>(const ComplexTensor<Real>&)>& apply_a,
                                  const ComplexTensor<Real>& rhs, ComplexTensor<Real> x0, std::size_t max_iter,
                                  double rel_tol) {
  CgResult<Real> res;
  res.x = std::move(x0);
  auto r = rhs - apply_a(res.x);
  auto p = r;
  double rs = real_dot(r, r);
  const double rhs_norm = norm2(rhs);
  res.residual_norms.push_back(std::sqrt(rs));
  for (std::size_t k = 0; k < max_iter; ++k) {
    if (rs == 0.0 || (rhs_norm > 0 && std::sqrt(rs) / rhs_norm < rel_tol)) break;
    const auto ap = apply_a(p);
    const double pap = real_dot(p, ap);
    if (pap <= 0.0) break;
    const Real alpha = static_cast<Real>(rs / pap);
    axpy(alpha, p, res.x);
    axpy(-alpha, ap, r);
    const double rs_new = real_dot(r, r);
    const Real beta = static_cast<Real>(rs_new / rs);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
    rs = rs_new;
    res.residual_norms.push_back(std::sqrt(rs));
    ++res.iterations;
  }
  return res;
}

/// CG-SENSE: CG on (E^H E + l2_reg I) x = E^H y from x = 0, stopping after
/// n_iter steps or when the relative residual falls below 1e-9.
template <class Real>
CgResult<Real> cg_sense_solve(const KSpaceVolume<Real>& y, const CoilMaps<Real>& maps, const SamplingMask& mask,
                              std::size_t n_iter, double l2_reg) {
  if (mask.empty()) throw SolverError("cg_sense: sampling mask is empty");
  if (n_iter < 1) throw UsageError("cg_sense: n_iter must be >= 1");
  if (!(l2_reg >= 0)) throw UsageError("cg_sense: l2_reg must be nonnegative");
  if (!mask.subset_of(y.acquired_mask)) throw ConsistencyError("cg_sense: mask exceeds acquired samples of " + y.slice_id);
  const auto rhs = apply_EH(y.data, maps, mask);
  const Real reg = static_cast<Real>(l2_reg);
  auto op = [&](const ComplexTensor<Real>& v) {
    auto out = apply_EHE(v, maps, mask);
    if (reg != Real(0)) axpy(reg, v, out);
    return out;
  };
  return conjugate_gradient<Real>(op, rhs, ComplexTensor<Real>(rhs.shape()), n_iter, 1e-9);
}

template <class Real>
ComplexTensor<Real> cg_sense(const KSpaceVolume<Real>& y, const CoilMaps<Real>& maps, const SamplingMask& mask,
                             std::size_t n_iter, double l2_reg) {
  return cg_sense_solve(y, maps, mask, n_iter, l2_reg).x;
}

namespace ad {

/// Unrolled CG for the data-consistency subproblem, warm-started at z, with
/// every step recorded on the tape. `adjoint_data` is E_mask^H y.
/// The maps and mask must outlive the tape.
template <class Real>
Var<std::complex<Real>> dc_solve(const Var<std::complex<Real>>& z, const Var<std::complex<Real>>& adjoint_data,
                                 const CoilMaps<Real>& maps, const SamplingMask& mask, const Var<Real>& mu,
                                 const DCConfig& cfg) {
  cfg.validate();
  if (mu.value()[0] <= Real(0) && mask.empty())
    throw SolverError("dc_solve: singular system (mu = 0 and empty mask)");
  auto apply_a = [&](const Var<std::complex<Real>>& v) { return normal(v, maps, mask) + mu * v; };
  const auto rhs = adjoint_data + mu * z;
  const double rhs_norm = norm2(rhs.value());
  auto x = z;
  auto r = rhs - apply_a(x);
  auto p = r;
  auto rs = dot(r, r);
  for (std::size_t k = 0; k < cfg.n_cg_iterations; ++k) {
    const double rs_val = rs.value()[0];
    if (rs_val == 0.0) break;
    if (cfg.residual_tol > 0 && rhs_norm > 0 && std::sqrt(rs_val) / rhs_norm < cfg.residual_tol) break;
    const auto ap = apply_a(p);
    const auto pap = dot(p, ap);
    if (pap.value()[0] == Real(0)) break;
    const auto alpha = rs / pap;
    x = x + alpha * p;
    if (k + 1 == cfg.n_cg_iterations) break;
    r = r - alpha * ap;
    const auto rs_new = dot(r, r);
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  return x;
}

}  // namespace ad

/// Non-differentiable convenience wrapper: solves with mu = cfg.mu.
template <class Real>
ComplexTensor<Real> dc_solve(const ComplexTensor<Real>& z, const KSpaceVolume<Real>& y, const CoilMaps<Real>& maps,
                             const SamplingMask& mask, const DCConfig& cfg) {
  cfg.validate();
  if (cfg.mu == 0.0 && mask.empty()) throw SolverError("dc_solve: singular system (mu = 0 and empty mask)");
  if (!mask.subset_of(y.acquired_mask)) throw ConsistencyError("dc_solve: mask exceeds acquired samples of " + y.slice_id);
  ad::Tape<Real> tape;
  auto zv = tape.constant(z);
  auto data = tape.constant(apply_EH(y.data, maps, mask));
  auto mu = tape.constant(Tensor<Real>::scalar(static_cast<Real>(cfg.mu)));
  return ad::dc_solve(zv, data, maps, mask, mu, cfg).value();
}

}  // namespace ssdu
