#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "model.hpp"
#include "posterior.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace sebm {

// Per-path sufficient statistics of the coefficient likelihood, scaled by the
// path length: solving fisher * theta = rhs gives the MLE.
struct SufficientStats {
  Mat3 fisher = Mat3::Zero();
  Vec3 rhs = Vec3::Zero();
  Index n_steps = 0;
};

inline SufficientStats sufficient_stats(const Mat& states, const FemOperators& ops,
                                        const NoiseModel& noise, double u_init = 1.0) {
  if (states.rows() < 1) throw std::invalid_argument("need at least one state");
  SufficientStats stats;
  stats.n_steps = states.rows();
  Vec prev = initial_state(ops, u_init);
  Mat basis(ops.n_vertices(), 3);
  for (Index n = 0; n < states.rows(); ++n) {
    const auto g = g_basis(prev, ops);
    basis.col(0) = g[0];
    basis.col(1) = g[1];
    basis.col(2) = g[2];
    const Mat whitened = noise.cov_solve(basis);
    const Vec resid = Vec(states.row(n).transpose()) - ops.timestep_solve(Vec(ops.mass * prev));
    stats.fisher += basis.transpose() * whitened;
    stats.rhs += whitened.transpose() * resid;
    prev = states.row(n);
  }
  const double scale = 1.0 / static_cast<double>(stats.n_steps);
  stats.fisher *= scale;
  stats.rhs *= scale;
  stats.fisher = 0.5 * (stats.fisher + stats.fisher.transpose()).eval();
  return stats;
}

inline SufficientStats sufficient_stats(const Trajectory& traj, const FemOperators& ops,
                                        const NoiseModel& noise, double u_init = 1.0) {
  return sufficient_stats(traj.states, ops, noise, u_init);
}

inline double condition_number(const Mat3& m) {
  if (m.isZero(0.0)) throw std::invalid_argument("condition number of zero matrix");
  const Eigen::JacobiSVD<Mat3> svd(m);
  const auto& sv = svd.singularValues();
  return sv[0] / sv[2];
}

inline ThetaParams mle(const SufficientStats& stats) {
  if (condition_number(stats.fisher) > 1e15)
    throw std::runtime_error("Fisher matrix numerically singular");
  const Eigen::JacobiSVD<Mat3> svd(stats.fisher, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return ThetaParams::from_vec(svd.solve(stats.rhs));
}

namespace detail {

// Gibbs pass over one coordinate of a Gaussian in natural parameterization
// (precision lambda, linear term eta), truncated to a box. Handles the
// flat-precision coordinate by falling back to the exponential-linear draw.
inline void box_gibbs_sweep(Vec3& theta, const Mat3& lambda, const Vec3& eta, const Vec3& lo,
                            const Vec3& hi, RngStream& rng) {
  for (int k = 0; k < 3; ++k) {
    double lin = eta[k];
    for (int j = 0; j < 3; ++j)
      if (j != k) lin -= lambda(k, j) * theta[j];
    const double width = hi[k] - lo[k];
    if (lambda(k, k) * width * width > 1e-12) {
      const double sd = 1.0 / std::sqrt(lambda(k, k));
      theta[k] = truncated_normal(rng, lo[k], hi[k], lin / lambda(k, k), sd);
    } else {
      const double center = 0.5 * (lo[k] + hi[k]);
      theta[k] = truncated_exponential_linear(rng, lo[k], hi[k], lin - lambda(k, k) * center);
    }
  }
}

} // namespace detail

// Draw from the coefficient conditional: prior times the tempered path
// likelihood, which is Gaussian with precision fisher and linear term rhs.
// Gaussian prior: exact conjugate draw. Uniform prior: rejection from the
// untruncated Gaussian, then a boxed Gibbs fallback seeded at `init`.
inline ThetaParams sample_theta_conditional(const SufficientStats& stats, const ParamPrior& prior,
                                            RngStream& rng, const ThetaParams* init = nullptr) {
  if (!stats.fisher.allFinite() || !stats.rhs.allFinite())
    throw std::invalid_argument("non-finite sufficient statistics");

  if (prior.kind == ParamPrior::Kind::gaussian) {
    const Vec3 prior_prec = prior.sd.cwiseProduct(prior.sd).cwiseInverse();
    const Mat3 lambda = stats.fisher + Mat3(prior_prec.asDiagonal());
    const Vec3 eta = stats.rhs + prior_prec.cwiseProduct(prior.mean);
    const Eigen::LLT<Mat3> llt(lambda);
    if (llt.info() != Eigen::Success) throw std::runtime_error("degenerate combined precision");
    const Vec3 mean = llt.solve(eta);
    Vec3 z;
    for (int k = 0; k < 3; ++k) z[k] = rng.normal();
    const Vec3 draw = mean + Mat3(llt.matrixL()).transpose().triangularView<Eigen::Upper>().solve(z);
    return ThetaParams::from_vec(draw);
  }

  // uniform prior
  const Eigen::LLT<Mat3> llt(stats.fisher);
  if (llt.info() == Eigen::Success) {
    const Vec3 mean = llt.solve(stats.rhs);
    const Mat3 upper = Mat3(llt.matrixL()).transpose();
    for (int attempt = 0; attempt < 1000; ++attempt) {
      Vec3 z;
      for (int k = 0; k < 3; ++k) z[k] = rng.normal();
      const Vec3 draw = mean + upper.triangularView<Eigen::Upper>().solve(z);
      if (prior.in_box(draw)) return ThetaParams::from_vec(draw);
    }
  }

  Vec3 theta = init ? init->as_vec() : Vec3(0.5 * (prior.lo + prior.hi));
  theta = theta.cwiseMax(prior.lo).cwiseMin(prior.hi);
  for (int sweep = 0; sweep < 30; ++sweep)
    detail::box_gibbs_sweep(theta, stats.fisher, stats.rhs, prior.lo, prior.hi, rng);
  return ThetaParams::from_vec(theta);
}

} // namespace sebm
