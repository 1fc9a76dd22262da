#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "fem.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace sebm {

// Gaussian state noise entering the integrator once per step. The forcing
// field is a Matern-type GMRF whose load-vector precision factors as
// load_prec_chol * load_prec_chol^T; cov is the resulting covariance of the
// per-step noise increment.
struct NoiseModel {
  Mat load_prec_chol; // lower triangular
  Mat cov;
  Eigen::LLT<Mat> cov_llt;
  double cov_logdet_2pi = 0.0; // log det(2*pi*cov), valid when sigma_f > 0
  double sigma_f = 0.0;
  double dt = 0.0;

  bool has_noise() const { return sigma_f > 0.0; }

  // cov^-1 * x
  Vec cov_solve(const Vec& x) const { return cov_llt.solve(x); }
  Mat cov_solve(const Mat& x) const { return cov_llt.solve(x); }
};

inline NoiseModel build_noise_model(const FemOperators& ops, double sigma_f, double dt) {
  if (!(sigma_f >= 0.0)) throw std::invalid_argument("sigma_f must be nonnegative");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");

  const Index n = ops.n_vertices();
  NoiseModel model;
  model.sigma_f = sigma_f;
  model.dt = dt;

  const Vec lump_inv = ops.mass_lumped.cwiseInverse();
  Mat prec = lump_inv.asDiagonal() * ops.matern_op * lump_inv.asDiagonal() * ops.matern_op * lump_inv.asDiagonal();
  prec = 0.5 * (prec + prec.transpose()).eval();

  Eigen::LLT<Mat> prec_llt(prec);
  if (prec_llt.info() != Eigen::Success) {
    Index bad = n - 1;
    for (Index k = 1; k <= n; ++k) {
      if (Eigen::LLT<Mat>(Mat(prec.topLeftCorner(k, k))).info() != Eigen::Success) {
        bad = k - 1;
        break;
      }
    }
    throw std::runtime_error("forcing load precision is not positive definite, pivot "
                             + std::to_string(bad));
  }
  model.load_prec_chol = prec_llt.matrixL();

  // cov = sigma_f^2 * dt * T^-1 * P^-1 * T^-1 with T the timestep operator
  const Mat eye = Mat::Identity(n, n);
  const Mat timestep_inv = ops.timestep_solve(eye);
  const Mat whitened = model.load_prec_chol.triangularView<Eigen::Lower>().solve(timestep_inv);
  model.cov = (sigma_f * sigma_f * dt) * whitened.transpose() * whitened;
  model.cov = 0.5 * (model.cov + model.cov.transpose()).eval();

  if (model.has_noise()) {
    model.cov_llt.compute(model.cov);
    if (model.cov_llt.info() != Eigen::Success)
      throw std::runtime_error("state noise covariance is not positive definite");
    const Mat lower = model.cov_llt.matrixL();
    model.cov_logdet_2pi = static_cast<double>(n) * std::log(2.0 * M_PI)
                           + 2.0 * lower.diagonal().array().log().sum();
  }
  return model;
}

// One draw of the per-step noise increment, N(0, cov).
inline Vec sample_state_noise(const NoiseModel& model, const FemOperators& ops, RngStream& rng) {
  const Index n = ops.n_vertices();
  Vec z(n);
  for (Index i = 0; i < n; ++i) z[i] = rng.normal();
  const Vec load = model.load_prec_chol.transpose().triangularView<Eigen::Upper>().solve(z);
  return std::sqrt(model.dt) * model.sigma_f * ops.timestep_solve(load);
}

} // namespace sebm
