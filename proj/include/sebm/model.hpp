#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "fem.hpp"
#include "forcing.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace sebm {

// Coefficients of the pointwise source term g(u) = theta0 + theta1*u + theta4*u^4.
struct ThetaParams {
  double theta0 = 0.0;
  double theta1 = 0.0;
  double theta4 = 0.0;

  Vec3 as_vec() const { return Vec3(theta0, theta1, theta4); }
  static ThetaParams from_vec(const Vec3& v) { return {v[0], v[1], v[2]}; }

  double g(double u) const { return theta0 + theta1 * u + theta4 * u * u * u * u; }
  double g_prime(double u) const { return theta1 + 4.0 * theta4 * u * u * u; }
};

struct ModelConfig {
  double nu = 0.1;
  double sigma_f = 0.1;
  double rho = 1.0;
  double dt = 0.01;
  double sigma_eps = 0.01;
  std::vector<int> observed_nodes = {0, 2, 4, 6, 8, 10};
  int n_steps = 100;
  int subdivisions = 0;
  double u_init = 1.0;

  void validate(Index n_vertices) const {
    if (!(nu > 0.0) || !(rho > 0.0) || !(dt > 0.0)) throw std::invalid_argument("nu, rho, dt must be positive");
    if (!(sigma_f >= 0.0) || !(sigma_eps >= 0.0)) throw std::invalid_argument("noise scales must be nonnegative");
    if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
    std::vector<bool> seen(static_cast<std::size_t>(n_vertices), false);
    for (int j : observed_nodes) {
      if (j < 0 || j >= n_vertices) throw std::invalid_argument("observed node out of range");
      if (seen[static_cast<std::size_t>(j)]) throw std::invalid_argument("duplicate observed node");
      seen[static_cast<std::size_t>(j)] = true;
    }
  }
};

struct Trajectory {
  Mat states; // n_steps x n_vertices
  ThetaParams theta_used;

  Index n_steps() const { return states.rows(); }
};

inline Vec initial_state(const FemOperators& ops, double value = 1.0) {
  return Vec::Constant(ops.n_vertices(), value);
}

// The three drift basis vectors: powers 0, 1, 4 of the centroid values, mapped
// back through the quadrature weights and the implicit-diffusion solve.
inline std::array<Vec, 3> g_basis(const Vec& u, const FemOperators& ops) {
  const Vec c = ops.centroid_eval * u;
  const Vec c2 = c.cwiseProduct(c);
  std::array<Vec, 3> out;
  out[0] = ops.dt * ops.timestep_solve(Vec(ops.quad_weights * Vec::Ones(c.size())));
  out[1] = ops.dt * ops.timestep_solve(Vec(ops.quad_weights * c));
  out[2] = ops.dt * ops.timestep_solve(Vec(ops.quad_weights * c2.cwiseProduct(c2)));
  return out;
}

// One-step conditional mean. Single implicit solve; algebraically equal to
// the linear part plus the theta-weighted g_basis combination.
inline Vec mu_theta(const Vec& u, const ThetaParams& theta, const FemOperators& ops) {
  const Vec c = ops.centroid_eval * u;
  const Vec c2 = c.cwiseProduct(c);
  const Vec g = Vec::Constant(c.size(), theta.theta0) + theta.theta1 * c
                + theta.theta4 * c2.cwiseProduct(c2);
  return ops.timestep_solve(Vec(ops.mass * u + ops.dt * ops.quad_weights * g));
}

inline Vec step(const Vec& u, const ThetaParams& theta, const FemOperators& ops,
                const NoiseModel& noise, RngStream& rng, Index step_index = -1) {
  Vec next = mu_theta(u, theta, ops);
  if (noise.has_noise()) next += sample_state_noise(noise, ops, rng);
  if (!next.allFinite()) {
    std::string where = step_index >= 0 ? " at step " + std::to_string(step_index) : "";
    throw std::runtime_error("state blow-up" + where);
  }
  return next;
}

inline Trajectory simulate(const ThetaParams& theta, int n_steps, const FemOperators& ops,
                           const NoiseModel& noise, RngStream& rng, double u_init = 1.0) {
  if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
  Trajectory traj;
  traj.theta_used = theta;
  traj.states.resize(n_steps, ops.n_vertices());
  Vec u = initial_state(ops, u_init);
  for (int n = 0; n < n_steps; ++n) {
    u = step(u, theta, ops, noise, rng, n + 1);
    traj.states.row(n) = u;
  }
  return traj;
}

// log p(u_next | u, theta), Gaussian with mean mu_theta(u) and the state-noise
// covariance.
inline double transition_logpdf(const Vec& u_next, const Vec& u, const ThetaParams& theta,
                                const FemOperators& ops, const NoiseModel& noise) {
  if (!noise.has_noise()) throw std::logic_error("transition density needs sigma_f > 0");
  const Vec resid = u_next - mu_theta(u, theta, ops);
  const Vec white = noise.cov_llt.matrixL().solve(resid);
  return -0.5 * (noise.cov_logdet_2pi + white.squaredNorm());
}

} // namespace sebm
