#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "model.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace sebm {

// Noisy point observations of a subset of mesh nodes.
struct Observations {
  Mat y; // n_steps x n_observed
  std::vector<int> observed_nodes;
  double sigma_eps = 0.0;

  Index n_steps() const { return y.rows(); }
  Index n_observed() const { return y.cols(); }
};

// Selector matrix: one row per observed node, a single 1 in that node's column.
inline Mat observation_matrix(const std::vector<int>& nodes, Index n_vertices) {
  Mat h = Mat::Zero(static_cast<Index>(nodes.size()), n_vertices);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] < 0 || nodes[i] >= n_vertices) throw std::invalid_argument("observed node out of range");
    h(static_cast<Index>(i), nodes[i]) = 1.0;
  }
  return h;
}

inline Vec select_nodes(const Vec& u, const std::vector<int>& nodes) {
  Vec out(static_cast<Index>(nodes.size()));
  for (std::size_t i = 0; i < nodes.size(); ++i) out[static_cast<Index>(i)] = u[nodes[i]];
  return out;
}

inline Observations observe_trajectory(const Trajectory& traj, const std::vector<int>& nodes,
                                       double sigma_eps, RngStream& rng) {
  if (!(sigma_eps >= 0.0)) throw std::invalid_argument("sigma_eps must be nonnegative");
  Observations obs;
  obs.observed_nodes = nodes;
  obs.sigma_eps = sigma_eps;
  obs.y.resize(traj.n_steps(), static_cast<Index>(nodes.size()));
  for (Index n = 0; n < traj.n_steps(); ++n) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      obs.y(n, static_cast<Index>(i)) = traj.states(n, nodes[i]) + sigma_eps * rng.normal();
    }
  }
  return obs;
}

// log p(y_n | u), isotropic Gaussian at the selected nodes.
inline double obs_logpdf(const Vec& y_n, const Vec& u, const std::vector<int>& nodes, double sigma_eps) {
  if (!(sigma_eps > 0.0)) throw std::invalid_argument("obs_logpdf needs sigma_eps > 0");
  if (y_n.size() != static_cast<Index>(nodes.size())) throw std::invalid_argument("observation size mismatch");
  const double var = sigma_eps * sigma_eps;
  double quad = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double d = y_n[static_cast<Index>(i)] - u[nodes[i]];
    quad += d * d;
  }
  const double d_o = static_cast<double>(nodes.size());
  return -0.5 * d_o * std::log(2.0 * M_PI * var) - 0.5 * quad / var;
}

} // namespace sebm
