#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "forcing.hpp"
#include "model.hpp"
#include "observation.hpp"
#include "posterior.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace sebm {

// Deterministic per-(time, particle, purpose) stream factory. Draws never
// depend on evaluation order, so particle loops can run in any order or in
// parallel without changing results.
class SweepRng {
public:
  explicit SweepRng(std::uint64_t seed) : seed_(seed) {}

  RngStream stream(std::uint64_t time, std::uint64_t particle, std::uint64_t purpose) const {
    return RngStream{seed_, time, particle, purpose};
  }

private:
  std::uint64_t seed_;
};

namespace rng_purpose {
inline constexpr std::uint64_t propose = 0;
inline constexpr std::uint64_t resample = 1;
inline constexpr std::uint64_t ancestor = 2;
inline constexpr std::uint64_t select = 3;
} // namespace rng_purpose

// Optimal-proposal quantities for the linear-Gaussian observation of a
// Gaussian transition. When a climatological band is supplied it is folded in
// as a pseudo-observation of every node, so the proposal directly targets the
// banded state posterior. Everything here is parameter-independent, built once
// per run.
struct ProposalModel {
  Mat obs_matrix;   // possibly augmented with an identity block
  Mat gain;         // n_vertices x n_aug
  Mat prop_cov;     // proposal covariance
  Mat prop_chol;    // its lower Cholesky factor
  Mat pred_cov;     // predictive covariance of the (augmented) observation
  Eigen::LLT<Mat> pred_llt;
  double pred_logdet_2pi = 0.0;
  double clim_mean = 0.0;
  bool has_clim = false;
  Index n_raw_obs = 0;

  Index n_aug() const { return obs_matrix.rows(); }

  // observation vector extended with the climatological pseudo-observation
  Vec augment(const Vec& y_n) const {
    if (!has_clim) return y_n;
    Vec out(n_aug());
    out.head(n_raw_obs) = y_n;
    out.tail(out.size() - n_raw_obs).setConstant(clim_mean);
    return out;
  }
};

inline ProposalModel build_proposal_model(const FemOperators& ops, const NoiseModel& noise,
                                          const std::vector<int>& observed_nodes, double sigma_eps,
                                          const ClimatologicalPrior* clim = nullptr) {
  if (!(sigma_eps > 0.0)) throw std::invalid_argument("proposal needs sigma_eps > 0");
  const Index nv = ops.n_vertices();
  const Index n_obs = static_cast<Index>(observed_nodes.size());
  const Index n_aug = clim ? n_obs + nv : n_obs;

  ProposalModel prop;
  prop.has_clim = clim != nullptr;
  prop.clim_mean = clim ? clim->u_c : 0.0;
  prop.n_raw_obs = n_obs;
  prop.obs_matrix = Mat::Zero(n_aug, nv);
  prop.obs_matrix.topRows(n_obs) = observation_matrix(observed_nodes, nv);
  Vec obs_var = Vec::Constant(n_aug, sigma_eps * sigma_eps);
  if (clim) {
    prop.obs_matrix.bottomRows(nv).setIdentity();
    obs_var.tail(nv).setConstant(clim->sigma_c * clim->sigma_c);
  }

  const Mat cross = noise.cov * prop.obs_matrix.transpose(); // R H^T
  prop.pred_cov = prop.obs_matrix * cross;
  prop.pred_cov.diagonal() += obs_var;
  prop.pred_cov = 0.5 * (prop.pred_cov + prop.pred_cov.transpose()).eval();
  prop.pred_llt.compute(prop.pred_cov);
  if (prop.pred_llt.info() != Eigen::Success)
    throw std::runtime_error("predictive observation covariance is not positive definite");
  const Mat pred_lower = prop.pred_llt.matrixL();
  prop.pred_logdet_2pi = static_cast<double>(n_aug) * std::log(2.0 * M_PI)
                         + 2.0 * pred_lower.diagonal().array().log().sum();

  prop.gain = prop.pred_llt.solve(cross.transpose()).transpose();
  prop.prop_cov = noise.cov - prop.gain * cross.transpose();
  prop.prop_cov = 0.5 * (prop.prop_cov + prop.prop_cov.transpose()).eval();
  const Eigen::LLT<Mat> prop_llt(prop.prop_cov);
  if (prop_llt.info() != Eigen::Success)
    throw std::runtime_error("proposal covariance is not positive definite");
  prop.prop_chol = prop_llt.matrixL();
  return prop;
}

// Conditional mean of the proposal given the predecessor's drift mu.
inline Vec proposal_mean(const ProposalModel& prop, const Vec& mu, const Vec& y_n) {
  return mu + prop.gain * (prop.augment(y_n) - prop.obs_matrix * mu);
}

// Marginal log-density of the (augmented) observation given the predecessor's
// drift mu; with the optimal proposal this is the whole incremental weight.
inline double predictive_logweight(const ProposalModel& prop, const Vec& mu, const Vec& y_n) {
  const Vec resid = prop.augment(y_n) - prop.obs_matrix * mu;
  const Vec white = Mat(prop.pred_llt.matrixL()).triangularView<Eigen::Lower>().solve(resid);
  return -0.5 * (prop.pred_logdet_2pi + white.squaredNorm());
}

// Convenience wrappers that take the predecessor state directly.
inline std::pair<Vec, Mat> optimal_proposal_params(const Vec& u_prev, const Vec& y_n,
                                                   const ThetaParams& theta, const FemOperators& ops,
                                                   const ProposalModel& prop) {
  const Vec mu = mu_theta(u_prev, theta, ops);
  return {proposal_mean(prop, mu, y_n), prop.prop_cov};
}

inline double predictive_logweight(const Vec& u_prev, const Vec& y_n, const ThetaParams& theta,
                                   const FemOperators& ops, const ProposalModel& prop) {
  return predictive_logweight(prop, mu_theta(u_prev, theta, ops), y_n);
}

namespace detail {

inline int inverse_cdf_index(const Vec& weights, double u) {
  double acc = 0.0;
  for (Index i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size() - 1);
}

inline Vec normalize_logweights(Vec logw, const std::string& where) {
  const double top = logw.maxCoeff();
  if (!std::isfinite(top)) throw std::runtime_error("all particle weights vanished " + where);
  logw.array() -= top;
  Vec w = logw.array().exp();
  w /= w.sum();
  return w;
}

} // namespace detail

// iid draws from the discrete distribution given by normalized weights.
inline std::vector<int> resample_indices(const Vec& weights, int count, RngStream& rng) {
  if (std::abs(weights.sum() - 1.0) > 1e-9) throw std::invalid_argument("weights not normalized");
  std::vector<int> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = detail::inverse_cdf_index(weights, rng.uniform01());
  return out;
}

struct ParticleSystem {
  std::vector<Mat> states;   // one n_particles x n_vertices block per time step
  Mat weights;               // n_steps x n_particles, rows normalized
  Mat log_incr;              // n_steps x n_particles
  Eigen::MatrixXi ancestors; // (n_steps - 1) x n_particles
  Vec initial;               // shared predecessor of the first step

  Index n_steps() const { return weights.rows(); }
  Index n_particles() const { return weights.cols(); }

  Mat trace_back(int final_index) const {
    Mat traj(n_steps(), states.front().cols());
    int idx = final_index;
    for (Index n = n_steps() - 1; n >= 0; --n) {
      traj.row(n) = states[static_cast<std::size_t>(n)].row(idx);
      if (n > 0) idx = ancestors(n - 1, idx);
    }
    return traj;
  }
};

// Draw a full trajectory from the weighted particle approximation.
template <class RngPolicy>
Mat sample_trajectory(const ParticleSystem& sys, const RngPolicy& rngs) {
  auto rng = rngs.stream(static_cast<std::uint64_t>(sys.n_steps()) + 1, 0, rng_purpose::select);
  const int idx = detail::inverse_cdf_index(sys.weights.row(sys.n_steps() - 1), rng.uniform01());
  return sys.trace_back(idx);
}

// Sequential importance resampling with the optimal proposal. Incremental
// weights depend only on ancestors, so each step weighs the predecessors once,
// resamples, and propagates.
template <class RngPolicy>
ParticleSystem sir_filter(const ThetaParams& theta, const Observations& obs, const FemOperators& ops,
                          const NoiseModel& noise, const ProposalModel& prop, int n_particles,
                          const RngPolicy& rngs, double u_init = 1.0) {
  if (n_particles < 1) throw std::invalid_argument("need at least one particle");
  const Index n_steps = obs.n_steps();
  const Index nv = ops.n_vertices();
  const int m_count = n_particles;

  ParticleSystem sys;
  sys.initial = initial_state(ops, u_init);
  sys.states.assign(static_cast<std::size_t>(n_steps), Mat(m_count, nv));
  sys.weights.resize(n_steps, m_count);
  sys.log_incr.resize(n_steps, m_count);
  sys.ancestors.resize(n_steps - 1, m_count);

  auto propose_one = [&](const Vec& mean, std::uint64_t time, std::uint64_t m) {
    auto rng = rngs.stream(time, m, rng_purpose::propose);
    Vec z(nv);
    for (Index i = 0; i < nv; ++i) z[i] = rng.normal();
    return Vec(mean + prop.prop_chol.triangularView<Eigen::Lower>() * z);
  };

  // first step: every particle descends from the shared initial state
  {
    const Vec mu0 = mu_theta(sys.initial, theta, ops);
    const double logw0 = predictive_logweight(prop, mu0, obs.y.row(0));
    const Vec mean0 = proposal_mean(prop, mu0, obs.y.row(0));
    for (int m = 0; m < m_count; ++m) sys.states[0].row(m) = propose_one(mean0, 1, static_cast<std::uint64_t>(m));
    sys.log_incr.row(0).setConstant(logw0);
    sys.weights.row(0) = detail::normalize_logweights(sys.log_incr.row(0), "at step 1");
  }

  Mat drift(m_count, nv);
  Vec prev_logw(m_count);
  for (Index n = 1; n < n_steps; ++n) {
    const std::uint64_t time = static_cast<std::uint64_t>(n) + 1;
    for (int j = 0; j < m_count; ++j) {
      drift.row(j) = mu_theta(sys.states[static_cast<std::size_t>(n - 1)].row(j), theta, ops);
      prev_logw[j] = predictive_logweight(prop, drift.row(j), obs.y.row(n));
    }
    const Vec w_prev = sys.weights.row(n - 1);
    for (int m = 0; m < m_count; ++m) {
      auto rng = rngs.stream(time, static_cast<std::uint64_t>(m), rng_purpose::resample);
      const int a = detail::inverse_cdf_index(w_prev, rng.uniform01());
      sys.ancestors(n - 1, m) = a;
      sys.log_incr(n, m) = prev_logw[a];
      const Vec mean = proposal_mean(prop, drift.row(a), obs.y.row(n));
      sys.states[static_cast<std::size_t>(n)].row(m) = propose_one(mean, time, static_cast<std::uint64_t>(m));
    }
    sys.weights.row(n) = detail::normalize_logweights(sys.log_incr.row(n), "at step " + std::to_string(n + 1));
  }
  return sys;
}

inline double effective_sample_size(const Vec& weights) { return 1.0 / weights.squaredNorm(); }

} // namespace sebm
