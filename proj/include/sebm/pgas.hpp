#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "estimators.hpp"
#include "model.hpp"
#include "observation.hpp"
#include "posterior.hpp"
#include "rng.hpp"
#include "smc.hpp"
#include "types.hpp"

namespace sebm {

// Unnormalized log-probabilities for the pinned particle's ancestor: previous
// weight times the transition density into the reference state. Factors common
// to all candidates are dropped.
inline Vec ancestor_logweights(const Vec& ref_state_n, const Mat& particles_prev,
                               const Vec& weights_prev, const ThetaParams& theta,
                               const FemOperators& ops, const NoiseModel& noise) {
  Vec logw(particles_prev.rows());
  for (Index j = 0; j < particles_prev.rows(); ++j) {
    logw[j] = std::log(weights_prev[j])
              + transition_logpdf(ref_state_n, particles_prev.row(j), theta, ops, noise);
  }
  if (!(logw.maxCoeff() > -std::numeric_limits<double>::infinity()))
    throw std::runtime_error("all ancestor weights vanished");
  return logw;
}

struct CsmcResult {
  Mat trajectory;             // n_steps x n_vertices
  std::vector<char> updated;  // per step: any entry differs from the reference
};

// One conditional SMC pass with ancestor sampling. The reference trajectory is
// pinned as the last particle; its ancestor is resampled from the transition-
// weighted previous generation, which is what lets the pinned path mix.
template <class RngPolicy>
CsmcResult csmc_as(const ThetaParams& theta, const Observations& obs, const FemOperators& ops,
                   const NoiseModel& noise, const ProposalModel& prop, const Mat& ref,
                   int n_particles, const RngPolicy& rngs, double u_init = 1.0) {
  if (n_particles < 1) throw std::invalid_argument("need at least one particle");
  const Index n_steps = obs.n_steps();
  if (ref.rows() != n_steps) throw std::invalid_argument("reference length mismatch");
  const Index nv = ops.n_vertices();
  const int m_count = n_particles;
  const int pinned = m_count - 1;

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

  {
    const Vec mu0 = mu_theta(sys.initial, theta, ops);
    const double logw0 = predictive_logweight(prop, mu0, obs.y.row(0));
    const Vec mean0 = proposal_mean(prop, mu0, obs.y.row(0));
    for (int m = 0; m < pinned; ++m) sys.states[0].row(m) = propose_one(mean0, 1, static_cast<std::uint64_t>(m));
    sys.states[0].row(pinned) = ref.row(0);
    sys.log_incr.row(0).setConstant(logw0);
    sys.weights.row(0) = detail::normalize_logweights(sys.log_incr.row(0), "at step 1");
  }

  Mat drift(m_count, nv);
  Vec pred_logw(m_count);
  for (Index n = 1; n < n_steps; ++n) {
    const std::uint64_t time = static_cast<std::uint64_t>(n) + 1;
    const Vec y_n = obs.y.row(n);
    for (int j = 0; j < m_count; ++j) {
      drift.row(j) = mu_theta(sys.states[static_cast<std::size_t>(n - 1)].row(j), theta, ops);
      pred_logw[j] = predictive_logweight(prop, drift.row(j), y_n);
    }
    const Vec w_prev = sys.weights.row(n - 1);

    for (int m = 0; m < pinned; ++m) {
      auto rng = rngs.stream(time, static_cast<std::uint64_t>(m), rng_purpose::resample);
      const int a = detail::inverse_cdf_index(w_prev, rng.uniform01());
      sys.ancestors(n - 1, m) = a;
      const Vec mean = proposal_mean(prop, drift.row(a), y_n);
      sys.states[static_cast<std::size_t>(n)].row(m) = propose_one(mean, time, static_cast<std::uint64_t>(m));
    }

    // ancestor draw for the pinned particle, using the cached drifts
    {
      const Vec ref_n = ref.row(n);
      Vec anc_logw(m_count);
      for (int j = 0; j < m_count; ++j) {
        const Vec white = noise.cov_llt.matrixL().solve(Vec(ref_n - drift.row(j).transpose()));
        anc_logw[j] = std::log(w_prev[j]) - 0.5 * (noise.cov_logdet_2pi + white.squaredNorm());
      }
      const Vec anc_w = detail::normalize_logweights(anc_logw, "in ancestor draw at step " + std::to_string(n + 1));
      auto rng = rngs.stream(time, static_cast<std::uint64_t>(pinned), rng_purpose::ancestor);
      sys.ancestors(n - 1, pinned) = detail::inverse_cdf_index(anc_w, rng.uniform01());
      sys.states[static_cast<std::size_t>(n)].row(pinned) = ref.row(n);
    }

    for (int m = 0; m < m_count; ++m) sys.log_incr(n, m) = pred_logw[sys.ancestors(n - 1, m)];
    sys.weights.row(n) = detail::normalize_logweights(sys.log_incr.row(n), "at step " + std::to_string(n + 1));
  }

  CsmcResult out;
  out.trajectory = sample_trajectory(sys, rngs);
  out.updated.resize(static_cast<std::size_t>(n_steps));
  for (Index n = 0; n < n_steps; ++n)
    out.updated[static_cast<std::size_t>(n)] = (out.trajectory.row(n) != ref.row(n)) ? 1 : 0;
  return out;
}

// Joint chain over coefficients and state trajectories.
struct Chain {
  Mat theta_samples;            // n_sweeps x 3
  std::vector<Mat> traj_samples; // every thin-th sweep's trajectory
  Mat update_flags;             // n_sweeps x n_steps, first row all ones
  int thin = 1;
  int n_particles = 0;
  std::uint64_t seed = 0;

  Index n_sweeps() const { return theta_samples.rows(); }
  Index traj_index(Index sweep) const { return sweep / thin; }
};

namespace detail {

inline std::uint64_t sweep_seed(std::uint64_t seed, std::uint64_t sweep) {
  return hash_mix(hash_mix(seed, 0x5eedULL), sweep);
}

inline RngStream theta_stream(std::uint64_t seed, std::uint64_t sweep) {
  return RngStream{seed, sweep, 0x7e7aULL};
}

} // namespace detail

inline Chain run_pgas(const ParamPrior& prior, const Observations& obs, const FemOperators& ops,
                      const NoiseModel& noise, const ProposalModel& prop, int n_sweeps,
                      int n_particles, std::uint64_t seed, double u_init = 1.0, int thin = 1) {
  if (n_sweeps < 1) throw std::invalid_argument("need at least one sweep");
  if (thin < 1) throw std::invalid_argument("thin must be >= 1");

  Chain chain;
  chain.thin = thin;
  chain.n_particles = n_particles;
  chain.seed = seed;
  chain.theta_samples.resize(n_sweeps, 3);
  chain.update_flags = Mat::Zero(n_sweeps, obs.n_steps());
  chain.traj_samples.reserve(static_cast<std::size_t>((n_sweeps + thin - 1) / thin));

  auto init_theta_rng = detail::theta_stream(seed, 0);
  ThetaParams theta = sample_param_prior(prior, init_theta_rng);
  const SweepRng init_rng(detail::sweep_seed(seed, 0));
  Mat traj = sample_trajectory(sir_filter(theta, obs, ops, noise, prop, n_particles, init_rng, u_init), init_rng);
  chain.theta_samples.row(0) = theta.as_vec();
  chain.update_flags.row(0).setOnes();
  chain.traj_samples.push_back(traj);

  for (int l = 1; l < n_sweeps; ++l) {
    try {
      const SufficientStats stats = sufficient_stats(traj, ops, noise, u_init);
      auto rng = detail::theta_stream(seed, static_cast<std::uint64_t>(l));
      theta = sample_theta_conditional(stats, prior, rng, &theta);

      const SweepRng sweep_rng(detail::sweep_seed(seed, static_cast<std::uint64_t>(l)));
      CsmcResult res = csmc_as(theta, obs, ops, noise, prop, traj, n_particles, sweep_rng, u_init);
      traj = std::move(res.trajectory);

      chain.theta_samples.row(l) = theta.as_vec();
      for (Index n = 0; n < chain.update_flags.cols(); ++n)
        chain.update_flags(l, n) = res.updated[static_cast<std::size_t>(n)] ? 1.0 : 0.0;
      if (l % thin == 0) chain.traj_samples.push_back(traj);
    } catch (const std::exception& e) {
      throw std::runtime_error("chain aborted at sweep " + std::to_string(l) + ": " + e.what());
    }
  }
  return chain;
}

} // namespace sebm
