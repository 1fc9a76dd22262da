#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "model.hpp"
#include "observation.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace sebm {

// Prior over the source-term coefficients: independent Gaussians or a uniform
// box. Defaults encode the physical ranges the model is calibrated for.
struct ParamPrior {
  enum class Kind { gaussian, uniform };

  Kind kind = Kind::gaussian;
  Vec3 mean = Vec3::Zero();
  Vec3 sd = Vec3::Ones();
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();

  static ParamPrior gaussian_default() {
    ParamPrior p;
    p.kind = Kind::gaussian;
    p.mean = Vec3(30.11, -24.08, -5.40);
    p.sd = Vec3(0.82, 0.46, 0.20);
    p.lo = Vec3(27.64, -25.46, -6.00);
    p.hi = Vec3(32.57, -22.70, -4.80);
    return p;
  }

  static ParamPrior uniform_default() {
    ParamPrior p = gaussian_default();
    p.kind = Kind::uniform;
    return p;
  }

  bool in_box(const Vec3& theta) const {
    return (theta.array() >= lo.array()).all() && (theta.array() <= hi.array()).all();
  }
};

inline double log_param_prior(const ThetaParams& theta, const ParamPrior& prior) {
  const Vec3 t = theta.as_vec();
  if (prior.kind == ParamPrior::Kind::uniform) {
    if (!prior.in_box(t)) return -std::numeric_limits<double>::infinity();
    return -std::log((prior.hi - prior.lo).prod());
  }
  double lp = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double z = (t[k] - prior.mean[k]) / prior.sd[k];
    lp += -0.5 * std::log(2.0 * M_PI * prior.sd[k] * prior.sd[k]) - 0.5 * z * z;
  }
  return lp;
}

inline ThetaParams sample_param_prior(const ParamPrior& prior, RngStream& rng) {
  Vec3 t;
  if (prior.kind == ParamPrior::Kind::uniform) {
    for (int k = 0; k < 3; ++k) t[k] = prior.lo[k] + (prior.hi[k] - prior.lo[k]) * rng.uniform01();
  } else {
    for (int k = 0; k < 3; ++k) t[k] = prior.mean[k] + prior.sd[k] * rng.normal();
  }
  return ThetaParams::from_vec(t);
}

// Independent-Gaussian band around the climatological mean, fitted from the
// observations themselves; keeps sampled states inside the observed regime.
struct ClimatologicalPrior {
  double u_c = 1.0;    // climatological mean
  double sigma_c = 0.1; // band width
  double sigma_o = 0.0; // raw observation std, kept for provenance
};

inline ClimatologicalPrior fit_climatological_prior(const Observations& obs, double sigma_eps) {
  const Index count = obs.y.size();
  if (count < 2) throw std::invalid_argument("need at least two observation entries");
  const double mean = obs.y.mean();
  const double var = (obs.y.array() - mean).square().sum() / static_cast<double>(count - 1);
  const double sigma_o = std::sqrt(var);
  if (!(sigma_o > sigma_eps)) throw std::runtime_error("observations less variable than noise");
  ClimatologicalPrior clim;
  clim.u_c = mean;
  clim.sigma_o = sigma_o;
  clim.sigma_c = 2.0 * std::sqrt(sigma_o * sigma_o - sigma_eps * sigma_eps);
  return clim;
}

// log of the iid climatological factor over every state entry.
inline double log_climatological(const Mat& states, const ClimatologicalPrior& clim) {
  const double var = clim.sigma_c * clim.sigma_c;
  const double quad = (states.array() - clim.u_c).square().sum();
  const double count = static_cast<double>(states.size());
  return -0.5 * count * std::log(2.0 * M_PI * var) - 0.5 * quad / var;
}

// Sum of transition log-densities along the whole path, starting from the
// fixed initial state.
inline double log_state_sequence(const Trajectory& traj, const ThetaParams& theta,
                                 const FemOperators& ops, const NoiseModel& noise,
                                 double u_init = 1.0) {
  double total = 0.0;
  Vec prev = initial_state(ops, u_init);
  for (Index n = 0; n < traj.n_steps(); ++n) {
    const Vec cur = traj.states.row(n);
    total += transition_logpdf(cur, prev, theta, ops, noise);
    prev = cur;
  }
  return total;
}

inline double log_obs_sequence(const Observations& obs, const Trajectory& traj) {
  if (obs.n_steps() != traj.n_steps()) throw std::invalid_argument("observation/trajectory length mismatch");
  double total = 0.0;
  for (Index n = 0; n < obs.n_steps(); ++n) {
    total += obs_logpdf(obs.y.row(n), traj.states.row(n), obs.observed_nodes, obs.sigma_eps);
  }
  return total;
}

// Unnormalized log of the regularized posterior: prior times the 1/N-tempered
// product of climatological, state, and observation factors. Constants that
// cancel in ranking and sampling are dropped.
inline double log_regularized_posterior(const ThetaParams& theta, const Trajectory& traj,
                                        const Observations& obs, const ParamPrior& prior,
                                        const ClimatologicalPrior& clim, const FemOperators& ops,
                                        const NoiseModel& noise, double u_init = 1.0) {
  const double lp = log_param_prior(theta, prior);
  if (!std::isfinite(lp)) return lp;
  const double n = static_cast<double>(traj.n_steps());
  const double state_part = log_climatological(traj.states, clim)
                            + log_state_sequence(traj, theta, ops, noise, u_init)
                            + log_obs_sequence(obs, traj);
  return lp + state_part / n;
}

} // namespace sebm
