#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "model.hpp"
#include "pgas.hpp"
#include "posterior.hpp"
#include "types.hpp"

namespace sebm {

inline Index burn_in_start(Index n_sweeps, double burn_in_frac) {
  const Index start = static_cast<Index>(static_cast<double>(n_sweeps) * burn_in_frac);
  return std::min(start, n_sweeps - 1);
}

// Per-step fraction of sweeps that changed the state, over sweeps after the
// first (the initialization row carries no predecessor to compare with).
inline Vec update_rate(const Chain& chain) {
  if (chain.n_sweeps() < 2) throw std::invalid_argument("update rate needs at least two sweeps");
  const Index l = chain.n_sweeps();
  return chain.update_flags.bottomRows(l - 1).colwise().mean();
}

struct AcfResult {
  Vec acf;         // lags 0..max_lag
  int corr_length; // smallest lag below threshold; max_lag + 1 if none
};

inline AcfResult acf_and_corrlength(const Vec& series, int max_lag, double threshold = 0.1) {
  const Index n = series.size();
  if (max_lag < 0 || max_lag >= n) throw std::invalid_argument("max_lag out of range");
  const double mean = series.mean();
  const Vec centered = series.array() - mean;
  const double denom = centered.squaredNorm();
  if (!(denom > 0.0)) throw std::invalid_argument("constant series has no autocorrelation");

  AcfResult out;
  out.acf.resize(max_lag + 1);
  out.corr_length = max_lag + 1;
  for (int h = 0; h <= max_lag; ++h) {
    out.acf[h] = centered.head(n - h).dot(centered.tail(n - h)) / denom;
    if (out.corr_length > max_lag && std::abs(out.acf[h]) < threshold) out.corr_length = h;
  }
  return out;
}

struct Histogram {
  Vec edges;  // bins + 1
  Vec counts; // bins
};

inline Histogram histogram(const Vec& values, double lo, double hi, int bins) {
  if (!(lo < hi) || bins < 1) throw std::invalid_argument("bad histogram range");
  Histogram h;
  h.edges = Vec::LinSpaced(bins + 1, lo, hi);
  h.counts = Vec::Zero(bins);
  const double scale = bins / (hi - lo);
  for (Index i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (v < lo || v > hi) continue;
    const int b = std::min(bins - 1, static_cast<int>((v - lo) * scale));
    h.counts[b] += 1.0;
  }
  return h;
}

// Plot range for one coefficient: the box for the uniform prior, a wide
// central band for the Gaussian.
inline std::pair<double, double> prior_support(const ParamPrior& prior, int k) {
  if (prior.kind == ParamPrior::Kind::uniform) return {prior.lo[k], prior.hi[k]};
  return {prior.mean[k] - 4.0 * prior.sd[k], prior.mean[k] + 4.0 * prior.sd[k]};
}

struct PosteriorSummary {
  Vec3 mean = Vec3::Zero();
  Vec3 map = Vec3::Zero();
  Index map_sweep = 0;
  std::vector<Histogram> marginals;
};

// Chain summaries after burn-in: sample mean, the stored sample maximizing the
// supplied log-posterior, and marginal histograms over the prior support.
template <class LogPost>
PosteriorSummary posterior_summary(const Chain& chain, LogPost&& log_posterior,
                                   const ParamPrior& prior, double burn_in_frac = 0.1,
                                   int bins = 40) {
  const Index start = burn_in_start(chain.n_sweeps(), burn_in_frac);
  const Index kept = chain.n_sweeps() - start;

  PosteriorSummary summary;
  summary.mean = chain.theta_samples.bottomRows(kept).colwise().mean();

  double best = -std::numeric_limits<double>::infinity();
  for (Index l = start; l < chain.n_sweeps(); ++l) {
    if (l % chain.thin != 0) continue;
    const ThetaParams theta = ThetaParams::from_vec(chain.theta_samples.row(l));
    const double lp = log_posterior(theta, chain.traj_samples[static_cast<std::size_t>(chain.traj_index(l))]);
    if (lp > best) {
      best = lp;
      summary.map = theta.as_vec();
      summary.map_sweep = l;
    }
  }

  for (int k = 0; k < 3; ++k) {
    const auto [lo, hi] = prior_support(prior, k);
    summary.marginals.push_back(histogram(chain.theta_samples.col(k).bottomRows(kept), lo, hi, bins));
  }
  return summary;
}

inline double sample_quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  if (i + 1 >= values.size()) return values.back();
  const double frac = pos - static_cast<double>(i);
  return values[i] * (1.0 - frac) + values[i + 1] * frac;
}

struct StateMetrics {
  Vec rel_error_per_step;   // percent
  double rel_error_traj = 0.0; // percent, time average
  double coverage = 0.0;    // percent of (step, node) pairs covered
};

// Ensemble-mean relative errors against the truth and the empirical coverage
// of central credible intervals, over the post-burn-in stored trajectories.
inline StateMetrics state_metrics(const Chain& chain, const Mat& true_states,
                                  double credible_level = 0.9, double burn_in_frac = 0.1) {
  const Index n_steps = true_states.rows();
  const Index nv = true_states.cols();
  const Index start_sweep = burn_in_start(chain.n_sweeps(), burn_in_frac);
  std::vector<const Mat*> kept;
  for (Index l = start_sweep; l < chain.n_sweeps(); ++l)
    if (l % chain.thin == 0) kept.push_back(&chain.traj_samples[static_cast<std::size_t>(chain.traj_index(l))]);
  if (kept.empty()) throw std::invalid_argument("no stored trajectories after burn-in");

  Mat mean_states = Mat::Zero(n_steps, nv);
  for (const Mat* m : kept) mean_states += *m;
  mean_states /= static_cast<double>(kept.size());

  StateMetrics out;
  out.rel_error_per_step.resize(n_steps);
  const double q_lo = 0.5 * (1.0 - credible_level);
  const double q_hi = 1.0 - q_lo;
  Index covered = 0;
  std::vector<double> samples(kept.size());
  for (Index n = 0; n < n_steps; ++n) {
    double err = 0.0;
    for (Index v = 0; v < nv; ++v) {
      err += std::abs(mean_states(n, v) - true_states(n, v)) / std::abs(true_states(n, v));
      for (std::size_t s = 0; s < kept.size(); ++s) samples[s] = (*kept[s])(n, v);
      const double lo = sample_quantile(samples, q_lo);
      const double hi = sample_quantile(samples, q_hi);
      if (true_states(n, v) >= lo && true_states(n, v) <= hi) ++covered;
    }
    out.rel_error_per_step[n] = 100.0 * err / static_cast<double>(nv);
  }
  out.rel_error_traj = out.rel_error_per_step.mean();
  out.coverage = 100.0 * static_cast<double>(covered) / static_cast<double>(n_steps * nv);
  return out;
}

struct Equilibrium {
  double u_e = 0.0;
  double feedback = 0.0; // slope of g at the equilibrium
};

// Root of g on a bracket, safeguarded Newton falling back to bisection.
inline Equilibrium equilibrium_and_feedback(const ThetaParams& theta, double lo = 0.5, double hi = 1.5) {
  double flo = theta.g(lo), fhi = theta.g(hi);
  if (flo == 0.0) return {lo, theta.g_prime(lo)};
  if (fhi == 0.0) return {hi, theta.g_prime(hi)};
  if (flo * fhi > 0.0) throw std::runtime_error("no sign change of g in the bracket");

  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = theta.g(x);
    if (f == 0.0) break;
    if (f * flo < 0.0) { hi = x; } else { lo = x; flo = f; }
    const double dg = theta.g_prime(x);
    double next = dg != 0.0 ? x - f / dg : x;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi); // safeguard
    if (std::abs(next - x) < 1e-12) { x = next; break; }
    x = next;
  }
  return {x, theta.g_prime(x)};
}

} // namespace sebm
