#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <sebm/estimators.hpp>
#include <sebm/fem.hpp>
#include <sebm/forcing.hpp>
#include <sebm/mesh.hpp>
#include <sebm/model.hpp>
#include <sebm/observation.hpp>
#include <sebm/posterior.hpp>
#include <sebm/smc.hpp>

#include "oracles.hpp"

using namespace sebm;

namespace {

struct World {
  FemOperators ops;
  NoiseModel noise;
  ThetaParams theta{30.11, -24.08, -5.40};
  std::vector<int> nodes{0, 2, 4, 6, 8, 10};
  double sigma_eps = 0.01;
};

World make_world() {
  World w{assemble_operators(build_icosahedron_mesh(), 0.1, 1.0, 0.01), {}};
  w.noise = build_noise_model(w.ops, 0.1, w.ops.dt);
  return w;
}

Vec random_state(Index n, RngStream& rng, double center = 1.0, double spread = 0.05) {
  Vec u(n);
  for (Index i = 0; i < n; ++i) u[i] = center + spread * rng.normal();
  return u;
}

// Observation variance vector of the (possibly augmented) proposal.
Vec obs_variances(const World& w, const ProposalModel& prop, const ClimatologicalPrior* clim) {
  Vec v = Vec::Constant(prop.n_aug(), w.sigma_eps * w.sigma_eps);
  if (clim) v.tail(prop.n_aug() - prop.n_raw_obs).setConstant(clim->sigma_c * clim->sigma_c);
  return v;
}

}  // namespace

TEST_CASE("an uninformative observation leaves the transition untouched") {
  const auto w = make_world();
  const auto prop = build_proposal_model(w.ops, w.noise, w.nodes, 1e3);
  CHECK(prop.gain.norm() < 1e-7);
  CHECK((prop.prop_cov - w.noise.cov).norm() < 1e-7 * w.noise.cov.norm());

  RngStream rng{111, 0};
  const Vec u_prev = random_state(w.ops.n_vertices(), rng);
  const Vec mu = mu_theta(u_prev, w.theta, w.ops);
  const Vec y = Vec::Zero(6);
  CHECK((proposal_mean(prop, mu, y) - mu).norm() < 1e-5);
}

TEST_CASE("a sharp full observation pins the proposal to the data") {
  const auto w = make_world();
  std::vector<int> all_nodes;
  for (int i = 0; i < 12; ++i) all_nodes.push_back(i);
  const double tiny = 1e-5;
  const auto prop = build_proposal_model(w.ops, w.noise, all_nodes, tiny);

  RngStream rng{113, 0};
  const Vec u_prev = random_state(w.ops.n_vertices(), rng);
  const Vec mu = mu_theta(u_prev, w.theta, w.ops);
  Vec y = mu;
  for (Index i = 0; i < y.size(); ++i) y[i] += 0.03 * rng.normal();

  CHECK((proposal_mean(prop, mu, y) - y).norm() < 1e-6);
  CHECK((prop.prop_cov - tiny * tiny * Mat::Identity(12, 12)).norm() < 1e-8);
}

TEST_CASE("the gain equals the proposal-covariance form") {
  const auto w = make_world();
  ClimatologicalPrior clim;
  clim.u_c = 1.01;
  clim.sigma_c = 0.12;
  const ClimatologicalPrior* const with_clim = &clim;

  for (const ClimatologicalPrior* cp : {static_cast<const ClimatologicalPrior*>(nullptr), with_clim}) {
    const auto prop = build_proposal_model(w.ops, w.noise, w.nodes, w.sigma_eps, cp);
    const Vec var = obs_variances(w, prop, cp);
    const Mat alt = prop.prop_cov * prop.obs_matrix.transpose() * var.cwiseInverse().asDiagonal();
    CHECK((prop.gain - alt).norm() < 1e-10 * prop.gain.norm());
  }
}

TEST_CASE("predictive weight matches the marginal Gaussian oracle") {
  const auto w = make_world();
  ClimatologicalPrior clim;
  clim.u_c = 1.0;
  clim.sigma_c = 0.1;
  const ClimatologicalPrior* const with_clim = &clim;

  for (const ClimatologicalPrior* cp : {static_cast<const ClimatologicalPrior*>(nullptr), with_clim}) {
    const auto prop = build_proposal_model(w.ops, w.noise, w.nodes, w.sigma_eps, cp);
    RngStream rng{117, cp ? 1ULL : 0ULL};
    const Vec u_prev = random_state(w.ops.n_vertices(), rng);
    const Vec mu = mu_theta(u_prev, w.theta, w.ops);
    Vec y(6);
    for (Index i = 0; i < 6; ++i) y[i] = 1.0 + 0.05 * rng.normal();

    const Mat cov = prop.obs_matrix * w.noise.cov * prop.obs_matrix.transpose()
                    + Mat(obs_variances(w, prop, cp).asDiagonal());
    const double want = oracle::mvn_logpdf(prop.augment(y), prop.obs_matrix * mu, cov);
    CHECK(predictive_logweight(prop, mu, y) == Catch::Approx(want).margin(1e-10));
    CHECK(predictive_logweight(u_prev, y, w.theta, w.ops, prop)
          == Catch::Approx(want).margin(1e-10));
  }
}

TEST_CASE("proposal and weight factorize the joint density") {
  const auto w = make_world();
  ClimatologicalPrior clim;
  clim.u_c = 1.0;
  clim.sigma_c = 0.1;
  const auto prop = build_proposal_model(w.ops, w.noise, w.nodes, w.sigma_eps, &clim);

  RngStream rng{119, 0};
  const Vec u_prev = random_state(w.ops.n_vertices(), rng);
  Vec y(6);
  for (Index i = 0; i < 6; ++i) y[i] = 1.0 + 0.05 * rng.normal();

  const auto [mean, cov] = optimal_proposal_params(u_prev, y, w.theta, w.ops, prop);
  const double logw = predictive_logweight(u_prev, y, w.theta, w.ops, prop);

  // For any proposed state, transition x likelihood = weight x proposal.
  // The weight therefore never depends on the proposed sample.
  for (int rep = 0; rep < 8; ++rep) {
    Vec z(w.ops.n_vertices());
    for (Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    const Vec u = mean + prop.prop_chol.triangularView<Eigen::Lower>() * z;

    double lhs = transition_logpdf(u, u_prev, w.theta, w.ops, w.noise);
    lhs += obs_logpdf(y, u, w.nodes, w.sigma_eps);
    for (Index b = 0; b < u.size(); ++b) {
      const double d = (clim.u_c - u[b]) / clim.sigma_c;
      lhs += -0.5 * std::log(2.0 * M_PI * clim.sigma_c * clim.sigma_c) - 0.5 * d * d;
    }
    const double rhs = logw + oracle::mvn_logpdf(u, mean, cov);
    CHECK(lhs == Catch::Approx(rhs).margin(1e-8));
  }
}

TEST_CASE("proposal construction rejects a flat observation model") {
  const auto w = make_world();
  CHECK_THROWS_AS(build_proposal_model(w.ops, w.noise, w.nodes, 0.0), std::invalid_argument);
}

TEST_CASE("resampling follows the weight distribution") {
  Vec w(4);
  w << 0.0, 1.0, 0.0, 0.0;
  RngStream rng{121, 0};
  for (int idx : resample_indices(w, 50, rng)) CHECK(idx == 1);

  const Vec uniform = Vec::Constant(5, 0.2);
  RngStream rng2{121, 1};
  const auto picks = resample_indices(uniform, 50000, rng2);
  Vec freq = Vec::Zero(5);
  for (int idx : picks) freq[idx] += 1.0;
  freq /= double(picks.size());
  for (Index k = 0; k < 5; ++k)
    CHECK(std::abs(freq[k] - 0.2) < 4.0 * std::sqrt(0.2 * 0.8 / double(picks.size())));

  Vec bad(3);
  bad << 0.5, 0.2, 0.2;
  RngStream rng3{121, 2};
  CHECK_THROWS_AS(resample_indices(bad, 10, rng3), std::invalid_argument);
}

TEST_CASE("log-weight normalization is shift invariant and guards collapse") {
  Vec logw(4);
  logw << -3.0, -1.0, -2.5, -1.2;
  const Vec a = sebm::detail::normalize_logweights(logw, "here");
  const Vec b = sebm::detail::normalize_logweights(Vec(logw.array() + 250.0), "here");
  CHECK((a - b).norm() < 1e-12);
  CHECK(a.sum() == Catch::Approx(1.0).margin(1e-12));

  Vec dead = Vec::Constant(3, -std::numeric_limits<double>::infinity());
  CHECK_THROWS_WITH(sebm::detail::normalize_logweights(dead, "at step 4"),
                    Catch::Matchers::ContainsSubstring("vanished")
                        && Catch::Matchers::ContainsSubstring("step 4"));
}

TEST_CASE("effective sample size limits") {
  CHECK(effective_sample_size(Vec::Constant(10, 0.1)) == Catch::Approx(10.0));
  Vec spiky = Vec::Zero(10);
  spiky[3] = 1.0;
  CHECK(effective_sample_size(spiky) == Catch::Approx(1.0));
}

TEST_CASE("a single-particle filter degenerates as expected") {
  const auto w = make_world();
  RngStream data_rng{123, 0};
  const auto traj = simulate(w.theta, 30, w.ops, w.noise, data_rng);
  RngStream obs_rng{123, 1};
  const auto obs = observe_trajectory(traj, w.nodes, w.sigma_eps, obs_rng);
  const auto prop = build_proposal_model(w.ops, w.noise, w.nodes, w.sigma_eps);

  const auto sys = sir_filter(w.theta, obs, w.ops, w.noise, prop, 1, SweepRng{9});
  CHECK(sys.n_particles() == 1);
  CHECK(sys.weights.minCoeff() == 1.0);
  CHECK((sys.ancestors.array() == 0).all());
  const Mat path = sys.trace_back(0);
  CHECK(path.allFinite());
  CHECK(path.rows() == 30);
}

TEST_CASE("the filter tracks the truth at observed nodes") {
  const auto w = make_world();
  RngStream data_rng{127, 0};
  const auto traj = simulate(w.theta, 150, w.ops, w.noise, data_rng);
  RngStream obs_rng{127, 1};
  const auto obs = observe_trajectory(traj, w.nodes, w.sigma_eps, obs_rng);
  const auto prop = build_proposal_model(w.ops, w.noise, w.nodes, w.sigma_eps);

  const auto sys = sir_filter(w.theta, obs, w.ops, w.noise, prop, 200, SweepRng{13});

  double sq = 0.0;
  int count = 0;
  for (Index n = 0; n < sys.n_steps(); ++n) {
    const Vec w_n = sys.weights.row(n);
    const Vec mean = sys.states[static_cast<std::size_t>(n)].transpose() * w_n;
    for (int node : w.nodes) {
      const double err = mean[node] - traj.states(n, node);
      sq += err * err;
      ++count;
    }
  }
  CHECK(std::sqrt(sq / count) < 3.0 * w.sigma_eps);
}

TEST_CASE("filter output is reproducible and seed sensitive") {
  const auto w = make_world();
  RngStream data_rng{131, 0};
  const auto traj = simulate(w.theta, 25, w.ops, w.noise, data_rng);
  RngStream obs_rng{131, 1};
  const auto obs = observe_trajectory(traj, w.nodes, w.sigma_eps, obs_rng);
  const auto prop = build_proposal_model(w.ops, w.noise, w.nodes, w.sigma_eps);

  const auto a = sir_filter(w.theta, obs, w.ops, w.noise, prop, 20, SweepRng{77});
  const auto b = sir_filter(w.theta, obs, w.ops, w.noise, prop, 20, SweepRng{77});
  CHECK(a.weights == b.weights);
  CHECK(a.ancestors == b.ancestors);
  for (std::size_t n = 0; n < a.states.size(); ++n) CHECK(a.states[n] == b.states[n]);

  const Mat path_a = sample_trajectory(a, SweepRng{77});
  const Mat path_b = sample_trajectory(b, SweepRng{77});
  CHECK(path_a == path_b);

  const auto c = sir_filter(w.theta, obs, w.ops, w.noise, prop, 20, SweepRng{78});
  CHECK(a.weights != c.weights);
}
