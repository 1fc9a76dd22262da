#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <vector>

#include <sebm/estimators.hpp>
#include <sebm/fem.hpp>
#include <sebm/forcing.hpp>
#include <sebm/mesh.hpp>
#include <sebm/model.hpp>

#include "oracles.hpp"

using namespace sebm;

namespace {

FemOperators make_ops() { return assemble_operators(build_icosahedron_mesh(), 0.1, 1.0, 0.01); }

struct GridMoments {
  Vec3 mean;
  Mat3 cov;
};

// Midpoint-rule moments of exp(-0.5 t'At + t'eta + log prior terms) over a box.
GridMoments grid_moments(const std::function<double(const Vec3&)>& logdens, const Vec3& lo,
                         const Vec3& hi, int pts) {
  std::vector<double> w;
  std::vector<Vec3> x;
  w.reserve(static_cast<std::size_t>(pts) * pts * pts);
  x.reserve(w.capacity());
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < pts; ++i)
    for (int j = 0; j < pts; ++j)
      for (int k = 0; k < pts; ++k) {
        Vec3 t;
        t[0] = lo[0] + (hi[0] - lo[0]) * (i + 0.5) / pts;
        t[1] = lo[1] + (hi[1] - lo[1]) * (j + 0.5) / pts;
        t[2] = lo[2] + (hi[2] - lo[2]) * (k + 0.5) / pts;
        const double l = logdens(t);
        best = std::max(best, l);
        w.push_back(l);
        x.push_back(t);
      }
  double z = 0.0;
  Vec3 mean = Vec3::Zero();
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(w[i] - best);
    z += w[i];
    mean += w[i] * x[i];
  }
  mean /= z;
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Vec3 d = x[i] - mean;
    cov += w[i] * d * d.transpose();
  }
  cov /= z;
  return {mean, cov};
}

}  // namespace

TEST_CASE("sufficient statistics match a direct dense computation") {
  const auto ops = make_ops();
  const auto noise = build_noise_model(ops, 0.1, ops.dt);
  const ThetaParams theta{30.11, -24.08, -5.40};
  RngStream rng{91, 0};
  const auto traj = simulate(theta, 40, ops, noise, rng);

  const auto stats = sufficient_stats(traj.states, ops, noise);
  CHECK(stats.n_steps == 40);

  const Mat r_inv = noise.cov.inverse();
  Mat3 fisher = Mat3::Zero();
  Vec3 rhs = Vec3::Zero();
  Vec prev = initial_state(ops);
  for (Index n = 0; n < traj.states.rows(); ++n) {
    const auto g = g_basis(prev, ops);
    Mat basis(ops.n_vertices(), 3);
    basis.col(0) = g[0];
    basis.col(1) = g[1];
    basis.col(2) = g[2];
    const Vec resid = Vec(traj.states.row(n).transpose()) - ops.timestep_solve(Vec(ops.mass * prev));
    fisher += basis.transpose() * r_inv * basis;
    rhs += basis.transpose() * r_inv * resid;
    prev = traj.states.row(n);
  }
  fisher /= 40.0;
  rhs /= 40.0;
  CHECK((stats.fisher - fisher).norm() < 1e-10 * fisher.norm());
  CHECK((stats.rhs - rhs).norm() < 1e-10 * rhs.norm());
}

TEST_CASE("path likelihood is the quadratic form induced by the statistics") {
  const auto ops = make_ops();
  const auto noise = build_noise_model(ops, 0.1, ops.dt);
  const ThetaParams theta{30.11, -24.08, -5.40};
  RngStream rng{93, 0};
  const auto traj = simulate(theta, 30, ops, noise, rng);
  const auto stats = sufficient_stats(traj.states, ops, noise);

  const auto quad = [&](const Vec3& t) {
    return -0.5 * double(stats.n_steps) * t.dot(stats.fisher * t)
           + double(stats.n_steps) * t.dot(stats.rhs);
  };
  const Vec3 a(29.0, -23.0, -5.0);
  const Vec3 b(31.0, -25.0, -5.8);
  Trajectory ta = traj, tb = traj;
  const double diff = log_state_sequence(ta, ThetaParams::from_vec(a), ops, noise)
                      - log_state_sequence(tb, ThetaParams::from_vec(b), ops, noise);
  const double want = quad(a) - quad(b);
  CHECK(diff == Catch::Approx(want).epsilon(1e-9));
}

TEST_CASE("noise-free paths are inverted exactly") {
  const auto ops = make_ops();
  const auto noise = build_noise_model(ops, 0.1, ops.dt);
  const ThetaParams theta{30.11, -24.08, -5.40};

  Mat states(50, ops.n_vertices());
  Vec u = initial_state(ops, 0.85);
  for (Index n = 0; n < states.rows(); ++n) {
    u = mu_theta(u, theta, ops);
    states.row(n) = u;
  }
  const auto stats = sufficient_stats(states, ops, noise, 0.85);
  const auto est = mle(stats);
  CHECK((est.as_vec() - theta.as_vec()).norm() < 1e-6);
}

TEST_CASE("mle solves the normal equations and rejects singular systems") {
  SufficientStats stats;
  stats.fisher = Mat3::Identity();
  stats.rhs = Vec3(2.0, -3.0, 0.5);
  stats.n_steps = 1;
  CHECK((mle(stats).as_vec() - stats.rhs).norm() < 1e-14);

  Mat3 m;
  m << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  stats.fisher = m;
  const Vec3 truth(1.0, 2.0, -1.0);
  stats.rhs = m * truth;
  CHECK((mle(stats).as_vec() - truth).norm() < 1e-12);

  stats.fisher = Mat3::Zero();
  stats.fisher(0, 0) = 1.0;
  CHECK_THROWS_WITH(mle(stats), Catch::Matchers::ContainsSubstring("singular"));
}

TEST_CASE("condition number basics") {
  CHECK(condition_number(Mat3::Identity()) == 1.0);
  CHECK(condition_number(Vec3(1.0, 1e-8, 1.0).asDiagonal())
        == Catch::Approx(1e8).epsilon(1e-6));
  CHECK_THROWS_AS(condition_number(Mat3::Zero()), std::invalid_argument);
}

TEST_CASE("a realistic path produces a badly conditioned information matrix") {
  const auto ops = make_ops();
  const auto noise = build_noise_model(ops, 0.1, ops.dt);
  const ThetaParams theta{30.11, -24.08, -5.40};
  RngStream rng{55, 0};
  const auto traj = simulate(theta, 1000, ops, noise, rng);
  const auto stats = sufficient_stats(traj.states, ops, noise);
  CHECK(condition_number(stats.fisher) >= 1e6);
}

TEST_CASE("empty statistics reduce the conditional to the prior") {
  SufficientStats stats;  // zero fisher and rhs

  const auto g = ParamPrior::gaussian_default();
  const int n_draws = 4000;
  Mat draws(n_draws, 3);
  RngStream rng{97, 0};
  for (int i = 0; i < n_draws; ++i)
    draws.row(i) = sample_theta_conditional(stats, g, rng).as_vec();
  for (int k = 0; k < 3; ++k) {
    std::vector<double> u(n_draws);
    for (int i = 0; i < n_draws; ++i)
      u[static_cast<std::size_t>(i)] = oracle::norm_cdf((draws(i, k) - g.mean[k]) / g.sd[k]);
    const double d = oracle::ks_one_sample_vs_cdf(u, [](double x) { return x; });
    CHECK(d < 1.628 / std::sqrt(double(n_draws)));
  }

  const auto box = ParamPrior::uniform_default();
  RngStream urng{97, 1};
  Mat udraws(n_draws, 3);
  for (int i = 0; i < n_draws; ++i) {
    const auto t = sample_theta_conditional(stats, box, urng);
    REQUIRE(box.in_box(t.as_vec()));
    udraws.row(i) = t.as_vec();
  }
  for (int k = 0; k < 3; ++k) {
    const double width = box.hi[k] - box.lo[k];
    std::vector<double> u(n_draws);
    for (int i = 0; i < n_draws; ++i)
      u[static_cast<std::size_t>(i)] = (udraws(i, k) - box.lo[k]) / width;
    const double d = oracle::ks_one_sample_vs_cdf(u, [](double x) { return x; });
    CHECK(d < 1.628 / std::sqrt(double(n_draws)));
  }
}

TEST_CASE("gaussian-prior conditional matches grid integration") {
  SufficientStats stats;
  stats.fisher << 1.1, 0.3, -0.1, 0.3, 2.2, 0.4, -0.1, 0.4, 9.0;
  stats.rhs = stats.fisher * Vec3(30.6, -23.5, -5.2);
  stats.n_steps = 100;
  const auto prior = ParamPrior::gaussian_default();

  const auto logdens = [&](const Vec3& t) {
    double lp = -0.5 * t.dot(stats.fisher * t) + t.dot(stats.rhs);
    for (int k = 0; k < 3; ++k) {
      const double z = (t[k] - prior.mean[k]) / prior.sd[k];
      lp -= 0.5 * z * z;
    }
    return lp;
  };
  // A generous window: prior sd is the widest scale in play.
  const Vec3 lo = prior.mean - 6.0 * prior.sd;
  const Vec3 hi = prior.mean + 6.0 * prior.sd;
  const auto grid = grid_moments(logdens, lo, hi, 64);

  const int n_draws = 20000;
  RngStream rng{101, 0};
  Mat draws(n_draws, 3);
  for (int i = 0; i < n_draws; ++i)
    draws.row(i) = sample_theta_conditional(stats, prior, rng).as_vec();
  const Vec3 mean = draws.colwise().mean();
  Mat3 cov = Mat3::Zero();
  for (int i = 0; i < n_draws; ++i) {
    const Vec3 d = Vec3(draws.row(i)) - mean;
    cov += d * d.transpose();
  }
  cov /= double(n_draws - 1);

  for (int k = 0; k < 3; ++k) {
    const double se = std::sqrt(grid.cov(k, k) / n_draws);
    CHECK(std::abs(mean[k] - grid.mean[k]) < 4.0 * se);
  }
  CHECK((cov - grid.cov).norm() < 0.05 * grid.cov.norm());
}

TEST_CASE("uniform-prior conditional matches grid integration on the box") {
  const auto prior = ParamPrior::uniform_default();
  SufficientStats stats;
  stats.fisher << 0.8, 0.1, 0.0, 0.1, 1.2, -0.1, 0.0, -0.1, 25.0;
  stats.rhs = stats.fisher * Vec3(30.0, -24.0, -5.3);
  stats.n_steps = 100;

  const auto logdens = [&](const Vec3& t) {
    return -0.5 * t.dot(stats.fisher * t) + t.dot(stats.rhs);
  };
  const auto grid = grid_moments(logdens, prior.lo, prior.hi, 64);

  const int n_draws = 20000;
  RngStream rng{103, 0};
  Mat draws(n_draws, 3);
  for (int i = 0; i < n_draws; ++i) {
    const auto t = sample_theta_conditional(stats, prior, rng);
    REQUIRE(prior.in_box(t.as_vec()));
    draws.row(i) = t.as_vec();
  }
  const Vec3 mean = draws.colwise().mean();
  for (int k = 0; k < 3; ++k) {
    const double se = std::sqrt(grid.cov(k, k) / n_draws);
    CHECK(std::abs(mean[k] - grid.mean[k]) < 4.0 * se + 0.002 * (prior.hi[k] - prior.lo[k]));
  }
}

TEST_CASE("uniform-prior conditional survives an out-of-box likelihood mode") {
  const auto prior = ParamPrior::uniform_default();
  SufficientStats stats;
  stats.fisher = Vec3(4.0, 3.0, 40.0).asDiagonal();
  // Likelihood mode well outside the box on the first coordinate.
  stats.rhs = stats.fisher * Vec3(35.0, -24.0, -5.3);
  stats.n_steps = 100;

  const auto logdens = [&](const Vec3& t) {
    return -0.5 * t.dot(stats.fisher * t) + t.dot(stats.rhs);
  };
  const auto grid = grid_moments(logdens, prior.lo, prior.hi, 64);

  const int n_draws = 4000;
  RngStream rng{107, 0};
  Mat draws(n_draws, 3);
  for (int i = 0; i < n_draws; ++i) {
    const auto t = sample_theta_conditional(stats, prior, rng);
    REQUIRE(prior.in_box(t.as_vec()));
    draws.row(i) = t.as_vec();
  }
  const Vec3 mean = draws.colwise().mean();
  // The mass piles up against the upper edge of the first coordinate.
  CHECK(mean[0] > 32.0);
  for (int k = 0; k < 3; ++k) {
    const double se = std::sqrt(grid.cov(k, k) / n_draws);
    CHECK(std::abs(mean[k] - grid.mean[k]) < 4.0 * se + 0.005 * (prior.hi[k] - prior.lo[k]));
  }
}

TEST_CASE("non-finite statistics are rejected") {
  SufficientStats stats;
  stats.fisher(0, 0) = std::numeric_limits<double>::quiet_NaN();
  RngStream rng{1, 1};
  CHECK_THROWS_AS(sample_theta_conditional(stats, ParamPrior::gaussian_default(), rng),
                  std::invalid_argument);
}
