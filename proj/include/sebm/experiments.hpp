#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "diagnostics.hpp"
#include "estimators.hpp"
#include "fem.hpp"
#include "forcing.hpp"
#include "io.hpp"
#include "mesh.hpp"
#include "model.hpp"
#include "observation.hpp"
#include "pgas.hpp"
#include "posterior.hpp"
#include "smc.hpp"
#include "types.hpp"

#include <json.hpp>

namespace sebm {

struct RunConfig {
  ModelConfig model;
  ParamPrior prior = ParamPrior::gaussian_default();
  int n_sweeps = 10000;   // chain length
  int n_particles = 5;
  int thin = 1;
  double burn_in_frac = 0.1;
  int replicates = 20;
  bool has_true_theta = false;
  ThetaParams true_theta;
  std::string obs_preset = "6"; // 6 | 2 | all
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int study_traj_steps = 10000;
  std::vector<int> study_eval_steps = {100, 1000, 10000};
  int acf_max_lag = 100;
  int workers = 0; // 0 = hardware concurrency
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"nu", c.model.nu},
      {"sigma_f", c.model.sigma_f},
      {"rho", c.model.rho},
      {"dt", c.model.dt},
      {"sigma_eps", c.model.sigma_eps},
      {"observed_nodes", c.model.observed_nodes},
      {"n_steps", c.model.n_steps},
      {"subdivisions", c.model.subdivisions},
      {"u_init", c.model.u_init},
      {"prior", c.prior.kind == ParamPrior::Kind::uniform ? "uniform" : "gaussian"},
      {"L", c.n_sweeps},
      {"M", c.n_particles},
      {"thin", c.thin},
      {"burn_in", c.burn_in_frac},
      {"replicates", c.replicates},
      {"obs_preset", c.obs_preset},
      {"seed", c.seed},
      {"out", c.out_dir},
      {"study_traj_steps", c.study_traj_steps},
      {"study_eval_steps", c.study_eval_steps},
      {"acf_max_lag", c.acf_max_lag},
      {"workers", c.workers},
  };
  if (c.has_true_theta)
    j["true_theta"] = {c.true_theta.theta0, c.true_theta.theta1, c.true_theta.theta4};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c.model.nu = j.value("nu", c.model.nu);
  c.model.sigma_f = j.value("sigma_f", c.model.sigma_f);
  c.model.rho = j.value("rho", c.model.rho);
  c.model.dt = j.value("dt", c.model.dt);
  c.model.sigma_eps = j.value("sigma_eps", c.model.sigma_eps);
  c.model.observed_nodes = j.value("observed_nodes", c.model.observed_nodes);
  c.model.n_steps = j.value("n_steps", c.model.n_steps);
  c.model.subdivisions = j.value("subdivisions", c.model.subdivisions);
  c.model.u_init = j.value("u_init", c.model.u_init);
  const std::string prior = j.value("prior", std::string("gaussian"));
  if (prior == "uniform") c.prior = ParamPrior::uniform_default();
  else if (prior == "gaussian") c.prior = ParamPrior::gaussian_default();
  else throw std::invalid_argument("unknown prior kind: " + prior);
  c.n_sweeps = j.value("L", c.n_sweeps);
  c.n_particles = j.value("M", c.n_particles);
  c.thin = j.value("thin", c.thin);
  c.burn_in_frac = j.value("burn_in", c.burn_in_frac);
  c.replicates = j.value("replicates", c.replicates);
  c.obs_preset = j.value("obs_preset", c.obs_preset);
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out", c.out_dir);
  c.study_traj_steps = j.value("study_traj_steps", c.study_traj_steps);
  c.study_eval_steps = j.value("study_eval_steps", c.study_eval_steps);
  c.acf_max_lag = j.value("acf_max_lag", c.acf_max_lag);
  c.workers = j.value("workers", c.workers);
  if (j.contains("true_theta")) {
    const auto t = j.at("true_theta").get<std::vector<double>>();
    if (t.size() != 3) throw std::invalid_argument("true_theta needs 3 entries");
    c.has_true_theta = true;
    c.true_theta = ThetaParams{t[0], t[1], t[2]};
  }
}

inline RunConfig load_config(const std::string& path) {
  auto in = open_in(path);
  nlohmann::json j;
  in >> j;
  return j.get<RunConfig>();
}

// Evenly spread observed-node choices; "6" and "2" match the default mesh
// conventions, "all" observes every vertex.
inline std::vector<int> preset_nodes(const std::string& preset, Index n_vertices) {
  if (preset == "all") {
    std::vector<int> nodes(static_cast<std::size_t>(n_vertices));
    for (Index i = 0; i < n_vertices; ++i) nodes[static_cast<std::size_t>(i)] = static_cast<int>(i);
    return nodes;
  }
  const int count = std::stoi(preset);
  if (count < 1 || count > n_vertices) throw std::invalid_argument("bad obs preset: " + preset);
  std::vector<int> nodes(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    nodes[static_cast<std::size_t>(i)] = static_cast<int>(static_cast<Index>(i) * n_vertices / count);
  return nodes;
}

struct ModelBundle {
  SphereMesh mesh;
  FemOperators ops;
  NoiseModel noise;
};

inline ModelBundle build_bundle(const ModelConfig& model) {
  ModelBundle b;
  b.mesh = build_icosahedron_mesh(model.subdivisions);
  model.validate(b.mesh.n_vertices());
  b.ops = assemble_operators(b.mesh, model.nu, model.rho, model.dt);
  b.noise = build_noise_model(b.ops, model.sigma_f, model.dt);
  return b;
}

namespace detail {

// fixed stream roles for data generation and chains, one family per replicate
inline RngStream data_stream(std::uint64_t seed, int replicate, std::uint64_t role) {
  return RngStream{seed, static_cast<std::uint64_t>(replicate), role};
}
inline constexpr std::uint64_t role_theta_true = 0xA;
inline constexpr std::uint64_t role_simulate = 0xB;
inline constexpr std::uint64_t role_observe = 0xC;
inline constexpr std::uint64_t role_perturb = 0xD;

inline std::uint64_t chain_seed(std::uint64_t seed, int replicate) {
  return hash_mix(hash_mix(seed, 0xC4A1ULL), static_cast<std::uint64_t>(replicate));
}

inline void run_replicates(int count, int workers, const std::function<void(int)>& fn) {
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int r = 0; r < count; ++r) fn(r);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int r = next.fetch_add(1); r < count; r = next.fetch_add(1)) fn(r);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void write_manifest(const std::string& dir, const RunConfig& cfg, const std::string& command,
                           double seconds) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = cfg;
  j["elapsed_seconds"] = seconds;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "."
               + std::to_string(EIGEN_MINOR_VERSION);
  const auto now = std::chrono::system_clock::now();
  j["unix_time"] = std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
  auto out = open_out(dir + "/manifest.json");
  out << j.dump(2) << "\n";
}

class Timer {
public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

} // namespace detail

struct SimulateResult {
  ThetaParams theta;
  Mat states;
  Observations obs;
  std::string dir;
};

inline SimulateResult cmd_simulate(const RunConfig& cfg) {
  const detail::Timer timer;
  ModelBundle b = build_bundle(cfg.model);
  RunConfig effective = cfg;
  effective.model.observed_nodes = preset_nodes(cfg.obs_preset, b.mesh.n_vertices());

  SimulateResult res;
  auto theta_rng = detail::data_stream(cfg.seed, 0, detail::role_theta_true);
  res.theta = cfg.has_true_theta ? cfg.true_theta : sample_param_prior(cfg.prior, theta_rng);
  auto sim_rng = detail::data_stream(cfg.seed, 0, detail::role_simulate);
  const Trajectory traj = simulate(res.theta, cfg.model.n_steps, b.ops, b.noise, sim_rng, cfg.model.u_init);
  res.states = traj.states;
  auto obs_rng = detail::data_stream(cfg.seed, 0, detail::role_observe);
  res.obs = observe_trajectory(traj, effective.model.observed_nodes, cfg.model.sigma_eps, obs_rng);
  res.dir = cfg.out_dir;

  std::filesystem::create_directories(res.dir);
  write_trajectory_csv(res.dir + "/trajectory.csv", res.states);
  write_observations_csv(res.dir + "/observations.csv", res.obs);
  const double lo = res.states.minCoeff(), hi = res.states.maxCoeff();
  const Histogram h = histogram(Vec(res.states.reshaped()), lo, hi + 1e-12, 40);
  Mat hist_table(h.counts.size(), 3);
  for (Index i = 0; i < h.counts.size(); ++i)
    hist_table.row(i) << h.edges[i], h.edges[i + 1], h.counts[i];
  write_csv(res.dir + "/climatology_hist.csv", hist_table, {"bin_lo", "bin_hi", "count"});
  detail::write_manifest(res.dir, effective, "simulate", timer.seconds());
  return res;
}

struct MleStudyResult {
  std::vector<int> eval_steps;
  Mat cond_numbers;             // replicates x eval steps, true-state stats
  std::array<Mat, 3> err_true;  // per coefficient: replicates x eval steps
  std::array<Mat, 3> err_noisy; // same, states perturbed by sigma_eps noise
  std::string dir;
};

inline MleStudyResult cmd_mle_study(const RunConfig& cfg) {
  if (cfg.replicates < 2) throw std::invalid_argument("mle study needs at least two replicates");
  const detail::Timer timer;
  const ModelBundle b = build_bundle(cfg.model);

  MleStudyResult res;
  res.eval_steps = cfg.study_eval_steps;
  std::sort(res.eval_steps.begin(), res.eval_steps.end());
  const int n_eval = static_cast<int>(res.eval_steps.size());
  const int max_steps = std::max(cfg.study_traj_steps, res.eval_steps.back());
  res.cond_numbers.resize(cfg.replicates, n_eval);
  for (auto& m : res.err_true) m.resize(cfg.replicates, n_eval);
  for (auto& m : res.err_noisy) m.resize(cfg.replicates, n_eval);

  detail::run_replicates(cfg.replicates, cfg.workers, [&](int r) {
    auto theta_rng = detail::data_stream(cfg.seed, r, detail::role_theta_true);
    const ThetaParams theta_true = sample_param_prior(cfg.prior, theta_rng);
    auto sim_rng = detail::data_stream(cfg.seed, r, detail::role_simulate);
    const Trajectory traj = simulate(theta_true, max_steps, b.ops, b.noise, sim_rng, cfg.model.u_init);

    Mat noisy = traj.states;
    auto perturb_rng = detail::data_stream(cfg.seed, r, detail::role_perturb);
    for (Index i = 0; i < noisy.rows(); ++i)
      for (Index j = 0; j < noisy.cols(); ++j) noisy(i, j) += cfg.model.sigma_eps * perturb_rng.normal();

    for (int s = 0; s < n_eval; ++s) {
      const int n = res.eval_steps[static_cast<std::size_t>(s)];
      const SufficientStats stats = sufficient_stats(Mat(traj.states.topRows(n)), b.ops, b.noise, cfg.model.u_init);
      res.cond_numbers(r, s) = condition_number(stats.fisher);
      const Vec3 est = mle(stats).as_vec() - theta_true.as_vec();
      const SufficientStats stats_noisy = sufficient_stats(Mat(noisy.topRows(n)), b.ops, b.noise, cfg.model.u_init);
      const Vec3 est_noisy = mle(stats_noisy).as_vec() - theta_true.as_vec();
      for (int k = 0; k < 3; ++k) {
        res.err_true[static_cast<std::size_t>(k)](r, s) = est[k];
        res.err_noisy[static_cast<std::size_t>(k)](r, s) = est_noisy[k];
      }
    }
  });

  res.dir = cfg.out_dir;
  std::filesystem::create_directories(res.dir);
  auto sd = [](const Vec& col) {
    const double mean = col.mean();
    return std::sqrt((col.array() - mean).square().sum() / static_cast<double>(col.size() - 1));
  };
  Mat summary(n_eval, 9);
  for (int s = 0; s < n_eval; ++s) {
    const Vec log_cond = res.cond_numbers.col(s).array().log10();
    summary(s, 0) = res.eval_steps[static_cast<std::size_t>(s)];
    summary(s, 1) = log_cond.mean();
    summary(s, 2) = sd(log_cond);
    for (int k = 0; k < 3; ++k) {
      summary(s, 3 + k) = sd(res.err_true[static_cast<std::size_t>(k)].col(s));
      summary(s, 6 + k) = sd(res.err_noisy[static_cast<std::size_t>(k)].col(s));
    }
  }
  write_csv(res.dir + "/mle_study.csv", summary,
            {"n_steps", "log10_cond_mean", "log10_cond_sd", "err_sd_theta0", "err_sd_theta1",
             "err_sd_theta4", "noisy_err_sd_theta0", "noisy_err_sd_theta1", "noisy_err_sd_theta4"});
  detail::write_manifest(res.dir, cfg, "mle-study", timer.seconds());
  return res;
}

struct InferResult {
  ThetaParams true_theta;
  Mat true_states;
  PosteriorSummary summary;
  StateMetrics metrics;
  Vec update_rates;
  double mean_update_rate = 0.0;
  int theta0_corr_length = 0;
  Equilibrium equilibrium;
  std::string dir;
};

inline InferResult cmd_infer(const RunConfig& cfg, int replicate = 0, bool write_files = true) {
  const detail::Timer timer;
  const ModelBundle b = build_bundle(cfg.model);
  const std::vector<int> nodes = preset_nodes(cfg.obs_preset, b.mesh.n_vertices());

  InferResult res;
  auto theta_rng = detail::data_stream(cfg.seed, replicate, detail::role_theta_true);
  res.true_theta = cfg.has_true_theta ? cfg.true_theta : sample_param_prior(cfg.prior, theta_rng);
  auto sim_rng = detail::data_stream(cfg.seed, replicate, detail::role_simulate);
  const Trajectory truth = simulate(res.true_theta, cfg.model.n_steps, b.ops, b.noise, sim_rng, cfg.model.u_init);
  res.true_states = truth.states;
  auto obs_rng = detail::data_stream(cfg.seed, replicate, detail::role_observe);
  const Observations obs = observe_trajectory(truth, nodes, cfg.model.sigma_eps, obs_rng);

  const ClimatologicalPrior clim = fit_climatological_prior(obs, cfg.model.sigma_eps);
  const ProposalModel prop = build_proposal_model(b.ops, b.noise, nodes, cfg.model.sigma_eps, &clim);
  const Chain chain = run_pgas(cfg.prior, obs, b.ops, b.noise, prop, cfg.n_sweeps, cfg.n_particles,
                               detail::chain_seed(cfg.seed, replicate), cfg.model.u_init, cfg.thin);

  res.update_rates = update_rate(chain);
  res.mean_update_rate = res.update_rates.mean();
  const Index start = burn_in_start(chain.n_sweeps(), cfg.burn_in_frac);
  const Vec theta0_series = chain.theta_samples.col(0).bottomRows(chain.n_sweeps() - start);
  const int max_lag = std::min<int>(cfg.acf_max_lag, static_cast<int>(theta0_series.size()) - 1);
  AcfResult acf{Vec::Ones(1), 0};
  if ((theta0_series.array() != theta0_series[0]).any()) acf = acf_and_corrlength(theta0_series, max_lag);
  res.theta0_corr_length = acf.corr_length;

  auto log_post = [&](const ThetaParams& theta, const Mat& states) {
    Trajectory t;
    t.states = states;
    t.theta_used = theta;
    return log_regularized_posterior(theta, t, obs, cfg.prior, clim, b.ops, b.noise, cfg.model.u_init);
  };
  res.summary = posterior_summary(chain, log_post, cfg.prior, cfg.burn_in_frac);
  res.metrics = state_metrics(chain, res.true_states, 0.9, cfg.burn_in_frac);
  res.equilibrium = equilibrium_and_feedback(ThetaParams::from_vec(res.summary.mean));

  res.dir = replicate == 0 ? cfg.out_dir : cfg.out_dir + "/rep" + std::to_string(replicate);
  if (write_files) {
    std::filesystem::create_directories(res.dir);
    write_theta_samples_csv(res.dir + "/theta_samples.csv", chain);
    write_states_csv(res.dir + "/states.csv", chain);
    write_flags_csv(res.dir + "/flags.csv", chain);
    write_csv(res.dir + "/update_rate.csv", Mat(res.update_rates), {"rate"});
    write_csv(res.dir + "/acf_theta0.csv", Mat(acf.acf), {"acf"});
    write_trajectory_csv(res.dir + "/true_trajectory.csv", res.true_states);
    for (int k = 0; k < 3; ++k) {
      const Histogram& h = res.summary.marginals[static_cast<std::size_t>(k)];
      Mat table(h.counts.size(), 3);
      for (Index i = 0; i < h.counts.size(); ++i) table.row(i) << h.edges[i], h.edges[i + 1], h.counts[i];
      write_csv(res.dir + "/marginal_theta" + std::to_string(k == 2 ? 4 : k) + ".csv", table,
                {"bin_lo", "bin_hi", "count"});
    }

    nlohmann::json report;
    report["prior"] = cfg.prior.kind == ParamPrior::Kind::uniform ? "uniform" : "gaussian";
    report["true_theta"] = {res.true_theta.theta0, res.true_theta.theta1, res.true_theta.theta4};
    report["theta_mean"] = {res.summary.mean[0], res.summary.mean[1], res.summary.mean[2]};
    report["theta_map"] = {res.summary.map[0], res.summary.map[1], res.summary.map[2]};
    report["rel_error_traj_percent"] = res.metrics.rel_error_traj;
    report["coverage_percent"] = res.metrics.coverage;
    report["mean_update_rate"] = res.mean_update_rate;
    report["theta0_corr_length"] = res.theta0_corr_length;
    report["equilibrium"] = res.equilibrium.u_e;
    report["feedback"] = res.equilibrium.feedback;
    auto out = open_out(res.dir + "/report.json");
    out << report.dump(2) << "\n";
    detail::write_manifest(res.dir, cfg, "infer", timer.seconds());
  }
  return res;
}

// Independent replicate chains, each on its own synthetic data set.
inline std::vector<InferResult> infer_replicates(const RunConfig& cfg, bool write_files = false) {
  std::vector<InferResult> results(static_cast<std::size_t>(cfg.replicates));
  detail::run_replicates(cfg.replicates, cfg.workers, [&](int r) {
    results[static_cast<std::size_t>(r)] = cmd_infer(cfg, r, write_files);
  });
  return results;
}

struct ReportRow {
  std::string prior;
  int count = 0;
  Vec3 err_mean = Vec3::Zero();
  Vec3 err_sd = Vec3::Zero();
  double rel_error_mean = 0.0, rel_error_sd = 0.0;
  double coverage_mean = 0.0, coverage_sd = 0.0;
};

inline std::vector<ReportRow> cmd_report(const std::vector<std::string>& run_dirs,
                                         const std::string& out_path) {
  struct Entry {
    Vec3 err;
    double rel_error, coverage;
  };
  std::map<std::string, std::vector<Entry>> by_prior;
  for (const auto& dir : run_dirs) {
    try {
      auto in = open_in(dir + "/report.json");
      nlohmann::json j;
      in >> j;
      const auto tt = j.at("true_theta").get<std::vector<double>>();
      const auto tm = j.at("theta_mean").get<std::vector<double>>();
      Entry e;
      e.err = Vec3(tm[0] - tt[0], tm[1] - tt[1], tm[2] - tt[2]);
      e.rel_error = j.at("rel_error_traj_percent").get<double>();
      e.coverage = j.at("coverage_percent").get<double>();
      by_prior[j.at("prior").get<std::string>()].push_back(e);
    } catch (const std::exception& e) {
      std::cerr << "skipping " << dir << ": " << e.what() << "\n";
    }
  }
  if (by_prior.empty()) throw std::runtime_error("no readable run reports");

  std::vector<ReportRow> rows;
  for (const auto& [prior, entries] : by_prior) {
    ReportRow row;
    row.prior = prior;
    row.count = static_cast<int>(entries.size());
    const double n = static_cast<double>(entries.size());
    for (const auto& e : entries) {
      row.err_mean += e.err;
      row.rel_error_mean += e.rel_error;
      row.coverage_mean += e.coverage;
    }
    row.err_mean /= n;
    row.rel_error_mean /= n;
    row.coverage_mean /= n;
    if (entries.size() > 1) {
      for (const auto& e : entries) {
        row.err_sd += (e.err - row.err_mean).cwiseAbs2();
        row.rel_error_sd += (e.rel_error - row.rel_error_mean) * (e.rel_error - row.rel_error_mean);
        row.coverage_sd += (e.coverage - row.coverage_mean) * (e.coverage - row.coverage_mean);
      }
      row.err_sd = (row.err_sd / (n - 1.0)).cwiseSqrt();
      row.rel_error_sd = std::sqrt(row.rel_error_sd / (n - 1.0));
      row.coverage_sd = std::sqrt(row.coverage_sd / (n - 1.0));
    }
    rows.push_back(row);
  }

  auto out = open_out(out_path);
  out << "prior,count,err0_mean,err0_sd,err1_mean,err1_sd,err4_mean,err4_sd,"
         "rel_error_mean,rel_error_sd,coverage_mean,coverage_sd\n";
  for (const auto& r : rows) {
    out << r.prior << "," << r.count;
    for (int k = 0; k < 3; ++k) out << "," << format_double(r.err_mean[k]) << "," << format_double(r.err_sd[k]);
    out << "," << format_double(r.rel_error_mean) << "," << format_double(r.rel_error_sd) << ","
        << format_double(r.coverage_mean) << "," << format_double(r.coverage_sd) << "\n";
  }
  return rows;
}

} // namespace sebm
