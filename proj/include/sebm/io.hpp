#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mesh.hpp"
#include "model.hpp"
#include "observation.hpp"
#include "pgas.hpp"
#include "types.hpp"

#include <json.hpp>

namespace sebm {

// shortest round-trip decimal form
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary); // keep LF endings everywhere
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return in;
}

inline void write_csv(const std::string& path, const Mat& m,
                      const std::vector<std::string>& header = {}) {
  auto out = open_out(path);
  if (!header.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
  }
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_double(m(r, c));
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Mat read_csv(const std::string& path, bool skip_header = true) {
  auto in = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first && skip_header) {
      first = false;
      continue;
    }
    first = false;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error("ragged csv: " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("empty csv: " + path);
  Mat m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

inline void write_trajectory_csv(const std::string& path, const Mat& states) {
  std::vector<std::string> header;
  for (Index v = 0; v < states.cols(); ++v) header.push_back("u" + std::to_string(v));
  write_csv(path, states, header);
}

inline Mat read_trajectory_csv(const std::string& path) { return read_csv(path); }

inline void write_observations_csv(const std::string& path, const Observations& obs) {
  auto out = open_out(path);
  out << "step,node_index,value\n";
  for (Index n = 0; n < obs.n_steps(); ++n)
    for (Index i = 0; i < obs.n_observed(); ++i)
      out << n << "," << obs.observed_nodes[static_cast<std::size_t>(i)] << ","
          << format_double(obs.y(n, i)) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Observations read_observations_csv(const std::string& path, const std::vector<int>& expected_nodes,
                                          double sigma_eps) {
  const Mat raw = read_csv(path);
  if (raw.cols() != 3) throw std::runtime_error("observations csv needs 3 columns: " + path);
  const Index n_obs = static_cast<Index>(expected_nodes.size());
  if (raw.rows() % n_obs != 0) throw std::runtime_error("observation count not a multiple of node count: " + path);
  Observations obs;
  obs.observed_nodes = expected_nodes;
  obs.sigma_eps = sigma_eps;
  obs.y.resize(raw.rows() / n_obs, n_obs);
  for (Index r = 0; r < raw.rows(); ++r) {
    const Index n = static_cast<Index>(raw(r, 0));
    const int node = static_cast<int>(raw(r, 1));
    const auto it = std::find(expected_nodes.begin(), expected_nodes.end(), node);
    if (n < 0 || n >= obs.y.rows() || it == expected_nodes.end())
      throw std::runtime_error("observation row outside configured layout: " + path);
    obs.y(n, static_cast<Index>(it - expected_nodes.begin())) = raw(r, 2);
  }
  return obs;
}

inline void write_theta_samples_csv(const std::string& path, const Chain& chain) {
  auto out = open_out(path);
  out << "sweep,theta0,theta1,theta4\n";
  for (Index l = 0; l < chain.n_sweeps(); ++l)
    out << l << "," << format_double(chain.theta_samples(l, 0)) << ","
        << format_double(chain.theta_samples(l, 1)) << ","
        << format_double(chain.theta_samples(l, 2)) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_states_csv(const std::string& path, const Chain& chain) {
  auto out = open_out(path);
  out << "sweep,step,node,value\n";
  for (Index l = 0; l < chain.n_sweeps(); l += chain.thin) {
    const Mat& traj = chain.traj_samples[static_cast<std::size_t>(chain.traj_index(l))];
    for (Index n = 0; n < traj.rows(); ++n)
      for (Index v = 0; v < traj.cols(); ++v)
        out << l << "," << n << "," << v << "," << format_double(traj(n, v)) << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_flags_csv(const std::string& path, const Chain& chain) {
  auto out = open_out(path);
  out << "sweep,step,updated\n";
  for (Index l = 0; l < chain.n_sweeps(); ++l)
    for (Index n = 0; n < chain.update_flags.cols(); ++n)
      out << l << "," << n << "," << static_cast<int>(chain.update_flags(l, n)) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_mesh_json(const std::string& path, const SphereMesh& mesh) {
  nlohmann::json j;
  for (Index i = 0; i < mesh.n_vertices(); ++i)
    j["vertices"].push_back({mesh.vertices(i, 0), mesh.vertices(i, 1), mesh.vertices(i, 2)});
  for (Index k = 0; k < mesh.n_faces(); ++k)
    j["triangles"].push_back({mesh.faces(k, 0), mesh.faces(k, 1), mesh.faces(k, 2)});
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

} // namespace sebm
