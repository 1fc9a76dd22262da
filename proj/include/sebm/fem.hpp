#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "mesh.hpp"
#include "types.hpp"

namespace sebm {

// Linear FEM operators assembled on the flat embedded triangles of a
// SphereMesh. "timestep_op" is the implicit-diffusion matrix applied at every
// integration step, "matern_op" enters the forcing precision.
struct FemOperators {
  Mat mass;          // consistent mass matrix
  Vec mass_lumped;   // diagonal of the lumped mass (row sums of mass)
  Mat stiffness;     // diffusion-scaled stiffness, kernel = constants
  Mat matern_op;     // scale^-2 * mass + stiffness
  Mat timestep_op;   // mass + dt * stiffness
  Mat centroid_eval; // n_faces x n_vertices, vertex values -> centroid values
  Mat quad_weights;  // n_vertices x n_faces, centroid values -> load vector
  Vec areas;         // flat triangle areas
  double nu = 0.0;
  double rho = 0.0;
  double dt = 0.0;

  Eigen::LLT<Mat> timestep_llt;

  Index n_vertices() const { return mass.rows(); }
  Index n_faces() const { return areas.size(); }

  // timestep_op^-1 * x
  Vec timestep_solve(const Vec& x) const { return timestep_llt.solve(x); }
  Mat timestep_solve(const Mat& x) const { return timestep_llt.solve(x); }
};

inline FemOperators assemble_operators(const SphereMesh& mesh, double nu, double rho, double dt) {
  if (!(nu > 0.0)) throw std::invalid_argument("nu must be positive");
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");

  const Index nv = mesh.n_vertices();
  const Index nf = mesh.n_faces();

  FemOperators ops;
  ops.nu = nu;
  ops.rho = rho;
  ops.dt = dt;
  ops.mass = Mat::Zero(nv, nv);
  ops.stiffness = Mat::Zero(nv, nv);
  ops.centroid_eval = Mat::Zero(nf, nv);
  ops.quad_weights = Mat::Zero(nv, nf);
  ops.areas = Vec::Zero(nf);

  Mat3 mass_block;
  mass_block << 2, 1, 1, 1, 2, 1, 1, 1, 2;

  for (Index k = 0; k < nf; ++k) {
    const int ia = mesh.faces(k, 0), ib = mesh.faces(k, 1), ic = mesh.faces(k, 2);
    const Vec3 a = mesh.vertices.row(ia);
    const Vec3 b = mesh.vertices.row(ib);
    const Vec3 c = mesh.vertices.row(ic);

    const Vec3 normal = (b - a).cross(c - a);
    const double area = 0.5 * normal.norm();
    if (area < 1e-14) throw std::runtime_error("degenerate triangle in mesh, face " + std::to_string(k));
    ops.areas[k] = area;

    // in-plane gradients of the three hat functions
    Mat3 edge_frame;
    edge_frame.row(0) = b - a;
    edge_frame.row(1) = c - a;
    edge_frame.row(2) = normal.normalized();
    Mat3 rhs;
    rhs.col(0) = Vec3(-1, -1, 0);
    rhs.col(1) = Vec3(1, 0, 0);
    rhs.col(2) = Vec3(0, 1, 0);
    const Mat3 grads = edge_frame.partialPivLu().solve(rhs); // column v = gradient of hat v

    const int idx[3] = {ia, ib, ic};
    for (int v = 0; v < 3; ++v) {
      for (int w = 0; w < 3; ++w) {
        ops.mass(idx[v], idx[w]) += (area / 12.0) * mass_block(v, w);
        ops.stiffness(idx[v], idx[w]) += nu * area * grads.col(v).dot(grads.col(w));
      }
      ops.centroid_eval(k, idx[v]) = 1.0 / 3.0;
      ops.quad_weights(idx[v], k) = area / 3.0;
    }
  }

  ops.mass_lumped = ops.mass.rowwise().sum();
  ops.matern_op = ops.mass / (rho * rho) + ops.stiffness;
  ops.timestep_op = ops.mass + dt * ops.stiffness;
  ops.timestep_llt.compute(ops.timestep_op);
  if (ops.timestep_llt.info() != Eigen::Success)
    throw std::runtime_error("timestep operator is not positive definite");
  return ops;
}

} // namespace sebm
