#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "types.hpp"

namespace sebm {

// Triangulated sphere surface. Vertices lie on the unit sphere, faces are
// index triples oriented so that the outward normal points away from the
// origin.
struct SphereMesh {
  Mat vertices;          // n_vertices x 3
  Eigen::MatrixXi faces; // n_faces x 3

  Index n_vertices() const { return vertices.rows(); }
  Index n_faces() const { return faces.rows(); }
};

namespace detail {

inline void orient_outward(const Mat& v, Eigen::MatrixXi& f) {
  for (Index k = 0; k < f.rows(); ++k) {
    const Vec3 a = v.row(f(k, 0));
    const Vec3 b = v.row(f(k, 1));
    const Vec3 c = v.row(f(k, 2));
    if ((b - a).cross(c - a).dot(a + b + c) < 0.0) std::swap(f(k, 1), f(k, 2));
  }
}

} // namespace detail

// Icosahedral mesh, optionally refined by splitting each triangle into four
// and projecting the new midpoints back onto the sphere. subdivisions = 0
// gives the base icosahedron with 12 vertices and 20 faces.
inline SphereMesh build_icosahedron_mesh(int subdivisions = 0) {
  if (subdivisions < 0) throw std::invalid_argument("subdivisions must be >= 0");

  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  Mat v(12, 3);
  v << -1, p, 0, 1, p, 0, -1, -p, 0, 1, -p, 0,
       0, -1, p, 0, 1, p, 0, -1, -p, 0, 1, -p,
       p, 0, -1, p, 0, 1, -p, 0, -1, -p, 0, 1;
  v.rowwise().normalize();

  Eigen::MatrixXi f(20, 3);
  f << 0, 11, 5, 0, 5, 1, 0, 1, 7, 0, 7, 10, 0, 10, 11,
       1, 5, 9, 5, 11, 4, 11, 10, 2, 10, 7, 6, 7, 1, 8,
       3, 9, 4, 3, 4, 2, 3, 2, 6, 3, 6, 8, 3, 8, 9,
       4, 9, 5, 2, 4, 11, 6, 2, 10, 8, 6, 7, 9, 8, 1;

  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    std::vector<Vec3> verts;
    verts.reserve(static_cast<std::size_t>(v.rows()) + 3 * static_cast<std::size_t>(f.rows()) / 2);
    for (Index i = 0; i < v.rows(); ++i) verts.push_back(v.row(i));

    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      const Vec3 m = (verts[a] + verts[b]).normalized();
      const int idx = static_cast<int>(verts.size());
      verts.push_back(m);
      midpoint.emplace(key, idx);
      return idx;
    };

    Eigen::MatrixXi fine(4 * f.rows(), 3);
    for (Index k = 0; k < f.rows(); ++k) {
      const int a = f(k, 0), b = f(k, 1), c = f(k, 2);
      const int ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
      fine.row(4 * k + 0) << a, ab, ca;
      fine.row(4 * k + 1) << b, bc, ab;
      fine.row(4 * k + 2) << c, ca, bc;
      fine.row(4 * k + 3) << ab, bc, ca;
    }

    v.resize(static_cast<Index>(verts.size()), 3);
    for (Index i = 0; i < v.rows(); ++i) v.row(i) = verts[static_cast<std::size_t>(i)];
    f = std::move(fine);
  }

  detail::orient_outward(v, f);
  return SphereMesh{std::move(v), std::move(f)};
}

} // namespace sebm
