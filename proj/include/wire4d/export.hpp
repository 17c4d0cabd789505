#pragma once

// Tube meshes and SVG paths from a wire.

#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "wire4d/camera.hpp"
#include "wire4d/error.hpp"
#include "wire4d/mesh.hpp"
#include "wire4d/metrics.hpp"
#include "wire4d/projection.hpp"
#include "wire4d/spline.hpp"

namespace wire4d {

inline constexpr double kMinTubeRadius = 1e-4;

struct TubeOptions {
  int sides = 12;
  int samples = 256;
};

struct TubeResult {
  TriangleMesh mesh;
  std::vector<std::string> warnings;
};

namespace detail {

inline Eigen::Vector3d any_perpendicular(const Eigen::Vector3d& t) {
  const Eigen::Vector3d axis = std::abs(t.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  return t.cross(axis).normalized();
}

}  // namespace detail

/// Circular cross-sections of radius w(t)/2 swept with rotation-minimizing
/// frames (double reflection) and closed with center-fan caps.
inline TubeResult tube_mesh(const Wire4D& wire, const TubeOptions& options = {}) {
  if (options.sides < 3) throw DomainError("tube needs at least 3 sides");
  if (options.samples < 2) throw DomainError("tube needs at least 2 samples");
  if (!(total_length(wire, 1e-6) > 1e-12)) throw DomainError("cannot mesh a zero-length wire");

  const auto n = static_cast<std::size_t>(options.samples);
  const auto sides = static_cast<std::size_t>(options.sides);
  std::vector<Eigen::Vector3d> pos(n), tan(n);
  std::vector<double> radius(n);
  TubeResult out;
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = wire.t_min() + (wire.t_max() - wire.t_min()) * static_cast<double>(i) / static_cast<double>(n - 1);
    const Eigen::Vector4d p = evaluate(wire, t);
    pos[i] = p.head<3>();
    tan[i] = evaluate(wire, t, 1).head<3>();
    radius[i] = 0.5 * p.w();
    if (radius[i] < kMinTubeRadius) {
      radius[i] = kMinTubeRadius;
      ++clamped;
    }
  }
  if (clamped > 0) {
    out.warnings.push_back(std::to_string(clamped) + " cross-sections clamped to radius " + std::to_string(kMinTubeRadius));
  }
  // Stationary points inherit a neighbouring tangent.
  for (std::size_t i = 0; i < n; ++i) {
    if (tan[i].norm() > 1e-12) continue;
    const std::size_t j = i + 1 < n ? i + 1 : i - 1;
    tan[i] = pos[std::max(i, j)] - pos[std::min(i, j)];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(tan[i].norm() > 1e-300)) {
      tan[i] = i > 0 ? tan[i - 1] : Eigen::Vector3d::UnitX();
    }
    tan[i].normalize();
  }

  std::vector<Eigen::Vector3d> normal(n);
  normal[0] = detail::any_perpendicular(tan[0]);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Eigen::Vector3d v1 = pos[i + 1] - pos[i];
    const double c1 = v1.squaredNorm();
    Eigen::Vector3d r_l = normal[i];
    Eigen::Vector3d t_l = tan[i];
    if (c1 > 1e-24) {
      r_l -= (2.0 / c1) * v1.dot(normal[i]) * v1;
      t_l -= (2.0 / c1) * v1.dot(tan[i]) * v1;
    }
    const Eigen::Vector3d v2 = tan[i + 1] - t_l;
    const double c2 = v2.squaredNorm();
    Eigen::Vector3d r = c2 > 1e-24 ? Eigen::Vector3d(r_l - (2.0 / c2) * v2.dot(r_l) * v2) : r_l;
    r -= r.dot(tan[i + 1]) * tan[i + 1];
    normal[i + 1] = r.norm() > 1e-12 ? r.normalized() : detail::any_perpendicular(tan[i + 1]);
  }

  TriangleMesh& mesh = out.mesh;
  mesh.vertices.reserve(n * sides + 2);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d b = tan[i].cross(normal[i]);
    for (std::size_t j = 0; j < sides; ++j) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(sides);
      mesh.vertices.push_back(pos[i] + radius[i] * (std::cos(theta) * normal[i] + std::sin(theta) * b));
    }
  }
  const int start_center = static_cast<int>(mesh.vertices.size());
  mesh.vertices.push_back(pos.front());
  const int end_center = static_cast<int>(mesh.vertices.size());
  mesh.vertices.push_back(pos.back());

  auto ring = [&](std::size_t i, std::size_t j) { return static_cast<int>(i * sides + j % sides); };
  mesh.faces.reserve(2 * sides * n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::size_t j = 0; j < sides; ++j) {
      mesh.faces.push_back({ring(i, j), ring(i, j + 1), ring(i + 1, j)});
      mesh.faces.push_back({ring(i, j + 1), ring(i + 1, j + 1), ring(i + 1, j)});
    }
  }
  for (std::size_t j = 0; j < sides; ++j) {
    mesh.faces.push_back({start_center, ring(0, j + 1), ring(0, j)});
    mesh.faces.push_back({end_center, ring(n - 1, j), ring(n - 1, j + 1)});
  }
  return out;
}

struct EdgeAudit {
  std::size_t edges = 0;
  std::size_t boundary_edges = 0;     // used by one face
  std::size_t nonmanifold_edges = 0;  // used by three or more faces
  std::size_t misoriented_edges = 0;  // both faces traverse it the same way
  std::size_t degenerate_faces = 0;   // repeated vertex index

  bool watertight() const {
    return boundary_edges == 0 && nonmanifold_edges == 0 && misoriented_edges == 0 && degenerate_faces == 0;
  }
};

/// Every undirected edge should be shared by exactly two faces traversing it
/// in opposite directions.
inline EdgeAudit audit_edges(const TriangleMesh& mesh) {
  mesh.validate();
  EdgeAudit audit;
  std::map<std::pair<int, int>, std::pair<int, int>> uses;  // (forward, backward) counts
  for (const auto& f : mesh.faces) {
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
      ++audit.degenerate_faces;
      continue;
    }
    for (int k = 0; k < 3; ++k) {
      const int a = f[static_cast<std::size_t>(k)];
      const int b = f[static_cast<std::size_t>((k + 1) % 3)];
      auto& u = uses[{std::min(a, b), std::max(a, b)}];
      (a < b ? u.first : u.second) += 1;
    }
  }
  audit.edges = uses.size();
  for (const auto& [edge, u] : uses) {
    const int total = u.first + u.second;
    if (total == 1) ++audit.boundary_edges;
    else if (total > 2) ++audit.nonmanifold_edges;
    else if (u.first != 1) ++audit.misoriented_edges;
  }
  return audit;
}

// ---------------------------------------------------------------------------
// SVG

/// One cubic path per stroke with positive mean width, stroke-width the mean
/// of its endpoint widths, viewBox the image rectangle.
inline std::string export_svg(const StrokeBatch2D& batch, int width, int height) {
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" viewBox=\"0 0 %d %d\">\n",
                width, height, width, height);
  out += buf;
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<g fill=\"none\" stroke=\"black\" stroke-linecap=\"round\">\n";
  for (const Stroke2D& s : batch.strokes) {
    const double w = 0.5 * (s.w_start + s.w_end);
    if (!(w > 0.0)) continue;
    std::snprintf(buf, sizeof buf,
                  "<path d=\"M %.6f %.6f C %.6f %.6f %.6f %.6f %.6f %.6f\" stroke-width=\"%.6f\"/>\n",
                  s.q[0].x(), s.q[0].y(), s.q[1].x(), s.q[1].y(), s.q[2].x(), s.q[2].y(), s.q[3].x(), s.q[3].y(), w);
    out += buf;
  }
  out += "</g>\n</svg>\n";
  return out;
}

inline std::string export_svg(const Wire4D& wire, const Camera& camera, double epsilon_px = kDefaultEpsilonPx) {
  return export_svg(project_wire(wire, camera, epsilon_px), camera.width, camera.height);
}

}  // namespace wire4d
