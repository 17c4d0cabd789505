#pragma once

// Triangle meshes and Wavefront OBJ input/output.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "wire4d/error.hpp"

namespace wire4d {

struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;

  bool empty() const { return faces.empty(); }

  double face_area(const std::array<int, 3>& f) const {
    const auto& a = vertices[static_cast<std::size_t>(f[0])];
    const auto& b = vertices[static_cast<std::size_t>(f[1])];
    const auto& c = vertices[static_cast<std::size_t>(f[2])];
    return 0.5 * (b - a).cross(c - a).norm();
  }

  void validate() const {
    const auto n = static_cast<int>(vertices.size());
    for (const auto& f : faces) {
      for (int i : f) {
        if (i < 0 || i >= n) throw InputError("face index " + std::to_string(i) + " out of range");
      }
    }
  }
};

/// Centers the mesh on its bounding-box center and scales it into the unit sphere.
inline void normalize_to_unit_sphere(TriangleMesh& mesh) {
  if (mesh.vertices.empty()) return;
  Eigen::Vector3d lo = mesh.vertices.front(), hi = lo;
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Eigen::Vector3d center = 0.5 * (lo + hi);
  double radius = 0.0;
  for (const auto& v : mesh.vertices) radius = std::max(radius, (v - center).norm());
  if (!(radius > 0.0)) throw InputError("mesh has zero extent");
  for (auto& v : mesh.vertices) v = (v - center) / radius;
}

/// Reads v/f records; polygons are fan-triangulated, `a/b/c` index forms and
/// negative (relative) indices are accepted, zero-area faces are dropped.
inline TriangleMesh load_mesh(const std::filesystem::path& path, bool normalize = false) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open mesh " + path.string());
  TriangleMesh mesh;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Eigen::Vector3d v;
      if (!(ss >> v.x() >> v.y() >> v.z())) fail("bad vertex record");
      if (!v.allFinite()) fail("non-finite vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ss >> tok) {
        const std::string head = tok.substr(0, tok.find('/'));
        int idx = 0;
        try {
          std::size_t used = 0;
          idx = std::stoi(head, &used);
          if (used != head.size()) fail("bad face index '" + tok + "'");
        } catch (const std::logic_error&) {
          fail("bad face index '" + tok + "'");
        }
        if (idx == 0) fail("face index 0 is invalid");
        idx = idx > 0 ? idx - 1 : static_cast<int>(mesh.vertices.size()) + idx;
        if (idx < 0 || idx >= static_cast<int>(mesh.vertices.size())) fail("face index out of range");
        poly.push_back(idx);
      }
      if (poly.size() < 3) fail("face with fewer than 3 vertices");
      for (std::size_t i = 1; i + 1 < poly.size(); ++i) mesh.faces.push_back({poly[0], poly[i], poly[i + 1]});
    }
  }
  std::vector<std::array<int, 3>> kept;
  for (const auto& f : mesh.faces) {
    if (mesh.face_area(f) > 1e-12) kept.push_back(f);
  }
  mesh.faces = std::move(kept);
  if (mesh.faces.empty()) throw InputError(path.string() + ": mesh has no triangles");
  if (normalize) normalize_to_unit_sphere(mesh);
  return mesh;
}

inline void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

}  // namespace wire4d
