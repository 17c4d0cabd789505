#pragma once

// Initial wires: volume sampling, TSP ordering, fitting, polyline import.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wire4d/camera.hpp"
#include "wire4d/error.hpp"
#include "wire4d/fit.hpp"
#include "wire4d/image.hpp"
#include "wire4d/spline.hpp"

namespace wire4d {

enum class VolumeKind { SilhouetteCone, Sphere };

struct InitVolume {
  VolumeKind kind = VolumeKind::Sphere;
  std::optional<ImageBuffer> mask;  // foreground where value >= 0.5
  std::optional<Camera> camera;
  double z_near = 0.0;  // camera-depth slab for the cone
  double z_far = 0.0;
  double radius = 1.0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();

  void validate() const {
    if (kind == VolumeKind::Sphere) {
      if (!(radius > 0.0)) throw DomainError("sphere volume needs a positive radius");
      return;
    }
    if (!mask || !camera) throw DomainError("silhouette cone needs a mask and a camera");
    camera->validate();
    if (mask->width != camera->width || mask->height != camera->height) {
      throw DomainError("mask size does not match the camera image");
    }
    if (!(z_near > camera->near && z_far > z_near)) throw DomainError("invalid cone depth range");
  }
};

/// Camera depth of the world origin +- 0.5.
inline std::pair<double, double> default_depth_range(const Camera& camera) {
  const double z = camera.to_camera(Eigen::Vector3d::Zero()).z();
  return {std::max(z - 0.5, 2.0 * camera.near), z + 0.5};
}

namespace detail {

inline bool mask_foreground(const ImageBuffer& mask, const Camera& camera, const Eigen::Vector3d& p, double z0,
                            double z1) {
  const Eigen::Vector3d c = camera.to_camera(p);
  if (c.z() < z0 || c.z() > z1) return false;
  const double u = camera.fx * c.x() / c.z() + camera.cx;
  const double v = camera.fy * c.y() / c.z() + camera.cy;
  if (!(u >= 0.0 && v >= 0.0 && u < mask.width && v < mask.height)) return false;
  return mask.at(static_cast<int>(u), static_cast<int>(v)) >= 0.5;
}

}  // namespace detail

namespace detail {

inline std::pair<Eigen::Vector3d, Eigen::Vector3d> volume_box(const InitVolume& volume) {
  if (volume.kind == VolumeKind::Sphere) {
    return {volume.center.array() - volume.radius, volume.center.array() + volume.radius};
  }
  const Camera& cam = *volume.camera;
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (double z : {volume.z_near, volume.z_far}) {
    for (double u : {0.0, static_cast<double>(cam.width)}) {
      for (double v : {0.0, static_cast<double>(cam.height)}) {
        const Eigen::Vector3d c((u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z);
        const Eigen::Vector3d w = cam.rotation.transpose() * (c - cam.translation);
        lo = lo.cwiseMin(w);
        hi = hi.cwiseMax(w);
      }
    }
  }
  return {lo, hi};
}

inline bool volume_contains(const InitVolume& volume, const Eigen::Vector3d& p) {
  if (volume.kind == VolumeKind::Sphere) return (p - volume.center).norm() <= volume.radius;
  return mask_foreground(*volume.mask, *volume.camera, p, volume.z_near, volume.z_far);
}

inline constexpr std::uint64_t kAcceptanceCheckTrials = 10'000'000;

}  // namespace detail

/// `count` points by rejection sampling inside the volume.
template <typename Rng>
std::vector<Eigen::Vector3d> sample_volume_points(const InitVolume& volume, std::size_t count, Rng& rng) {
  volume.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto [lo, hi] = detail::volume_box(volume);
  std::vector<Eigen::Vector3d> out;
  out.reserve(count);
  std::uint64_t trials = 0;
  std::uint64_t accepted = 0;
  while (out.size() < count) {
    const Eigen::Vector3d p = lo + (hi - lo).cwiseProduct(Eigen::Vector3d(unit(rng), unit(rng), unit(rng)));
    ++trials;
    if (detail::volume_contains(volume, p)) {
      out.push_back(p);
      ++accepted;
    }
    if (trials % detail::kAcceptanceCheckTrials == 0 &&
        static_cast<double>(accepted) < 1e-4 * static_cast<double>(trials)) {
      throw DomainError("degenerate init volume: acceptance rate below 1e-4");
    }
  }
  return out;
}

inline std::vector<Eigen::Vector3d> sample_init_volume(const InitVolume& volume, std::size_t count, std::uint64_t seed) {
  if (count < 4) throw DomainError("need at least 4 initial points");
  std::mt19937_64 rng(seed);
  return sample_volume_points(volume, count, rng);
}

inline double path_length(const std::vector<Eigen::Vector3d>& points, const std::vector<std::size_t>& order) {
  double len = 0.0;
  for (std::size_t i = 1; i < order.size(); ++i) len += (points[order[i]] - points[order[i - 1]]).norm();
  return len;
}

/// Greedy open path starting at index 0.
inline std::vector<std::size_t> nearest_neighbor_order(const std::vector<Eigen::Vector3d>& points) {
  const std::size_t n = points.size();
  if (n < 2) throw DomainError("tsp needs at least 2 points");
  std::vector<std::size_t> path{0};
  std::vector<bool> used(n, false);
  used[0] = true;
  for (std::size_t step = 1; step < n; ++step) {
    const std::size_t cur = path.back();
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const double dj = (points[cur] - points[j]).norm();
      if (!used[j] && dj < best_d) {
        best_d = dj;
        best = j;
      }
    }
    used[best] = true;
    path.push_back(best);
  }
  return path;
}

/// Open-path tour: nearest neighbour from index 0, then first-improvement
/// 2-opt capped at 100 n moves.
inline std::vector<std::size_t> tsp_order(const std::vector<Eigen::Vector3d>& points) {
  std::vector<std::size_t> path = nearest_neighbor_order(points);
  const std::size_t n = points.size();
  auto d = [&](std::size_t a, std::size_t b) { return (points[a] - points[b]).norm(); };

  const std::size_t cap = 100 * n;
  std::size_t moves = 0;
  bool improved = true;
  while (improved && moves < cap) {
    improved = false;
    for (std::size_t i = 0; i + 1 < n && moves < cap; ++i) {
      for (std::size_t j = i + 1; j < n && moves < cap; ++j) {
        // Reverse path[i..j]; open ends have no outer edge.
        double before = 0.0, after = 0.0;
        if (i > 0) {
          before += d(path[i - 1], path[i]);
          after += d(path[i - 1], path[j]);
        }
        if (j + 1 < n) {
          before += d(path[j], path[j + 1]);
          after += d(path[i], path[j + 1]);
        }
        if (after < before - 1e-12) {
          std::reverse(path.begin() + static_cast<std::ptrdiff_t>(i), path.begin() + static_cast<std::ptrdiff_t>(j) + 1);
          ++moves;
          improved = true;
        }
      }
    }
  }
  return path;
}

/// Fits a wire through ordered points with a uniform width.
inline Wire4D wire_from_path(const std::vector<Eigen::Vector3d>& points, std::size_t control_count,
                             double initial_width, WidthClamp clamp = {}) {
  FitOptions opts;
  opts.width_clamp = clamp;
  opts.initial_width = initial_width;
  return fit_to_polyline(points, control_count, opts).wire;
}

/// Whitespace-separated `x y z` rows; blank lines are skipped.
inline std::vector<Eigen::Vector3d> import_polyline(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open polyline " + path.string());
  std::vector<Eigen::Vector3d> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::vector<double> vals;
    std::string tok;
    while (ss >> tok) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::logic_error&) {
        used = 0;
      }
      if (used != tok.size() || !std::isfinite(v)) {
        throw InputError(path.string() + ": line " + std::to_string(line_no) + ": non-numeric token '" + tok + "'");
      }
      vals.push_back(v);
    }
    if (vals.empty()) continue;
    if (vals.size() != 3) {
      throw InputError(path.string() + ": line " + std::to_string(line_no) + ": expected 3 values, got " +
                       std::to_string(vals.size()));
    }
    out.emplace_back(vals[0], vals[1], vals[2]);
  }
  if (out.size() < 2) throw InputError(path.string() + ": polyline needs at least 2 points");
  return out;
}

}  // namespace wire4d
