#pragma once

// Depth buffers of fixed scene meshes and soft occlusion of strokes.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "wire4d/camera.hpp"
#include "wire4d/image.hpp"
#include "wire4d/mesh.hpp"
#include "wire4d/parallel.hpp"
#include "wire4d/projection.hpp"

namespace wire4d {

/// Finite stand-in for background depth when sampling.
inline constexpr double kBackgroundDepth = 1e6;

/// Z-buffer of camera-space depth; background pixels hold +infinity.
/// Triangles with a vertex at or behind the near plane are skipped.
inline ImageBuffer render_depth(const TriangleMesh& mesh, const Camera& camera, int threads = 1) {
  camera.validate();
  mesh.validate();
  ImageBuffer depth(camera.width, camera.height, std::numeric_limits<double>::infinity());

  struct ScreenTri {
    std::array<Eigen::Vector2d, 3> p;
    std::array<double, 3> inv_z;
    int x0, x1, y0, y1;
  };
  std::vector<ScreenTri> tris;
  tris.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    ScreenTri t{};
    bool visible = true;
    for (int i = 0; i < 3; ++i) {
      const Eigen::Vector3d c = camera.to_camera(mesh.vertices[static_cast<std::size_t>(f[i])]);
      if (!(c.z() > camera.near)) {
        visible = false;
        break;
      }
      t.p[i] = {camera.fx * c.x() / c.z() + camera.cx, camera.fy * c.y() / c.z() + camera.cy};
      t.inv_z[i] = 1.0 / c.z();
    }
    if (!visible) continue;
    const Eigen::Vector2d lo = t.p[0].cwiseMin(t.p[1]).cwiseMin(t.p[2]);
    const Eigen::Vector2d hi = t.p[0].cwiseMax(t.p[1]).cwiseMax(t.p[2]);
    t.x0 = std::max(0, static_cast<int>(std::floor(lo.x() - 0.5)));
    t.y0 = std::max(0, static_cast<int>(std::floor(lo.y() - 0.5)));
    t.x1 = std::min(camera.width - 1, static_cast<int>(std::ceil(hi.x() - 0.5)));
    t.y1 = std::min(camera.height - 1, static_cast<int>(std::ceil(hi.y() - 0.5)));
    if (t.x1 < t.x0 || t.y1 < t.y0) continue;
    tris.push_back(t);
  }

  auto edge = [](const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
  };
  parallel_chunks(static_cast<std::size_t>(camera.height), threads, [&](std::size_t r0, std::size_t r1) {
    for (const ScreenTri& t : tris) {
      const double area = edge(t.p[0], t.p[1], t.p[2]);
      if (area == 0.0) continue;
      for (int y = std::max(t.y0, static_cast<int>(r0)); y <= std::min(t.y1, static_cast<int>(r1) - 1); ++y) {
        for (int x = t.x0; x <= t.x1; ++x) {
          const Eigen::Vector2d px(x + 0.5, y + 0.5);
          const double l0 = edge(t.p[1], t.p[2], px) / area;
          const double l1 = edge(t.p[2], t.p[0], px) / area;
          const double l2 = 1.0 - l0 - l1;
          if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
          // 1/z is affine in screen space.
          const double z = 1.0 / (l0 * t.inv_z[0] + l1 * t.inv_z[1] + l2 * t.inv_z[2]);
          double& d = depth.at(x, y);
          if (z < d) d = z;
        }
      }
    }
  });
  return depth;
}

/// Bilinear depth at a pixel-space position (pixel centers at +0.5),
/// clamped to the image and with background replaced by kBackgroundDepth.
inline double sample_depth(const ImageBuffer& depth, double u, double v) {
  if (depth.width == 0 || depth.height == 0) return kBackgroundDepth;
  const double fx = std::clamp(u - 0.5, 0.0, static_cast<double>(depth.width - 1));
  const double fy = std::clamp(v - 0.5, 0.0, static_cast<double>(depth.height - 1));
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x1 = std::min(x0 + 1, depth.width - 1);
  const int y1 = std::min(y0 + 1, depth.height - 1);
  const double ax = fx - x0;
  const double ay = fy - y0;
  auto at = [&](int x, int y) {
    const double d = depth.at(x, y);
    return std::isfinite(d) ? std::min(d, kBackgroundDepth) : kBackgroundDepth;
  };
  return (1 - ay) * ((1 - ax) * at(x0, y0) + ax * at(x1, y0)) + ay * ((1 - ax) * at(x0, y1) + ax * at(x1, y1));
}

struct VisibilityParams {
  double k = 100.0;
  double b = 0.05;

  void validate() const {
    if (!(k > 0.0)) throw DomainError("visibility sharpness k must be positive");
    if (!std::isfinite(b)) throw DomainError("visibility bias b must be finite");
  }
};

struct Visibility {
  double v = 1.0;
  double dv_dz = 0.0;  // derivative w.r.t. the curve depth
};

/// V = sigmoid(k (z_mesh - z_curve + b)).
inline Visibility soft_visibility(double z_mesh, double z_curve, const VisibilityParams& params = {}) {
  if (!std::isfinite(z_mesh)) z_mesh = kBackgroundDepth;
  const double x = params.k * (z_mesh - z_curve + params.b);
  double v = 0.0;
  if (x >= 0.0) {
    v = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    v = e / (1.0 + e);
  }
  return {v, -params.k * v * (1.0 - v)};
}

/// Per-stroke endpoint visibilities recorded by the forward pass.
struct VisibilityRecord {
  std::vector<std::array<Visibility, 2>> endpoints;
  std::vector<std::array<double, 2>> base_widths;
};

/// Multiplies each stroke's endpoint widths by the soft visibility of that
/// endpoint against `depth`.
inline VisibilityRecord attenuate_widths(StrokeBatch2D& batch, const ImageBuffer& depth,
                                         const VisibilityParams& params = {}) {
  params.validate();
  VisibilityRecord rec;
  rec.endpoints.reserve(batch.size());
  rec.base_widths.reserve(batch.size());
  for (Stroke2D& s : batch.strokes) {
    const Visibility a = soft_visibility(sample_depth(depth, s.q[0].x(), s.q[0].y()), s.z_start, params);
    const Visibility b = soft_visibility(sample_depth(depth, s.q[3].x(), s.q[3].y()), s.z_end, params);
    rec.base_widths.push_back({s.w_start, s.w_end});
    rec.endpoints.push_back({a, b});
    s.w_start *= a.v;
    s.w_end *= b.v;
  }
  return rec;
}

/// Converts gradients w.r.t. attenuated widths into gradients w.r.t. base
/// widths and endpoint depths. The sampled mesh depth is held constant.
inline void attenuate_backward(std::vector<StrokeGrad>& grads, const VisibilityRecord& rec) {
  if (grads.size() != rec.endpoints.size()) throw DomainError("visibility record does not match gradients");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    StrokeGrad& g = grads[i];
    const auto& [a, b] = rec.endpoints[i];
    g.dz_start += g.dw_start * rec.base_widths[i][0] * a.dv_dz;
    g.dz_end += g.dw_end * rec.base_widths[i][1] * b.dv_dz;
    g.dw_start *= a.v;
    g.dw_end *= b.v;
  }
}

}  // namespace wire4d
