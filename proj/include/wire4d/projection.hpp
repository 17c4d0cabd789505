#pragma once

// Wire -> screen-space variable-width Bezier strokes. The dense 3D Bezier
// segments are exact; projecting their control points treats the rational
// weight as locally constant, with error O((h / z_min)^2).

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wire4d/bezier.hpp"
#include "wire4d/camera.hpp"
#include "wire4d/error.hpp"
#include "wire4d/spline.hpp"

namespace wire4d {

inline constexpr int kMaxSegmentsPerSpan = 64;
inline constexpr double kDefaultEpsilonPx = 0.5;

/// A 2D cubic Bezier in pixels with linearly interpolated on-screen width.
/// `z_start`/`z_end` carry the camera depth of the endpoints.
struct Stroke2D {
  std::array<Eigen::Vector2d, 4> q;
  double w_start = 0.0;
  double w_end = 0.0;
  double z_start = 1.0;
  double z_end = 1.0;

  Eigen::Vector2d point(double t) const {
    const auto b = bernstein(t);
    return b[0] * q[0] + b[1] * q[1] + b[2] * q[2] + b[3] * q[3];
  }
  double width(double t) const { return (1.0 - t) * w_start + t * w_end; }
};

struct StrokeSource {
  std::size_t span = 0;
  int sub = 0;
};

struct StrokeBatch2D {
  std::vector<Stroke2D> strokes;
  std::vector<StrokeSource> provenance;  // one entry per stroke
  std::vector<int> counts;               // subdivision count per span

  std::size_t size() const { return strokes.size(); }
};

/// Gradient of a scalar loss w.r.t. one stroke's parameters; the depth terms
/// are optional and used by depth-dependent width attenuation.
struct StrokeGrad {
  std::array<Eigen::Vector2d, 4> dq{Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(),
                                    Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
  double dw_start = 0.0;
  double dw_end = 0.0;
  double dz_start = 0.0;
  double dz_end = 0.0;

  StrokeGrad& operator+=(const StrokeGrad& o) {
    for (int i = 0; i < 4; ++i) dq[i] += o.dq[i];
    dw_start += o.dw_start;
    dw_end += o.dw_end;
    dz_start += o.dz_start;
    dz_end += o.dz_end;
    return *this;
  }
};

// ---------------------------------------------------------------------------
// Fixtures

/// Helix with `spans` spans, centered at the origin and scaled to a unit 3D
/// bounding-box diagonal.
inline Wire4D canonical_helix(int spans = 8, double width = 0.01) {
  const int count = spans + kDegree;
  ControlMatrix m(count, 4);
  for (int i = 0; i < count; ++i) {
    const double theta = 4.0 * std::numbers::pi * i / (count - 1);
    m.row(i) << std::cos(theta), std::sin(theta), 0.35 * theta, width;
  }
  const Eigen::Vector3d lo = m.leftCols(3).colwise().minCoeff();
  const Eigen::Vector3d hi = m.leftCols(3).colwise().maxCoeff();
  const Eigen::RowVector3d center = (0.5 * (lo + hi)).transpose();
  const double diag = (hi - lo).norm();
  for (int i = 0; i < count; ++i) m.block<1, 3>(i, 0) = (m.block<1, 3>(i, 0) - center) / diag;
  return Wire4D::from_effective(m, KnotVector::clamped_uniform(static_cast<std::size_t>(count)),
                                WidthClamp{0.0, 0.1});
}

/// Camera looking at the origin from distance `distance` along -z.
inline Camera canonical_camera(int size = 512, double distance = 1.5) {
  return Camera::look_at({0.0, 0.0, -distance}, Eigen::Vector3d::Zero(), {0.0, -1.0, 0.0},
                         static_cast<double>(size), size, size);
}

// ---------------------------------------------------------------------------
// Subdivision

namespace detail {

struct SpanGeometry {
  double h = 0.0;      // 3D control-polygon length
  double z_min = 0.0;  // minimum camera depth of the span's Bezier controls
};

inline std::vector<SpanGeometry> span_geometry(const Wire4D& wire, const Camera& camera) {
  std::vector<SpanGeometry> out;
  for (const Bezier4& seg : to_bezier_segments(wire, 1)) {
    SpanGeometry g;
    g.z_min = std::numeric_limits<double>::infinity();
    for (int r = 0; r < 4; ++r) {
      const double z = camera.to_camera(seg.p[r].head<3>()).z();
      if (!(z > camera.near)) {
        throw ClipError("span " + std::to_string(out.size()) + " reaches depth " + std::to_string(z) +
                        " behind the near plane");
      }
      g.z_min = std::min(g.z_min, z);
      if (r > 0) g.h += (seg.p[r].head<3>() - seg.p[r - 1].head<3>()).norm();
    }
    out.push_back(g);
  }
  return out;
}

// Max parametric deviation, in units of focal length, between the Bezier of
// projected controls and the exact projection of each span of `wire`, divided
// by (h / z_min)^2; the largest ratio over spans.
inline double measure_error_constant(const Wire4D& wire, const Camera& camera) {
  Camera unit = camera;
  unit.fx = unit.fy = 1.0;
  unit.cx = unit.cy = 0.0;
  const auto geometry = span_geometry(wire, unit);
  const auto segments = to_bezier_segments(wire, 1);
  double worst = 0.0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    Bezier2 flat;
    for (int r = 0; r < 4; ++r) {
      const auto sp = project_point(unit, segments[s].p[r].head<3>());
      flat.p[r] = {sp.u, sp.v};
    }
    double dev = 0.0;
    for (int i = 0; i <= 256; ++i) {
      const double t = i / 256.0;
      const auto exact = project_point(unit, segments[s].point(t).head<3>());
      dev = std::max(dev, (flat.point(t) - Eigen::Vector2d(exact.u, exact.v)).norm());
    }
    const double ratio = geometry[s].h / geometry[s].z_min;
    if (ratio > 0.0) worst = std::max(worst, dev / (ratio * ratio));
  }
  return worst;
}

}  // namespace detail

/// Constant c in err_px ~= c * focal * (h / z_min)^2, calibrated once on the
/// canonical helix seen from the canonical camera.
inline double projection_error_constant() {
  static const double c = detail::measure_error_constant(canonical_helix(), canonical_camera());
  return c;
}

struct SubdivisionPlan {
  std::vector<int> counts;  // per span, powers of two
  std::vector<std::string> warnings;
};

/// Smallest power-of-two count s with c * focal * (h / (s * z_min))^2 <= eps.
inline int subdivision_count(double h, double z_min, double focal, double epsilon_px, bool* capped = nullptr) {
  if (capped) *capped = false;
  if (!(h > 0.0)) return 1;
  const double c = projection_error_constant();
  int s = 1;
  while (true) {
    const double ratio = h / (s * z_min);
    if (c * focal * ratio * ratio <= epsilon_px) return s;
    if (s >= kMaxSegmentsPerSpan) {
      if (capped) *capped = true;
      return kMaxSegmentsPerSpan;
    }
    s *= 2;
  }
}

inline SubdivisionPlan adaptive_subdivision(const Wire4D& wire, const Camera& camera, double epsilon_px) {
  if (!(epsilon_px >= 0.0)) throw DomainError("epsilon_px must be non-negative");
  SubdivisionPlan plan;
  const auto geometry = detail::span_geometry(wire, camera);
  for (std::size_t s = 0; s < geometry.size(); ++s) {
    bool capped = false;
    plan.counts.push_back(
        subdivision_count(geometry[s].h, geometry[s].z_min, camera.focal(), epsilon_px, &capped));
    if (capped) {
      plan.warnings.push_back("span " + std::to_string(s) + " capped at " +
                              std::to_string(kMaxSegmentsPerSpan) + " segments");
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Forward projection

/// Projects the wire with explicit per-span subdivision counts.
inline StrokeBatch2D project_wire(const Wire4D& wire, const Camera& camera, const std::vector<int>& counts) {
  const auto segments = to_bezier_segments(wire, counts);
  StrokeBatch2D batch;
  batch.counts = counts;
  batch.strokes.reserve(segments.size());
  std::size_t index = 0;
  for (std::size_t span = 0; span < counts.size(); ++span) {
    for (int sub = 0; sub < counts[span]; ++sub, ++index) {
      const Bezier4& seg = segments[index];
      Stroke2D stroke;
      std::array<double, 4> depth{};
      for (int r = 0; r < 4; ++r) {
        const auto sp = project_point(camera, seg.p[r].head<3>());
        stroke.q[r] = {sp.u, sp.v};
        depth[r] = sp.z;
      }
      stroke.z_start = depth[0];
      stroke.z_end = depth[3];
      stroke.w_start = camera.fx * seg.p[0].w() / depth[0];
      stroke.w_end = camera.fx * seg.p[3].w() / depth[3];
      batch.strokes.push_back(stroke);
      batch.provenance.push_back({span, sub});
    }
  }
  return batch;
}

inline StrokeBatch2D project_wire(const Wire4D& wire, const Camera& camera, double epsilon_px = kDefaultEpsilonPx) {
  return project_wire(wire, camera, adaptive_subdivision(wire, camera, epsilon_px).counts);
}

inline StrokeBatch2D project_wire(const Wire4D& wire, const Camera& camera, int segments_per_span) {
  return project_wire(wire, camera, std::vector<int>(wire.knots.spans().size(), segments_per_span));
}

/// Exact perspective projection of `samples` uniform-in-t curve points.
inline std::vector<Eigen::Vector2d> reference_projection(const Wire4D& wire, const Camera& camera,
                                                         std::size_t samples = 10000) {
  if (samples < 1000) throw DomainError("reference projection needs at least 1000 samples");
  std::vector<Eigen::Vector2d> out;
  out.reserve(samples);
  for (const auto& p : sample_uniform(wire, samples)) {
    const auto sp = project_point(camera, p.head<3>());
    out.emplace_back(sp.u, sp.v);
  }
  return out;
}

/// Polyline through every stroke, `per_stroke` uniform samples each.
inline std::vector<Eigen::Vector2d> flatten_batch(const StrokeBatch2D& batch, int per_stroke) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(batch.size() * static_cast<std::size_t>(per_stroke) + 1);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    for (int i = (s == 0 ? 0 : 1); i <= per_stroke; ++i) {
      out.push_back(batch.strokes[s].point(static_cast<double>(i) / per_stroke));
    }
  }
  return out;
}

/// `count` points spaced uniformly by arc length along a polyline.
inline std::vector<Eigen::Vector2d> resample_arc_length(const std::vector<Eigen::Vector2d>& polyline,
                                                        std::size_t count) {
  if (polyline.size() < 2 || count < 2) throw DomainError("resampling needs a polyline and >= 2 samples");
  std::vector<double> cumulative(polyline.size(), 0.0);
  for (std::size_t i = 1; i < polyline.size(); ++i) {
    cumulative[i] = cumulative[i - 1] + (polyline[i] - polyline[i - 1]).norm();
  }
  const double total = cumulative.back();
  if (!(total > 0.0)) throw DomainError("zero-length curve");
  std::vector<Eigen::Vector2d> out;
  out.reserve(count);
  std::size_t seg = 1;
  for (std::size_t k = 0; k < count; ++k) {
    const double target = total * static_cast<double>(k) / static_cast<double>(count - 1);
    while (seg + 1 < cumulative.size() && cumulative[seg] < target) ++seg;
    const double len = cumulative[seg] - cumulative[seg - 1];
    const double a = len > 0.0 ? std::clamp((target - cumulative[seg - 1]) / len, 0.0, 1.0) : 0.0;
    out.push_back(polyline[seg - 1] + a * (polyline[seg] - polyline[seg - 1]));
  }
  return out;
}

inline double bbox_diagonal(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

inline constexpr std::size_t kErrorResampleCount = 2048;

/// Mean distance between arc-length-resampled polylines, normalized by the
/// reference bounding-box diagonal.
inline double polyline_error(const std::vector<Eigen::Vector2d>& approx,
                             const std::vector<Eigen::Vector2d>& reference,
                             std::size_t samples = kErrorResampleCount) {
  const double diag = bbox_diagonal(reference);
  if (!(diag > 0.0)) throw DomainError("degenerate reference curve");
  const auto a = resample_arc_length(approx, samples);
  const auto r = resample_arc_length(reference, samples);
  double sum = 0.0;
  for (std::size_t i = 0; i < samples; ++i) sum += (a[i] - r[i]).norm();
  return sum / static_cast<double>(samples) / diag;
}

inline double screen_space_error(const StrokeBatch2D& approx, const std::vector<Eigen::Vector2d>& reference,
                                 std::size_t samples = kErrorResampleCount) {
  if (approx.size() == 0) throw DomainError("empty stroke batch");
  const int per_stroke = std::max(16, static_cast<int>(32768 / approx.size()) + 1);
  return polyline_error(flatten_batch(approx, per_stroke), reference, samples);
}

// ---------------------------------------------------------------------------
// Backward

/// Chains per-stroke gradients back to the wire's raw control parameters:
/// dL/dP_sparse = M_dense^T (projection Jacobian^T dL/dstrokes), then
/// through the width clamp.
inline ControlMatrix backprop_projection(const std::vector<StrokeGrad>& grads, const StrokeBatch2D& batch,
                                         const Wire4D& wire, const Camera& camera) {
  const auto spans = wire.knots.spans();
  if (batch.counts.size() != spans.size() || grads.size() != batch.size() ||
      batch.provenance.size() != batch.size()) {
    throw DomainError("stroke provenance does not match the wire");
  }
  std::size_t expected = 0;
  for (std::size_t span = 0; span < batch.counts.size(); ++span) {
    for (int sub = 0; sub < batch.counts[span]; ++sub, ++expected) {
      if (expected >= batch.size() || batch.provenance[expected].span != span ||
          batch.provenance[expected].sub != sub) {
        throw DomainError("stroke provenance does not match the wire");
      }
    }
  }
  if (expected != batch.size()) throw DomainError("stroke provenance does not match the wire");

  const auto m = dense_conversion_matrix(wire.knots, batch.counts);
  const ControlMatrix dense = (*m) * wire.effective_matrix();
  ControlMatrix dense_grad = ControlMatrix::Zero(dense.rows(), 4);
  const Eigen::RowVector3d depth_row = camera.rotation.row(2);

  for (std::size_t s = 0; s < grads.size(); ++s) {
    const StrokeGrad& g = grads[s];
    for (int r = 0; r < 4; ++r) {
      const auto row = static_cast<Eigen::Index>(4 * s + r);
      const Eigen::Vector3d p = dense.row(row).head<3>().transpose();
      const Eigen::Matrix3d jac = projection_jacobian(camera, p);
      dense_grad.block<1, 3>(row, 0) += g.dq[r].transpose() * jac.topRows<2>();
      if (r == 0 || r == 3) {
        const double dw = r == 0 ? g.dw_start : g.dw_end;
        const double dz = r == 0 ? g.dz_start : g.dz_end;
        const double z = camera.to_camera(p).z();
        const double w = dense(row, 3);
        dense_grad(row, 3) += dw * camera.fx / z;
        dense_grad.block<1, 3>(row, 0) += (dz - dw * camera.fx * w / (z * z)) * depth_row;
      }
    }
  }

  ControlMatrix grad = m->transpose() * dense_grad;
  for (std::size_t i = 0; i < wire.controls.size(); ++i) {
    grad(static_cast<Eigen::Index>(i), 3) *= wire.width_clamp.derivative(wire.controls[i].w);
  }
  return grad;
}

}  // namespace wire4d
