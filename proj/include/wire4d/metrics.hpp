#pragma once

// Structural metrics of a wire and the projection convergence report.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "wire4d/camera.hpp"
#include "wire4d/error.hpp"
#include "wire4d/projection.hpp"
#include "wire4d/spline.hpp"

namespace wire4d {

namespace detail {

inline constexpr std::array<double, 5> kGaussNodes{0.0, -0.5384693101056831, 0.5384693101056831,
                                                   -0.9061798459386640, 0.9061798459386640};
inline constexpr std::array<double, 5> kGaussWeights{0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                                                     0.2369268850561891, 0.2369268850561891};

inline double speed(const Wire4D& wire, double t) { return evaluate(wire, t, 1).head<3>().norm(); }

inline double gauss_length(const Wire4D& wire, double a, double b) {
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  double sum = 0.0;
  for (std::size_t i = 0; i < kGaussNodes.size(); ++i) sum += kGaussWeights[i] * speed(wire, mid + half * kGaussNodes[i]);
  return half * sum;
}

inline double adaptive_length(const Wire4D& wire, double a, double b, double whole, double rel_tol, int depth) {
  const double mid = 0.5 * (a + b);
  const double left = gauss_length(wire, a, mid);
  const double right = gauss_length(wire, mid, b);
  const double refined = left + right;
  if (depth >= 30 || std::abs(refined - whole) <= rel_tol * std::max(std::abs(refined), 1e-300)) return refined;
  return adaptive_length(wire, a, mid, left, rel_tol, depth + 1) +
         adaptive_length(wire, mid, b, right, rel_tol, depth + 1);
}

}  // namespace detail

/// Spatial arc length, adaptive 5-point Gauss-Legendre per span.
inline double total_length(const Wire4D& wire, double rel_tol = 1e-8) {
  double total = 0.0;
  for (const Span& span : wire.knots.spans()) {
    total += detail::adaptive_length(wire, span.t0, span.t1, detail::gauss_length(wire, span.t0, span.t1), rel_tol, 0);
  }
  return total;
}

inline constexpr std::size_t kComponentSamples = 4096;

struct ComponentSet {
  std::vector<std::pair<double, double>> intervals;
  std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> endpoints;

  std::size_t size() const { return intervals.size(); }
  bool empty() const { return intervals.empty(); }
};

/// Maximal parameter runs whose clamped width is at least `width_threshold`.
inline ComponentSet component_count(const Wire4D& wire, double width_threshold) {
  if (!(width_threshold > 0.0)) throw DomainError("component threshold must be positive");
  const double t0 = wire.t_min();
  const double t1 = wire.t_max();
  const double min_extent = (t1 - t0) / static_cast<double>(kComponentSamples);
  ComponentSet out;
  auto close_run = [&](double a, double b) {
    if (b - a < min_extent) return;
    out.intervals.emplace_back(a, b);
    out.endpoints.emplace_back(evaluate(wire, a).head<3>(), evaluate(wire, b).head<3>());
  };
  bool open = false;
  double start = t0;
  double last = t0;
  for (std::size_t i = 0; i < kComponentSamples; ++i) {
    const double t = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(kComponentSamples - 1);
    const bool on = evaluate(wire, t).w() >= width_threshold;
    if (on && !open) {
      open = true;
      start = t;
    } else if (!on && open) {
      open = false;
      close_run(start, last);
    }
    last = t;
  }
  if (open) close_run(start, last);
  return out;
}

/// Total weight of the minimum spanning tree joining the components, with
/// edge weight the shortest distance between their parametric endpoints.
inline double mst_connectivity_cost(const ComponentSet& components) {
  const std::size_t n = components.size();
  if (n == 0) throw DomainError("MST cost needs at least one component");
  auto distance = [&](std::size_t i, std::size_t j) {
    const auto& a = components.endpoints[i];
    const auto& b = components.endpoints[j];
    return std::min({(a.first - b.first).norm(), (a.first - b.second).norm(), (a.second - b.first).norm(),
                     (a.second - b.second).norm()});
  };
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<bool> in_tree(n, false);
  best[0] = 0.0;
  double total = 0.0;
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!in_tree[i] && (pick == n || best[i] < best[pick])) pick = i;
    }
    in_tree[pick] = true;
    total += best[pick];
    for (std::size_t i = 0; i < n; ++i) {
      if (!in_tree[i]) best[i] = std::min(best[i], distance(pick, i));
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Convergence

/// Copy of `wire` translated and scaled so the sampled curve's 3D bounding
/// box is centered at the origin with unit diagonal.
inline Wire4D normalize_to_unit_diagonal(const Wire4D& wire) {
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& p : sample_uniform(wire, 4000)) {
    lo = lo.cwiseMin(p.head<3>());
    hi = hi.cwiseMax(p.head<3>());
  }
  const double diag = (hi - lo).norm();
  if (!(diag > 0.0)) throw DomainError("cannot normalize a zero-extent wire");
  ControlMatrix m = wire.effective_matrix();
  const Eigen::RowVector3d center = (0.5 * (lo + hi)).transpose();
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.block<1, 3>(i, 0) = (m.block<1, 3>(i, 0) - center) / diag;
  return Wire4D::from_effective(m, wire.knots, wire.width_clamp);
}

struct ConvergenceRow {
  int subdivision = 1;
  double h = 0.0;      // mean 3D control-polygon length of a segment
  double error = 0.0;  // screen_space_error against the exact projection
  /// Max pixel distance between each segment and the exact projection over
  /// the same parameter interval, over the reference bounding-box diagonal.
  double parametric_error = 0.0;
};

/// Errors of fixed-count projections of the unit-normalized wire.
inline std::vector<ConvergenceRow> convergence_report(const Wire4D& wire, const Camera& camera,
                                                      const std::vector<int>& levels) {
  if (levels.size() < 3) throw DomainError("convergence report needs at least 3 levels");
  const Wire4D unit = normalize_to_unit_diagonal(wire);
  const auto reference = reference_projection(unit, camera, 20000);
  const double diag = bbox_diagonal(reference);
  const auto spans = unit.knots.spans();
  std::vector<ConvergenceRow> rows;
  for (int s : levels) {
    if (s < 1) throw DomainError("subdivision level must be positive");
    const StrokeBatch2D batch = project_wire(unit, camera, s);
    ConvergenceRow row;
    row.subdivision = s;
    const auto segments = to_bezier_segments(unit, s);
    for (const Bezier4& seg : segments) {
      for (int r = 1; r < 4; ++r) row.h += (seg.p[r].head<3>() - seg.p[r - 1].head<3>()).norm();
    }
    row.h /= static_cast<double>(segments.size());
    row.error = screen_space_error(batch, reference);
    double worst = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Span& span = spans[batch.provenance[i].span];
      const double a = span.t0 + span.length() * batch.provenance[i].sub / s;
      const double b = span.t0 + span.length() * (batch.provenance[i].sub + 1) / s;
      for (int k = 0; k <= 32; ++k) {
        const double u = k / 32.0;
        const auto exact = project_point(camera, evaluate(unit, a + u * (b - a)).head<3>());
        worst = std::max(worst, (batch.strokes[i].point(u) - Eigen::Vector2d(exact.u, exact.v)).norm());
      }
    }
    row.parametric_error = worst / diag;
    rows.push_back(row);
  }
  return rows;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("slope needs at least two matched points");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    den += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return num / den;
}

inline void write_convergence_csv(std::ostream& out, const std::vector<ConvergenceRow>& rows) {
  out << "h,error\n";
  out.precision(17);
  for (const auto& r : rows) out << r.h << ',' << r.error << '\n';
}

}  // namespace wire4d
