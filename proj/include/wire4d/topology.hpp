#pragma once

// Width-guided pruning/reinitialization and gradient-driven knot insertion.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "wire4d/error.hpp"
#include "wire4d/init.hpp"
#include "wire4d/spline.hpp"

namespace wire4d {

/// Default prune threshold: 2% of the width range.
inline double default_width_epsilon(const WidthClamp& clamp) { return 0.02 * clamp.range(); }

/// Controls whose clamped width is below `width_epsilon`, ascending.
inline std::vector<std::size_t> detect_prune_set(const Wire4D& wire, double width_epsilon) {
  if (!(width_epsilon > 0.0)) throw DomainError("width_epsilon must be positive");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < wire.control_count(); ++i) {
    if (wire.width(i) < width_epsilon) out.push_back(i);
  }
  return out;
}

struct BoxBounds {
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(-1.0);
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(1.0);
};

struct SphereBounds {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 1.0;
};

using ReinitBounds = std::variant<BoxBounds, SphereBounds, InitVolume>;

/// Uniform point inside the bounds.
template <typename Rng>
Eigen::Vector3d sample_bounds(const ReinitBounds& bounds, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (const auto* box = std::get_if<BoxBounds>(&bounds)) {
    if (!((box->hi - box->lo).minCoeff() > 0.0)) throw DomainError("reinit box is empty");
    return box->lo + (box->hi - box->lo).cwiseProduct(Eigen::Vector3d(unit(rng), unit(rng), unit(rng)));
  }
  if (const auto* volume = std::get_if<InitVolume>(&bounds)) return sample_volume_points(*volume, 1, rng).front();
  const auto& ball = std::get<SphereBounds>(bounds);
  if (!(ball.radius > 0.0)) throw DomainError("reinit sphere is empty");
  while (true) {
    const Eigen::Vector3d p(2 * unit(rng) - 1, 2 * unit(rng) - 1, 2 * unit(rng) - 1);
    if (p.squaredNorm() <= 1.0) return ball.center + ball.radius * p;
  }
}

struct PruneReport {
  std::vector<std::size_t> pruned_indices;
  std::vector<Eigen::Vector3d> new_positions;
  double reset_width = 0.0;
};

struct ReinitResult {
  Wire4D wire;
  PruneReport report;
};

/// Moves each pruned control to a random point in `bounds` and resets its
/// width. Control count and knots are untouched.
inline ReinitResult width_guided_reinit(const Wire4D& wire, const std::vector<std::size_t>& prune,
                                        const ReinitBounds& bounds, std::uint64_t seed, double reset_width) {
  ReinitResult out{wire, {}};
  out.report.reset_width = reset_width;
  if (prune.empty()) return out;
  std::vector<std::size_t> sorted = prune;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw DomainError("duplicate prune index");
  if (sorted.back() >= wire.control_count()) throw DomainError("prune index out of range");
  std::mt19937_64 rng(seed);
  const double raw = wire.width_clamp.inverse(reset_width);
  for (std::size_t i : sorted) {
    const Eigen::Vector3d p = sample_bounds(bounds, rng);
    out.wire.controls[i] = {p.x(), p.y(), p.z(), raw};
    out.report.pruned_indices.push_back(i);
    out.report.new_positions.push_back(p);
  }
  return out;
}

/// Per-control gradient magnitudes summed over a trailing window of steps.
class GradientHistory {
 public:
  explicit GradientHistory(std::size_t control_count = 0, std::size_t window = 50)
      : controls_(control_count), window_(window) {
    if (window_ < 1) throw DomainError("gradient window must be at least 1");
  }

  /// Records one step; `grad` has one row per control.
  void push(const ControlMatrix& grad) {
    if (static_cast<std::size_t>(grad.rows()) != controls_) throw DomainError("gradient history size mismatch");
    std::vector<double> mags(controls_);
    for (std::size_t i = 0; i < controls_; ++i) mags[i] = grad.row(static_cast<Eigen::Index>(i)).norm();
    steps_.push_back(std::move(mags));
    if (steps_.size() > window_) steps_.pop_front();
  }

  std::vector<double> accumulated() const {
    std::vector<double> sum(controls_, 0.0);
    for (const auto& step : steps_) {
      for (std::size_t i = 0; i < controls_; ++i) sum[i] += step[i];
    }
    return sum;
  }

  void reset(std::size_t control_count) {
    controls_ = control_count;
    steps_.clear();
  }

  std::size_t control_count() const { return controls_; }
  std::size_t window() const { return window_; }
  std::size_t size() const { return steps_.size(); }

 private:
  std::size_t controls_;
  std::size_t window_;
  std::deque<std::vector<double>> steps_;
};

struct RefineResult {
  Wire4D wire;
  std::vector<std::size_t> spans;  // indices into the pre-refinement span list
  std::vector<long> row_map;        // new control -> unchanged old control, or -1
};

/// Inserts `k` knots at the midpoints of the k spans with the largest
/// saliency (max accumulated gradient over the span's 4 controls); ties go
/// to the lower span index.
inline RefineResult gradient_knot_refine(const Wire4D& wire, const GradientHistory& history, std::size_t k) {
  if (k < 1) throw DomainError("insert count must be at least 1");
  if (history.control_count() != wire.control_count()) throw DomainError("gradient history does not match wire");
  const auto spans = wire.knots.spans();
  std::vector<std::size_t> insertable;
  for (std::size_t s = 0; s < spans.size(); ++s) {
    if (wire.knots.multiplicity(spans[s].midpoint()) < static_cast<std::size_t>(kDegree)) insertable.push_back(s);
  }
  if (insertable.size() < k) throw DomainError("not enough insertable spans");
  const auto acc = history.accumulated();
  std::vector<double> saliency(spans.size(), 0.0);
  for (std::size_t s : insertable) {
    for (int j = 0; j <= kDegree; ++j) saliency[s] = std::max(saliency[s], acc[spans[s].first_control() + static_cast<std::size_t>(j)]);
  }
  std::stable_sort(insertable.begin(), insertable.end(),
                   [&](std::size_t a, std::size_t b) { return saliency[a] > saliency[b]; });
  insertable.resize(k);
  std::sort(insertable.begin(), insertable.end());

  RefineResult out{wire, insertable, {}};
  out.row_map.resize(wire.control_count());
  std::iota(out.row_map.begin(), out.row_map.end(), 0L);
  for (std::size_t s : insertable) {
    const double u = spans[s].midpoint();
    const auto step = insertion_row_map(out.wire.knots, u);
    std::vector<long> composed(step.size(), -1);
    for (std::size_t i = 0; i < step.size(); ++i) {
      if (step[i] >= 0) composed[i] = out.row_map[static_cast<std::size_t>(step[i])];
    }
    out.row_map = std::move(composed);
    out.wire = insert_knot(out.wire, u);
  }
  return out;
}

}  // namespace wire4d
