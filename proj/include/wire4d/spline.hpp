#pragma once

// The 4D wire: a clamped cubic B-spline over (x, y, z, width).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wire4d/error.hpp"

namespace wire4d {

inline constexpr int kDegree = 3;

using ControlMatrix = Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>;

/// One control point. `w` is the raw (unconstrained) width parameter; the
/// width actually carried by the curve is `WidthClamp::apply(w)`.
struct ControlPoint4 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double w = 0.0;

  bool operator==(const ControlPoint4&) const = default;
};

/// Smooth clamp of the raw width into [w_min, w_max] (scaled logistic).
struct WidthClamp {
  double w_min = 0.0;
  double w_max = 0.1;

  double range() const { return w_max - w_min; }

  double apply(double raw) const {
    return w_min + range() * logistic(raw);
  }

  double derivative(double raw) const {
    const double s = logistic(raw);
    return range() * s * (1.0 - s);
  }

  // Widths at or outside the bounds are pulled just inside so the inverse
  // stays finite.
  double inverse(double width) const {
    const double lo = 1e-12;
    double s = (width - w_min) / range();
    s = std::clamp(s, lo, 1.0 - lo);
    return std::log(s / (1.0 - s));
  }

  void validate() const {
    if (!(std::isfinite(w_min) && std::isfinite(w_max)) || w_min < 0.0 ||
        !(w_max > w_min)) {
      throw DomainError("width clamp must satisfy 0 <= w_min < w_max");
    }
  }

  bool operator==(const WidthClamp&) const = default;

  static double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }
};

/// Non-empty knot interval [t0, t1) of the spline; `knot` is the index k with
/// u_k = t0, so the supporting controls are k-3 .. k.
struct Span {
  std::size_t knot = 0;
  double t0 = 0.0;
  double t1 = 0.0;

  std::size_t first_control() const { return knot - kDegree; }
  double length() const { return t1 - t0; }
  double midpoint() const { return 0.5 * (t0 + t1); }
};

class KnotVector {
public:
  KnotVector() = default;
  explicit KnotVector(std::vector<double> knots) : knots_(std::move(knots)) {}

  /// Clamped uniform knots on [0, 1] for `control_count` controls.
  static KnotVector clamped_uniform(std::size_t control_count) {
    if (control_count < kDegree + 1) {
      throw DomainError("a cubic wire needs at least 4 control points");
    }
    const std::size_t spans = control_count - kDegree;
    std::vector<double> u;
    u.reserve(control_count + kDegree + 1);
    for (int i = 0; i < kDegree; ++i) u.push_back(0.0);
    for (std::size_t i = 0; i <= spans; ++i) {
      u.push_back(static_cast<double>(i) / static_cast<double>(spans));
    }
    for (int i = 0; i < kDegree; ++i) u.push_back(1.0);
    return KnotVector(std::move(u));
  }

  const std::vector<double>& values() const { return knots_; }
  std::size_t size() const { return knots_.size(); }
  double operator[](std::size_t i) const { return knots_[i]; }
  double t_min() const { return knots_[kDegree]; }
  double t_max() const { return knots_[knots_.size() - kDegree - 1]; }

  std::size_t multiplicity(double u) const {
    return static_cast<std::size_t>(std::count(knots_.begin(), knots_.end(), u));
  }

  std::vector<Span> spans() const {
    std::vector<Span> out;
    for (std::size_t k = kDegree; k + kDegree + 1 < knots_.size(); ++k) {
      if (knots_[k + 1] > knots_[k]) out.push_back({k, knots_[k], knots_[k + 1]});
    }
    return out;
  }

  /// Index k with u_k <= t < u_{k+1}; t == t_max maps to the last non-empty span.
  std::size_t find_span(double t) const {
    const std::size_t n = knots_.size() - kDegree - 2;  // last control index
    if (t >= knots_[n + 1]) {
      std::size_t k = n;
      while (k > kDegree && !(knots_[k] < knots_[k + 1])) --k;
      return k;
    }
    auto it = std::upper_bound(knots_.begin() + kDegree, knots_.begin() + n + 1, t);
    return static_cast<std::size_t>(it - knots_.begin()) - 1;
  }

  void validate(std::size_t control_count) const {
    if (control_count < kDegree + 1) {
      throw DomainError("a cubic wire needs at least 4 control points");
    }
    if (knots_.size() != control_count + kDegree + 1) {
      throw DomainError("knot count " + std::to_string(knots_.size()) +
                        " does not match " + std::to_string(control_count) +
                        " controls");
    }
    for (std::size_t i = 0; i < knots_.size(); ++i) {
      if (!std::isfinite(knots_[i])) throw DomainError("non-finite knot");
      if (i > 0 && knots_[i] < knots_[i - 1]) {
        throw DomainError("knot vector must be non-decreasing");
      }
    }
    for (int i = 0; i <= kDegree; ++i) {
      if (knots_[i] != knots_[0] || knots_[knots_.size() - 1 - i] != knots_.back()) {
        throw DomainError("knot vector must be clamped");
      }
    }
    if (!(knots_.back() > knots_.front())) throw DomainError("empty parameter domain");
    for (std::size_t i = kDegree + 1; i + kDegree + 1 < knots_.size(); ++i) {
      if (multiplicity(knots_[i]) > kDegree) {
        throw DomainError("interior knot multiplicity exceeds 3");
      }
    }
  }

  bool operator==(const KnotVector&) const = default;

private:
  std::vector<double> knots_;
};

struct Wire4D {
  std::vector<ControlPoint4> controls;
  KnotVector knots;
  WidthClamp width_clamp;

  std::size_t control_count() const { return controls.size(); }
  double t_min() const { return knots.t_min(); }
  double t_max() const { return knots.t_max(); }

  double width(std::size_t i) const { return width_clamp.apply(controls[i].w); }

  void validate() const {
    width_clamp.validate();
    knots.validate(controls.size());
    for (const auto& c : controls) {
      if (!(std::isfinite(c.x) && std::isfinite(c.y) && std::isfinite(c.z) &&
            std::isfinite(c.w))) {
        throw DomainError("non-finite control point");
      }
    }
  }

  ControlMatrix raw_matrix() const {
    ControlMatrix m(controls.size(), 4);
    for (std::size_t i = 0; i < controls.size(); ++i) {
      const auto& c = controls[i];
      m.row(static_cast<Eigen::Index>(i)) << c.x, c.y, c.z, c.w;
    }
    return m;
  }

  /// Controls with the width channel mapped through the clamp; this is the
  /// matrix the curve is a B-spline of.
  ControlMatrix effective_matrix() const {
    ControlMatrix m = raw_matrix();
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, 3) = width_clamp.apply(m(i, 3));
    return m;
  }

  /// Builds a wire whose effective controls are `m` (width column in
  /// clamped units).
  static Wire4D from_effective(const ControlMatrix& m, KnotVector knots,
                               WidthClamp clamp) {
    Wire4D wire;
    wire.knots = std::move(knots);
    wire.width_clamp = clamp;
    wire.controls.resize(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      wire.controls[static_cast<std::size_t>(i)] = {m(i, 0), m(i, 1), m(i, 2),
                                                    clamp.inverse(m(i, 3))};
    }
    return wire;
  }

  static Wire4D from_raw(const ControlMatrix& m, KnotVector knots, WidthClamp clamp) {
    Wire4D wire;
    wire.knots = std::move(knots);
    wire.width_clamp = clamp;
    wire.controls.resize(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      wire.controls[static_cast<std::size_t>(i)] = {m(i, 0), m(i, 1), m(i, 2), m(i, 3)};
    }
    return wire;
  }

  bool operator==(const Wire4D&) const = default;
};

/// Basis functions and their derivatives up to `order` at `t` in span `k`
/// (The NURBS Book, A2.3). Row r holds d^r/dt^r of N_{k-3..k}.
inline std::array<std::array<double, 4>, 4> basis_derivatives(const KnotVector& knots,
                                                              std::size_t k, double t,
                                                              int order) {
  constexpr int p = kDegree;
  const auto& u = knots.values();
  double ndu[p + 1][p + 1];
  double left[p + 1];
  double right[p + 1];
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - u[k + 1 - j];
    right[j] = u[k + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double tmp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    ndu[j][j] = saved;
  }

  std::array<std::array<double, 4>, 4> ders{};
  for (int j = 0; j <= p; ++j) ders[0][j] = ndu[j][p];

  double a[2][p + 1];
  for (int r = 0; r <= p; ++r) {
    int s1 = 0;
    int s2 = 1;
    a[0][0] = 1.0;
    for (int kk = 1; kk <= order; ++kk) {
      double d = 0.0;
      const int rk = r - kk;
      const int pk = p - kk;
      if (r >= kk) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? kk - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][kk] = -a[s1][kk - 1] / ndu[pk + 1][r];
        d += a[s2][kk] * ndu[r][pk];
      }
      ders[kk][r] = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int kk = 1; kk <= order; ++kk) {
    for (int j = 0; j <= p; ++j) ders[kk][j] *= factor;
    factor *= (p - kk);
  }
  return ders;
}

inline void check_parameter(const KnotVector& knots, double t) {
  if (!(t >= knots.t_min() && t <= knots.t_max())) {
    throw DomainError("parameter " + std::to_string(t) + " outside [" +
                      std::to_string(knots.t_min()) + ", " +
                      std::to_string(knots.t_max()) + "]");
  }
}

/// d^order C / dt^order of the spline with control matrix `controls`
/// (any column count) at t.
template <typename Derived>
Eigen::Matrix<double, 1, Derived::ColsAtCompileTime> evaluate_controls(
    const Eigen::MatrixBase<Derived>& controls, const KnotVector& knots, double t,
    int order = 0) {
  if (order < 0 || order > kDegree) throw DomainError("derivative order must be 0..3");
  check_parameter(knots, t);
  const std::size_t k = knots.find_span(t);
  const auto ders = basis_derivatives(knots, k, t, order);
  Eigen::Matrix<double, 1, Derived::ColsAtCompileTime> out(1, controls.cols());
  out.setZero();
  for (int j = 0; j <= kDegree; ++j) {
    out += ders[order][j] * controls.row(static_cast<Eigen::Index>(k - kDegree + j));
  }
  return out;
}

/// C(t) or one of its derivatives; the fourth component is the clamped width.
inline Eigen::Vector4d evaluate(const Wire4D& wire, double t, int order = 0) {
  return evaluate_controls(wire.effective_matrix(), wire.knots, t, order).transpose();
}

/// Samples C(t) at `count` uniform parameters over the domain.
inline std::vector<Eigen::Vector4d> sample_uniform(const Wire4D& wire, std::size_t count) {
  const ControlMatrix m = wire.effective_matrix();
  std::vector<Eigen::Vector4d> out;
  out.reserve(count);
  const double a = wire.t_min();
  const double b = wire.t_max();
  for (std::size_t i = 0; i < count; ++i) {
    const double t =
        count == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1);
    out.push_back(evaluate_controls(m, wire.knots, t, 0).transpose());
  }
  return out;
}

struct JerkResult {
  double energy = 0.0;
  ControlMatrix gradient;  // same layout as the control matrix it was taken against
};

/// Integral of |C'''(t)|^2 over the domain for the spline of `controls`
/// (all four channels), with its exact gradient w.r.t. `controls`.
inline JerkResult jerk_energy(const ControlMatrix& controls, const KnotVector& knots) {
  JerkResult out;
  out.gradient = ControlMatrix::Zero(controls.rows(), 4);
  for (const Span& span : knots.spans()) {
    // C''' is constant on each span of a cubic.
    const auto ders = basis_derivatives(knots, span.knot, span.midpoint(), 3);
    Eigen::RowVector4d third = Eigen::RowVector4d::Zero();
    for (int j = 0; j <= kDegree; ++j) {
      third += ders[3][j] * controls.row(static_cast<Eigen::Index>(span.first_control() + j));
    }
    const double len = span.length();
    out.energy += len * third.squaredNorm();
    for (int j = 0; j <= kDegree; ++j) {
      out.gradient.row(static_cast<Eigen::Index>(span.first_control() + j)) +=
          2.0 * len * ders[3][j] * third;
    }
  }
  return out;
}

/// Jerk energy of the wire; the gradient is w.r.t. the raw parameters
/// (x, y, z, raw width).
inline JerkResult jerk_energy(const Wire4D& wire) {
  JerkResult out = jerk_energy(wire.effective_matrix(), wire.knots);
  for (std::size_t i = 0; i < wire.controls.size(); ++i) {
    out.gradient(static_cast<Eigen::Index>(i), 3) *=
        wire.width_clamp.derivative(wire.controls[i].w);
  }
  return out;
}

/// Boehm insertion of a single knot into the spline of `controls`.
/// Returns the refined control matrix and updates `knots` in place.
inline ControlMatrix insert_knot_controls(const ControlMatrix& controls, KnotVector& knots,
                                          double u_hat) {
  constexpr int p = kDegree;
  if (!(u_hat > knots.t_min() && u_hat < knots.t_max())) {
    throw DomainError("knot must lie strictly inside the domain");
  }
  const std::size_t s = knots.multiplicity(u_hat);
  if (s >= static_cast<std::size_t>(p)) {
    throw DomainError("knot " + std::to_string(u_hat) + " already has full multiplicity");
  }
  const auto& u = knots.values();
  const std::size_t k = knots.find_span(u_hat);
  const auto n_old = static_cast<std::size_t>(controls.rows());

  ControlMatrix out(static_cast<Eigen::Index>(n_old + 1), controls.cols());
  for (std::size_t i = 0; i <= n_old; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (i + p <= k) {
      out.row(row) = controls.row(row);
    } else if (i + s <= k) {
      const double alpha = (u_hat - u[i]) / (u[i + p] - u[i]);
      out.row(row) = alpha * controls.row(row) + (1.0 - alpha) * controls.row(row - 1);
    } else {
      out.row(row) = controls.row(row - 1);
    }
  }

  std::vector<double> refined(u.begin(), u.end());
  refined.insert(refined.begin() + static_cast<std::ptrdiff_t>(k) + 1, u_hat);
  knots = KnotVector(std::move(refined));
  return out;
}

/// Inserts `u_hat` without changing the curve; width is inserted by the
/// same affine rule as the spatial channels.
inline Wire4D insert_knot(const Wire4D& wire, double u_hat) {
  KnotVector knots = wire.knots;
  const ControlMatrix refined = insert_knot_controls(wire.effective_matrix(), knots, u_hat);
  Wire4D out = Wire4D::from_effective(refined, std::move(knots), wire.width_clamp);
  // Controls outside the affected window keep their exact raw values.
  const std::size_t k = wire.knots.find_span(u_hat);
  const std::size_t s = wire.knots.multiplicity(u_hat);
  for (std::size_t i = 0; i < out.controls.size(); ++i) {
    if (i + kDegree <= k) {
      out.controls[i].w = wire.controls[i].w;
    } else if (i + s > k) {
      out.controls[i].w = wire.controls[i - 1].w;
    }
  }
  return out;
}

/// For each control after inserting `u_hat` into `knots`, the unchanged
/// control it copies, or -1 for controls inside the blended window.
inline std::vector<long> insertion_row_map(const KnotVector& knots, double u_hat) {
  const std::size_t k = knots.find_span(u_hat);
  const std::size_t s = knots.multiplicity(u_hat);
  const std::size_t n_new = knots.size() - kDegree;
  std::vector<long> map(n_new, -1);
  for (std::size_t i = 0; i < n_new; ++i) {
    if (i + kDegree <= k) {
      map[i] = static_cast<long>(i);
    } else if (i + s > k) {
      map[i] = static_cast<long>(i) - 1;
    }
  }
  return map;
}

/// Clamped uniform wire from explicit control points.
inline Wire4D make_wire(std::vector<ControlPoint4> controls, WidthClamp clamp = {}) {
  Wire4D wire;
  wire.knots = KnotVector::clamped_uniform(controls.size());
  wire.controls = std::move(controls);
  wire.width_clamp = clamp;
  wire.validate();
  return wire;
}

}  // namespace wire4d
