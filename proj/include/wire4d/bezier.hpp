#pragma once

// Cubic Bezier segments and the linear maps that turn B-spline controls into
// dense Bezier control points (basis conversion followed by dyadic
// De Casteljau subdivision).

#include <array>
#include <bit>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "wire4d/error.hpp"
#include "wire4d/spline.hpp"

namespace wire4d {

template <int Dim>
struct BezierSegment {
  using Point = Eigen::Matrix<double, Dim, 1>;

  std::array<Point, 4> p;

  Point point(double t) const {
    const double s = 1.0 - t;
    return s * s * s * p[0] + 3.0 * s * s * t * p[1] + 3.0 * s * t * t * p[2] +
           t * t * t * p[3];
  }

  Point derivative(double t) const {
    const double s = 1.0 - t;
    return 3.0 * s * s * (p[1] - p[0]) + 6.0 * s * t * (p[2] - p[1]) +
           3.0 * t * t * (p[3] - p[2]);
  }

  Point second_derivative(double t) const {
    return 6.0 * (1.0 - t) * (p[2] - 2.0 * p[1] + p[0]) + 6.0 * t * (p[3] - 2.0 * p[2] + p[1]);
  }

  /// De Casteljau split at t.
  std::pair<BezierSegment, BezierSegment> split(double t) const {
    const Point p01 = p[0] + t * (p[1] - p[0]);
    const Point p12 = p[1] + t * (p[2] - p[1]);
    const Point p23 = p[2] + t * (p[3] - p[2]);
    const Point p012 = p01 + t * (p12 - p01);
    const Point p123 = p12 + t * (p23 - p12);
    const Point mid = p012 + t * (p123 - p012);
    return {BezierSegment{{p[0], p01, p012, mid}}, BezierSegment{{mid, p123, p23, p[3]}}};
  }

  double control_polygon_length() const {
    return (p[1] - p[0]).norm() + (p[2] - p[1]).norm() + (p[3] - p[2]).norm();
  }
};

using Bezier2 = BezierSegment<2>;
using Bezier3 = BezierSegment<3>;
using Bezier4 = BezierSegment<4>;

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Bernstein weights of a cubic at t.
inline std::array<double, 4> bernstein(double t) {
  const double s = 1.0 - t;
  return {s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t};
}

/// Uniform cubic B-spline span (P0..P3) to Bezier controls (b0..b3).
inline Eigen::Matrix4d uniform_bspline_to_bezier() {
  Eigen::Matrix4d m;
  m << 1, 4, 1, 0,
       0, 4, 2, 0,
       0, 2, 4, 0,
       0, 1, 4, 1;
  return m / 6.0;
}

/// Left (first) or right (second) half of a cubic Bezier under De Casteljau
/// at t = 1/2. All entries are dyadic, so repeated halving is exact.
inline Eigen::Matrix4d bezier_half(bool right) {
  Eigen::Matrix4d m;
  if (!right) {
    m << 1, 0, 0, 0,
         0.5, 0.5, 0, 0,
         0.25, 0.5, 0.25, 0,
         0.125, 0.375, 0.375, 0.125;
  } else {
    m << 0.125, 0.375, 0.375, 0.125,
         0, 0.25, 0.5, 0.25,
         0, 0, 0.5, 0.5,
         0, 0, 0, 1;
  }
  return m;
}

inline bool is_power_of_two(int s) { return s >= 1 && std::has_single_bit(static_cast<unsigned>(s)); }

/// 4x4 block mapping a Bezier to piece `index` of `count` equal parameter
/// pieces (count a power of two).
inline Eigen::Matrix4d subdivision_block(int count, int index) {
  if (!is_power_of_two(count)) {
    throw DomainError("segments per span must be a power of two, got " + std::to_string(count));
  }
  const int levels = std::countr_zero(static_cast<unsigned>(count));
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (int level = levels - 1; level >= 0; --level) {
    m = bezier_half(((index >> level) & 1) != 0) * m;
  }
  return m;
}

namespace detail {

inline SparseMatrix to_sparse(const Eigen::MatrixXd& dense) {
  std::vector<Eigen::Triplet<double>> triplets;
  for (Eigen::Index r = 0; r < dense.rows(); ++r) {
    for (Eigen::Index c = 0; c < dense.cols(); ++c) {
      if (dense(r, c) != 0.0) triplets.emplace_back(static_cast<int>(r), static_cast<int>(c), dense(r, c));
    }
  }
  SparseMatrix out(dense.rows(), dense.cols());
  out.setFromTriplets(triplets.begin(), triplets.end());
  return out;
}

}  // namespace detail

/// Basis conversion M_{B->Z}: rows 4j..4j+3 are the Bezier controls of the
/// j-th non-empty span as combinations of the B-spline controls. Built by
/// raising every interior knot to multiplicity 3 on the identity matrix.
inline Eigen::MatrixXd basis_conversion_dense(const KnotVector& knots) {
  const std::size_t n = knots.size() - kDegree - 1;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> basis =
      Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  KnotVector refined = knots;
  for (const Span& span : knots.spans()) {
    if (span.t0 <= knots.t_min()) continue;
    while (refined.multiplicity(span.t0) < static_cast<std::size_t>(kDegree)) {
      // insert_knot_controls is written for fixed 4 columns; do it by hand here.
      constexpr int p = kDegree;
      const auto& u = refined.values();
      const double u_hat = span.t0;
      const std::size_t s = refined.multiplicity(u_hat);
      const std::size_t k = refined.find_span(u_hat);
      const auto rows = basis.rows();
      decltype(basis) next(rows + 1, basis.cols());
      for (Eigen::Index i = 0; i <= rows; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (ui + p <= k) {
          next.row(i) = basis.row(i);
        } else if (ui + s <= k) {
          const double alpha = (u_hat - u[ui]) / (u[ui + p] - u[ui]);
          next.row(i) = alpha * basis.row(i) + (1.0 - alpha) * basis.row(i - 1);
        } else {
          next.row(i) = basis.row(i - 1);
        }
      }
      std::vector<double> vals(u.begin(), u.end());
      vals.insert(vals.begin() + static_cast<std::ptrdiff_t>(k) + 1, u_hat);
      refined = KnotVector(std::move(vals));
      basis = std::move(next);
    }
  }
  // After full refinement each span j owns controls 3j..3j+3.
  const auto spans = knots.spans().size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(4 * spans), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < spans; ++j) {
    for (int r = 0; r < 4; ++r) {
      out.row(static_cast<Eigen::Index>(4 * j + r)) = basis.row(static_cast<Eigen::Index>(3 * j + r));
    }
  }
  return out;
}

/// Subdivision stack: block diagonal, span j split into counts[j] pieces.
inline SparseMatrix subdivision_stack(const std::vector<int>& counts) {
  std::vector<Eigen::Triplet<double>> triplets;
  int row = 0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    for (int i = 0; i < counts[j]; ++i) {
      const Eigen::Matrix4d block = subdivision_block(counts[j], i);
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
          if (block(r, c) != 0.0) {
            triplets.emplace_back(row + r, static_cast<int>(4 * j) + c, block(r, c));
          }
        }
      }
      row += 4;
    }
  }
  SparseMatrix out(row, static_cast<Eigen::Index>(4 * counts.size()));
  out.setFromTriplets(triplets.begin(), triplets.end());
  return out;
}

/// M_dense = SubdivisionStack * M_{B->Z} for arbitrary knots and per-span
/// counts. Shared immutable results are cached by (knots, counts).
inline std::shared_ptr<const SparseMatrix> dense_conversion_matrix(const KnotVector& knots,
                                                                   const std::vector<int>& counts) {
  if (counts.size() != knots.spans().size()) {
    throw DomainError("need one subdivision count per span");
  }
  for (int c : counts) {
    if (!is_power_of_two(c)) throw DomainError("segments per span must be a power of two");
  }
  using Key = std::pair<std::vector<double>, std::vector<int>>;
  static std::mutex mutex;
  static std::map<Key, std::shared_ptr<const SparseMatrix>> cache;
  Key key{knots.values(), counts};
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const SparseMatrix basis = detail::to_sparse(basis_conversion_dense(knots));
  auto result = std::make_shared<const SparseMatrix>(SparseMatrix(subdivision_stack(counts) * basis));
  std::lock_guard lock(mutex);
  if (cache.size() > 256) cache.clear();
  return cache.emplace(std::move(key), std::move(result)).first->second;
}

/// M_dense for a clamped uniform wire with `control_count` controls and
/// `segments_per_span` pieces per span.
inline std::shared_ptr<const SparseMatrix> dense_conversion_matrix(std::size_t control_count,
                                                                   int segments_per_span) {
  if (control_count < kDegree + 1) throw DomainError("need at least 4 controls");
  if (!is_power_of_two(segments_per_span)) {
    throw DomainError("segments per span must be a power of two");
  }
  const KnotVector knots = KnotVector::clamped_uniform(control_count);
  return dense_conversion_matrix(knots, std::vector<int>(knots.spans().size(), segments_per_span));
}

/// Splits the dense control matrix (4 rows per segment) into segments.
template <int Dim, typename Derived>
std::vector<BezierSegment<Dim>> segments_from_rows(const Eigen::MatrixBase<Derived>& dense) {
  std::vector<BezierSegment<Dim>> out(static_cast<std::size_t>(dense.rows() / 4));
  for (std::size_t s = 0; s < out.size(); ++s) {
    for (int r = 0; r < 4; ++r) {
      out[s].p[r] = dense.row(static_cast<Eigen::Index>(4 * s + r)).transpose().template head<Dim>();
    }
  }
  return out;
}

/// Dense 4D Bezier segments of the wire with per-span subdivision counts.
inline std::vector<Bezier4> to_bezier_segments(const Wire4D& wire, const std::vector<int>& counts) {
  const auto m = dense_conversion_matrix(wire.knots, counts);
  const ControlMatrix dense = (*m) * wire.effective_matrix();
  return segments_from_rows<4>(dense);
}

inline std::vector<Bezier4> to_bezier_segments(const Wire4D& wire, int segments_per_span = 1) {
  return to_bezier_segments(wire,
                            std::vector<int>(wire.knots.spans().size(), segments_per_span));
}

/// Dense conversion of an arbitrary control matrix with shared knots; linear
/// in `controls`.
inline ControlMatrix dense_controls(const ControlMatrix& controls, const KnotVector& knots,
                                    int segments_per_span) {
  const auto m = dense_conversion_matrix(
      knots, std::vector<int>(knots.spans().size(), segments_per_span));
  return (*m) * controls;
}

}  // namespace wire4d
