#pragma once

// Least-squares fitting of a wire to an ordered polyline.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "wire4d/error.hpp"
#include "wire4d/spline.hpp"

namespace wire4d {

struct FitOptions {
  WidthClamp width_clamp;
  /// Width used when the input has no width column.
  double initial_width = 0.01;
  /// Joint control/parameter refinement steps after the chord-length fit.
  int correction_iterations = 100;
  double correction_tolerance = 1e-12;
};

struct FitResult {
  Wire4D wire;
  /// RMS spatial distance from the input points to C(t_j).
  double residual_rms = 0.0;
  std::vector<double> parameters;
};

namespace detail {

inline double greville(const KnotVector& knots, std::size_t i) {
  return (knots[i + 1] + knots[i + 2] + knots[i + 3]) / 3.0;
}

// Interior collocation matrix (interior points x interior controls).
inline Eigen::MatrixXd interior_collocation(const std::vector<double>& params, const KnotVector& knots,
                                            std::size_t control_count) {
  const auto interior = static_cast<Eigen::Index>(control_count) - 2;
  const auto rows = static_cast<Eigen::Index>(params.size()) - 2;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(std::max<Eigen::Index>(rows, 0), std::max<Eigen::Index>(interior, 0));
  for (Eigen::Index j = 0; j < rows; ++j) {
    const double t = params[static_cast<std::size_t>(j + 1)];
    const std::size_t k = knots.find_span(t);
    const auto basis = basis_derivatives(knots, k, t, 0);
    for (int b = 0; b <= kDegree; ++b) {
      const auto col = static_cast<Eigen::Index>(k - kDegree + b) - 1;
      if (col >= 0 && col < interior) a(j, col) += basis[0][b];
    }
  }
  return a;
}

inline constexpr double kMinCollocationConditioning = 1e-6;

// Ratio of smallest to largest singular value over min(rows, cols) values.
inline double collocation_conditioning(const Eigen::MatrixXd& a) {
  if (a.rows() == 0 || a.cols() == 0) return 1.0;
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues();
  if (!(sv(0) > 0.0)) return 0.0;
  return sv(sv.size() - 1) / sv(0);
}

// Parameters spread like the Greville abscissae, interpolated by point index.
inline std::vector<double> greville_parameters(std::size_t n_pts, const KnotVector& knots, std::size_t control_count) {
  std::vector<double> out(n_pts, 0.0);
  for (std::size_t j = 0; j < n_pts; ++j) {
    const double x = static_cast<double>(j) * static_cast<double>(control_count - 1) / static_cast<double>(n_pts - 1);
    const auto i = std::min(static_cast<std::size_t>(x), control_count - 2);
    const double f = x - static_cast<double>(i);
    out[j] = (1.0 - f) * greville(knots, i) + f * greville(knots, i + 1);
  }
  out.front() = 0.0;
  out.back() = 1.0;
  return out;
}

// Solves for controls given fixed parameters. Interior controls are found as
// minimum-norm offsets from the straight line through the endpoints, so
// under-determined fits degrade to that line.
inline Eigen::MatrixXd solve_controls(const Eigen::MatrixXd& points, const std::vector<double>& params,
                                      const KnotVector& knots, std::size_t control_count) {
  const auto dims = points.cols();
  const auto rows = points.rows();
  const Eigen::RowVectorXd first = points.row(0);
  const Eigen::RowVectorXd last = points.row(rows - 1);

  Eigen::MatrixXd controls(static_cast<Eigen::Index>(control_count), dims);
  for (std::size_t i = 0; i < control_count; ++i) {
    controls.row(static_cast<Eigen::Index>(i)) = first + greville(knots, i) * (last - first);
  }
  const auto interior = static_cast<Eigen::Index>(control_count) - 2;
  if (interior <= 0) return controls;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, interior);
  Eigen::MatrixXd rhs(rows, dims);
  for (Eigen::Index j = 0; j < rows; ++j) {
    const double t = params[static_cast<std::size_t>(j)];
    const std::size_t k = knots.find_span(t);
    const auto basis = basis_derivatives(knots, k, t, 0);
    rhs.row(j) = points.row(j) - (first + t * (last - first));
    for (int b = 0; b <= kDegree; ++b) {
      const auto col = static_cast<Eigen::Index>(k - kDegree + b) - 1;
      if (col >= 0 && col < interior) a(j, col) += basis[0][b];
    }
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  controls.middleRows(1, interior) += cod.solve(rhs);
  return controls;
}

// Levenberg-Marquardt over interior controls and interior parameters
// together; the per-point parameters are eliminated with a Schur complement.
// Returns the final RMS spatial residual.
inline double refine_jointly(const Eigen::MatrixXd& points, std::vector<double>& params, const KnotVector& knots,
                             Eigen::MatrixXd& controls, const FitOptions& options) {
  const auto dims = static_cast<int>(points.cols());
  const auto n_pts = static_cast<std::size_t>(points.rows());
  const auto n_ctrl = static_cast<int>(controls.rows());
  const int interior = n_ctrl - 2;
  const int unknowns = interior * dims;

  auto cost_of = [&](const Eigen::MatrixXd& c, const std::vector<double>& ts) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n_pts; ++j) {
      sum += (evaluate_controls(c, knots, ts[j], 0) - points.row(static_cast<Eigen::Index>(j))).squaredNorm();
    }
    return sum;
  };
  auto spatial_rms = [&](const Eigen::MatrixXd& c, const std::vector<double>& ts) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n_pts; ++j) {
      const Eigen::RowVectorXd p = evaluate_controls(c, knots, ts[j], 0);
      sum += (p.head(3) - points.row(static_cast<Eigen::Index>(j)).head(3)).squaredNorm();
    }
    return std::sqrt(sum / static_cast<double>(n_pts));
  };

  double cost = cost_of(controls, params);
  double lambda = 1e-6;
  for (int iter = 0; iter < options.correction_iterations && cost > 0.0; ++iter) {
    Eigen::MatrixXd schur = Eigen::MatrixXd::Zero(unknowns, unknowns);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(unknowns);
    struct PointTerm {
      std::size_t k;
      std::array<double, 4> basis;
      Eigen::VectorXd tangent;
      double gt;
      double ct;
    };
    std::vector<PointTerm> terms(n_pts);
    for (std::size_t j = 0; j < n_pts; ++j) {
      const double t = params[j];
      const std::size_t k = knots.find_span(t);
      const auto ders = basis_derivatives(knots, k, t, 1);
      Eigen::VectorXd value = Eigen::VectorXd::Zero(dims);
      Eigen::VectorXd tangent = Eigen::VectorXd::Zero(dims);
      for (int b = 0; b <= kDegree; ++b) {
        const auto row = static_cast<Eigen::Index>(k - kDegree + b);
        value += ders[0][b] * controls.row(row).transpose();
        tangent += ders[1][b] * controls.row(row).transpose();
      }
      const Eigen::VectorXd r = value - points.row(static_cast<Eigen::Index>(j)).transpose();
      const bool free_t = j > 0 && j + 1 < n_pts;
      PointTerm& term = terms[j];
      term.k = k;
      term.tangent = free_t ? tangent : Eigen::VectorXd::Zero(dims);
      term.gt = -term.tangent.dot(r);
      term.ct = term.tangent.squaredNorm() * (1.0 + lambda) + 1e-300;
      for (int b = 0; b <= kDegree; ++b) term.basis[b] = ders[0][b];
      // Accumulate J_P^T J_P - B B^T / C and the reduced right-hand side.
      for (int a = 0; a <= kDegree; ++a) {
        const int ia = static_cast<int>(k) - kDegree + a - 1;
        if (ia < 0 || ia >= interior) continue;
        rhs.segment(ia * dims, dims) += -term.basis[a] * r - term.basis[a] * term.tangent * (term.gt / term.ct);
        for (int b = 0; b <= kDegree; ++b) {
          const int ib = static_cast<int>(k) - kDegree + b - 1;
          if (ib < 0 || ib >= interior) continue;
          const double w = term.basis[a] * term.basis[b];
          schur.block(ia * dims, ib * dims, dims, dims).diagonal().array() += w;
          schur.block(ia * dims, ib * dims, dims, dims) -= w * term.tangent * term.tangent.transpose() / term.ct;
        }
      }
    }
    schur.diagonal() += lambda * schur.diagonal().cwiseAbs() + Eigen::VectorXd::Constant(unknowns, 1e-12);
    const Eigen::VectorXd dx = schur.ldlt().solve(rhs);

    Eigen::MatrixXd trial = controls;
    for (int i = 0; i < interior; ++i) trial.row(i + 1) += dx.segment(i * dims, dims).transpose();
    std::vector<double> trial_params = params;
    for (std::size_t j = 1; j + 1 < n_pts; ++j) {
      const PointTerm& term = terms[j];
      double bdx = 0.0;
      for (int a = 0; a <= kDegree; ++a) {
        const int ia = static_cast<int>(term.k) - kDegree + a - 1;
        if (ia < 0 || ia >= interior) continue;
        bdx += term.basis[a] * term.tangent.dot(dx.segment(ia * dims, dims));
      }
      trial_params[j] = std::clamp(params[j] + (term.gt - bdx) / term.ct, 0.0, 1.0);
    }
    const double trial_cost = cost_of(trial, trial_params);
    if (trial_cost < cost) {
      const bool converged = cost - trial_cost <= options.correction_tolerance * std::max(cost, 1e-300) ||
                             trial_cost < 1e-28;
      controls = std::move(trial);
      params = std::move(trial_params);
      cost = trial_cost;
      lambda = std::max(lambda * 0.3, 1e-12);
      if (converged) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e8) break;
    }
  }
  return spatial_rms(controls, params);
}

}  // namespace detail

/// Fits a clamped uniform cubic wire with `control_count` controls to an
/// ordered point sequence (N x 3 or N x 4 rows). Chord-length parameters
/// (Greville-spaced when those are ill-conditioned), refined jointly with the
/// controls; endpoints are interpolated.
inline FitResult fit_to_polyline(const Eigen::MatrixXd& points, std::size_t control_count,
                                 const FitOptions& options = {}) {
  if (points.rows() < 2) throw DomainError("fit needs at least 2 points");
  if (points.cols() != 3 && points.cols() != 4) throw DomainError("fit needs 3D or 4D points");
  if (control_count < kDegree + 1) throw DomainError("fit needs at least 4 controls");
  if (!points.allFinite()) throw DomainError("non-finite input point");
  options.width_clamp.validate();

  const auto n_pts = static_cast<std::size_t>(points.rows());
  const Eigen::MatrixXd spatial = points.leftCols(3);
  std::vector<double> params(n_pts, 0.0);
  for (std::size_t j = 1; j < n_pts; ++j) {
    params[j] = params[j - 1] + (spatial.row(static_cast<Eigen::Index>(j)) -
                                 spatial.row(static_cast<Eigen::Index>(j - 1)))
                                    .norm();
  }
  const double total = params.back();
  if (!(total > 0.0)) throw DomainError("degenerate polyline: all points identical");
  for (auto& t : params) t /= total;
  params.back() = 1.0;

  const KnotVector knots = KnotVector::clamped_uniform(control_count);
  // Chord-length parameters can leave spans without data when points are
  // sparse relative to the controls; the system is then near singular.
  if (detail::collocation_conditioning(detail::interior_collocation(params, knots, control_count)) <
      detail::kMinCollocationConditioning) {
    params = detail::greville_parameters(n_pts, knots, control_count);
  }
  Eigen::MatrixXd controls = detail::solve_controls(points, params, knots, control_count);

  auto residual = [&](const Eigen::MatrixXd& c, const std::vector<double>& ts) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n_pts; ++j) {
      const Eigen::RowVectorXd p = evaluate_controls(c, knots, ts[j], 0);
      sum += (p.head(3) - spatial.row(static_cast<Eigen::Index>(j))).squaredNorm();
    }
    return std::sqrt(sum / static_cast<double>(n_pts));
  };

  double rms = residual(controls, params);
  if (options.correction_iterations > 0 && rms > 0.0) {
    rms = detail::refine_jointly(points, params, knots, controls, options);
  }

  ControlMatrix effective(static_cast<Eigen::Index>(control_count), 4);
  effective.leftCols(3) = controls.leftCols(3);
  if (points.cols() == 4) {
    const double lo = options.width_clamp.w_min;
    const double hi = options.width_clamp.w_max;
    effective.col(3) = controls.col(3).cwiseMax(lo).cwiseMin(hi);
  } else {
    effective.col(3).setConstant(options.initial_width);
  }

  FitResult result;
  result.wire = Wire4D::from_effective(effective, knots, options.width_clamp);
  result.residual_rms = rms;
  result.parameters = std::move(params);
  return result;
}

inline FitResult fit_to_polyline(const std::vector<Eigen::Vector3d>& points, std::size_t control_count,
                                 const FitOptions& options = {}) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  return fit_to_polyline(m, control_count, options);
}

}  // namespace wire4d
