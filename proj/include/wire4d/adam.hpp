#pragma once

// Bias-corrected Adam over a wire's raw control matrix.

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "wire4d/error.hpp"
#include "wire4d/spline.hpp"

namespace wire4d {

struct AdamSettings {
  double lr_position = 0.02;
  double lr_width = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr_position >= 0.0 && lr_width >= 0.0)) throw DomainError("learning rates must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw DomainError("Adam betas must be in [0, 1)");
    if (!(eps > 0.0)) throw DomainError("Adam eps must be positive");
  }
};

struct AdamState {
  ControlMatrix m;
  ControlMatrix v;
  long step = 0;

  AdamState() = default;
  explicit AdamState(Eigen::Index rows) : m(ControlMatrix::Zero(rows, 4)), v(ControlMatrix::Zero(rows, 4)) {}

  void reset_rows(const std::vector<std::size_t>& rows) {
    for (std::size_t r : rows) {
      m.row(static_cast<Eigen::Index>(r)).setZero();
      v.row(static_cast<Eigen::Index>(r)).setZero();
    }
  }

  /// Re-indexes moments after refinement: new row i takes old row map[i],
  /// or zeros when map[i] < 0.
  void remap(const std::vector<long>& map) {
    ControlMatrix nm = ControlMatrix::Zero(static_cast<Eigen::Index>(map.size()), 4);
    ControlMatrix nv = nm;
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (map[i] < 0) continue;
      nm.row(static_cast<Eigen::Index>(i)) = m.row(map[i]);
      nv.row(static_cast<Eigen::Index>(i)) = v.row(map[i]);
    }
    m = std::move(nm);
    v = std::move(nv);
  }
};

/// One Adam step on `params` (rows x 4, last column raw width).
inline void adam_step(ControlMatrix& params, const ControlMatrix& grads, AdamState& state, const AdamSettings& s) {
  if (params.rows() != grads.rows() || state.m.rows() != params.rows() || state.v.rows() != params.rows()) {
    throw DomainError("Adam shapes do not match");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
  for (Eigen::Index i = 0; i < params.rows(); ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double g = grads(i, j);
      double& m = state.m(i, j);
      double& v = state.v(i, j);
      m = s.beta1 * m + (1.0 - s.beta1) * g;
      v = s.beta2 * v + (1.0 - s.beta2) * g * g;
      const double lr = j == 3 ? s.lr_width : s.lr_position;
      params(i, j) -= lr * (m / c1) / (std::sqrt(v / c2) + s.eps);
    }
  }
}

}  // namespace wire4d
