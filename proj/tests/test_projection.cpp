#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "wire4d/projection.hpp"

using namespace wire4d;
using wire4d::testing::random_wire;

namespace {

// Max pixel distance between each stroke and the exact projection of the
// curve over the same parameter interval.
double max_pixel_deviation(const Wire4D& wire, const Camera& cam, int s) {
  const auto batch = project_wire(wire, cam, s);
  const auto spans = wire.knots.spans();
  double worst = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& src = batch.provenance[i];
    const Span& span = spans[src.span];
    const double a = span.t0 + span.length() * src.sub / s;
    const double b = span.t0 + span.length() * (src.sub + 1) / s;
    for (int k = 0; k <= 64; ++k) {
      const double u = k / 64.0;
      const auto exact = project_point(cam, evaluate(wire, a + u * (b - a)).head<3>());
      worst = std::max(worst, (batch.strokes[i].point(u) - Eigen::Vector2d(exact.u, exact.v)).norm());
    }
  }
  return worst;
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  return num / den;
}

Wire4D normalized_random_wire(std::size_t controls, std::uint64_t seed) {
  const Wire4D wire = random_wire(controls, seed);
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& p : sample_uniform(wire, 4000)) {
    lo = lo.cwiseMin(p.head<3>());
    hi = hi.cwiseMax(p.head<3>());
  }
  ControlMatrix m = wire.effective_matrix();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    m.block<1, 3>(i, 0) = (m.block<1, 3>(i, 0) - (0.5 * (lo + hi)).transpose()) / (hi - lo).norm();
  }
  return Wire4D::from_effective(m, wire.knots, wire.width_clamp);
}

}  // namespace

TEST(Camera, ProjectsPinhole) {
  Camera cam = Camera::look_at({0, 0, -2}, {0, 0, 0}, {0, 1, 0}, 100.0, 64, 48);
  const auto p = project_point(cam, {0, 0, 0});
  EXPECT_NEAR(p.u, 32.0, 1e-12);
  EXPECT_NEAR(p.v, 24.0, 1e-12);
  EXPECT_NEAR(p.z, 2.0, 1e-12);
  // World up appears above the center.
  EXPECT_LT(project_point(cam, {0, 0.5, 0}).v, 24.0);
  EXPECT_NO_THROW(cam.validate());
}

TEST(Camera, RejectsPointsBehindNearPlane) {
  Camera cam = Camera::look_at({0, 0, -2}, {0, 0, 0}, {0, 1, 0}, 100.0, 64, 64);
  EXPECT_THROW(project_point(cam, {0, 0, -3}), ClipError);
  EXPECT_THROW(project_wire(canonical_helix(), Camera::look_at({0, 0, 0}, {0, 0, 1}, {0, 1, 0}, 100, 64, 64)),
               ClipError);
}

TEST(Camera, JacobianMatchesFiniteDifferences) {
  Camera cam = Camera::look_at({0.3, -0.2, -2}, {0, 0.1, 0}, {0, 1, 0}, 300.0, 64, 64);
  const Eigen::Vector3d p(0.2, -0.1, 0.4);
  const Eigen::Matrix3d jac = projection_jacobian(cam, p);
  for (int c = 0; c < 3; ++c) {
    Eigen::Vector3d dp = Eigen::Vector3d::Zero();
    dp[c] = 1e-6;
    const auto hi = project_point(cam, p + dp);
    const auto lo = project_point(cam, p - dp);
    const Eigen::Vector3d fd = (Eigen::Vector3d(hi.u, hi.v, hi.z) - Eigen::Vector3d(lo.u, lo.v, lo.z)) / 2e-6;
    EXPECT_LT((jac.col(c) - fd).norm(), 1e-5 * std::max(1.0, fd.norm()));
  }
}

TEST(Camera, JsonRoundTrip) {
  Camera cam = Camera::look_at({0.3, -0.2, -2}, {0, 0.1, 0}, {0, 1, 0}, 300.0, 80, 60);
  const Camera back = camera_from_json(camera_to_json(cam));
  EXPECT_EQ(back.fx, cam.fx);
  EXPECT_EQ(back.width, 80);
  EXPECT_EQ(back.rotation, cam.rotation);
  EXPECT_EQ(back.translation, cam.translation);
}

TEST(Projection, StrokeWidthsArePixelWidths) {
  const Wire4D wire = random_wire(9, 3);
  const Camera cam = canonical_camera(256, 4.0);
  const auto batch = project_wire(wire, cam, 2);
  const auto spans = wire.knots.spans();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& src = batch.provenance[i];
    const double t = spans[src.span].t0 + spans[src.span].length() * src.sub / 2.0;
    const Eigen::Vector4d c = evaluate(wire, t);
    const double z = cam.to_camera(c.head<3>()).z();
    EXPECT_NEAR(batch.strokes[i].w_start, cam.fx * c.w() / z, 1e-9);
    EXPECT_NEAR(batch.strokes[i].z_start, z, 1e-12);
  }
}

TEST(Projection, StrokesAreContiguous) {
  const Wire4D wire = random_wire(12, 4);
  const auto batch = project_wire(wire, canonical_camera(256, 4.0), 0.25);
  ASSERT_EQ(batch.provenance.size(), batch.size());
  for (std::size_t i = 1; i < batch.size(); ++i) {
    EXPECT_LT((batch.strokes[i].q[0] - batch.strokes[i - 1].q[3]).norm(), 1e-9);
    EXPECT_NEAR(batch.strokes[i].w_start, batch.strokes[i - 1].w_end, 1e-9);
  }
}

TEST(Projection, ParametricDeviationIsSecondOrder) {
  const Camera cam = canonical_camera(512, 1.5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Wire4D wire = random_wire(8, 500 + seed);
    ControlMatrix m = wire.effective_matrix();
    m.leftCols(3) *= 0.3;
    wire = Wire4D::from_effective(m, wire.knots, wire.width_clamp);
    std::vector<double> lx, ly;
    for (int s : {16, 32, 64}) {
      lx.push_back(std::log(1.0 / s));
      ly.push_back(std::log(max_pixel_deviation(wire, cam, s)));
    }
    const double slope = fit_slope(lx, ly);
    EXPECT_GT(slope, 1.75) << "seed " << seed;
    EXPECT_LT(slope, 2.2) << "seed " << seed;
  }
}

TEST(Projection, ScreenErrorDecreasesAtLeastQuadratically) {
  const Camera cam = canonical_camera(512, 1.5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Wire4D wire = normalized_random_wire(8, 500 + seed);
    const auto ref = reference_projection(wire, cam);
    double previous = std::numeric_limits<double>::infinity();
    for (int s : {1, 2, 4, 8}) {
      const double err = screen_space_error(project_wire(wire, cam, s), ref);
      EXPECT_LT(err, previous / 3.0) << "seed " << seed << " s " << s;
      previous = err;
    }
  }
}

TEST(Projection, FrontoParallelPlanarSpanIsExact) {
  ControlMatrix m(4, 4);
  m << -0.3, 0.1, 0, 0.01, -0.1, 0.4, 0, 0.01, 0.2, -0.3, 0, 0.01, 0.3, 0.2, 0, 0.01;
  const Wire4D wire = Wire4D::from_effective(m, KnotVector::clamped_uniform(4), WidthClamp{0.0, 0.1});
  const Camera cam = canonical_camera(512, 2.0);
  EXPECT_LT(screen_space_error(project_wire(wire, cam, 1), reference_projection(wire, cam)), 1e-6);
  EXPECT_LT(max_pixel_deviation(wire, cam, 1), 1e-9);
}

TEST(Projection, ReferenceIsSelfConvergent) {
  const Wire4D wire = normalized_random_wire(8, 77);
  const Camera cam = canonical_camera();
  EXPECT_LT(polyline_error(reference_projection(wire, cam, 10000), reference_projection(wire, cam, 100000)), 1e-3);
}

TEST(Projection, FartherWireNeverHasLargerError) {
  const Wire4D wire = normalized_random_wire(8, 78);
  double previous = std::numeric_limits<double>::infinity();
  for (double d : {1.2, 1.5, 2.0, 3.0, 5.0}) {
    const Camera cam = canonical_camera(512, d);
    const double err = screen_space_error(project_wire(wire, cam, 2), reference_projection(wire, cam));
    EXPECT_LE(err, previous);
    previous = err;
  }
}

TEST(Projection, HalvingDepthRaisesCount) {
  const double focal = 512.0;
  const int far = subdivision_count(0.3, 2.0, focal, 0.5);
  const int near = subdivision_count(0.3, 1.0, focal, 0.5);
  EXPECT_GE(near, 2 * far);
  EXPECT_EQ(subdivision_count(0.01, 10.0, focal, 100.0), 1);
}

TEST(Projection, AdaptiveSubdivisionIsSubPixel) {
  const Wire4D helix = canonical_helix();
  const Camera cam = canonical_camera();
  const auto batch = project_wire(helix, cam, 0.5);
  const auto reference = reference_projection(helix, cam);
  const double px = screen_space_error(batch, reference) * bbox_diagonal(reference);
  EXPECT_LT(px, 1.0);
  EXPECT_LT(max_pixel_deviation(helix, cam, 1), 1e6);
}

TEST(Projection, SubdivisionCountsArePowersOfTwo) {
  const Wire4D helix = canonical_helix();
  const Camera cam = canonical_camera();
  std::vector<int> previous;
  for (double eps : {4.0, 1.0, 0.5, 0.1, 0.02}) {
    const auto plan = adaptive_subdivision(helix, cam, eps);
    ASSERT_EQ(plan.counts.size(), helix.knots.spans().size());
    for (std::size_t i = 0; i < plan.counts.size(); ++i) {
      EXPECT_TRUE(is_power_of_two(plan.counts[i]));
      if (!previous.empty()) EXPECT_GE(plan.counts[i], previous[i]);
    }
    previous = plan.counts;
  }
}

TEST(Projection, SubdivisionCapsWithWarning) {
  const auto plan = adaptive_subdivision(canonical_helix(), canonical_camera(), 1e-9);
  for (int c : plan.counts) EXPECT_EQ(c, kMaxSegmentsPerSpan);
  EXPECT_EQ(plan.warnings.size(), plan.counts.size());
  EXPECT_THROW(adaptive_subdivision(canonical_helix(), canonical_camera(), -1.0), DomainError);
}

TEST(Projection, ErrorConstantIsPositive) {
  const double c = projection_error_constant();
  EXPECT_TRUE(std::isfinite(c));
  EXPECT_GT(c, 0.0);
  EXPECT_EQ(c, projection_error_constant());
}

TEST(Projection, ErrorMetricIsZeroForIdenticalCurves) {
  const auto ref = reference_projection(canonical_helix(), canonical_camera());
  EXPECT_NEAR(polyline_error(ref, ref), 0.0, 1e-15);
  std::vector<Eigen::Vector2d> shifted = ref;
  for (auto& p : shifted) p += Eigen::Vector2d(3.0, 4.0);
  EXPECT_NEAR(polyline_error(shifted, ref) * bbox_diagonal(ref), 5.0, 1e-9);
}

TEST(Projection, BackpropMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  const Camera cam = Camera::look_at({0.4, 0.3, -3.5}, {0, 0, 0}, {0, 1, 0}, 200.0, 128, 128);
  const Wire4D wire = random_wire(7, 21);
  const std::vector<int> counts{1, 2, 1, 4};
  const auto base = project_wire(wire, cam, counts);
  std::vector<StrokeGrad> weights(base.size());
  for (auto& g : weights) {
    for (auto& q : g.dq) q = {n(rng), n(rng)};
    g.dw_start = n(rng);
    g.dw_end = n(rng);
    g.dz_start = n(rng);
    g.dz_end = n(rng);
  }
  auto loss = [&](const Wire4D& w) {
    const auto b = project_wire(w, cam, counts);
    double sum = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      for (int r = 0; r < 4; ++r) sum += weights[i].dq[r].dot(b.strokes[i].q[r]);
      sum += weights[i].dw_start * b.strokes[i].w_start + weights[i].dw_end * b.strokes[i].w_end;
      sum += weights[i].dz_start * b.strokes[i].z_start + weights[i].dz_end * b.strokes[i].z_end;
    }
    return sum;
  };
  const ControlMatrix grad = backprop_projection(weights, base, wire, cam);
  const ControlMatrix raw = wire.raw_matrix();
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    for (int c = 0; c < 4; ++c) {
      const double h = 1e-6;
      ControlMatrix hi = raw, lo = raw;
      hi(i, c) += h;
      lo(i, c) -= h;
      const double fd = (loss(Wire4D::from_raw(hi, wire.knots, wire.width_clamp)) -
                         loss(Wire4D::from_raw(lo, wire.knots, wire.width_clamp))) /
                        (2 * h);
      EXPECT_NEAR(grad(i, c), fd, 1e-5 * std::max(1.0, std::abs(fd))) << "control " << i << " channel " << c;
    }
  }
}

TEST(Projection, BackpropRejectsForeignBatch) {
  const Wire4D wire = random_wire(7, 21);
  const Camera cam = canonical_camera(128, 4.0);
  const auto batch = project_wire(wire, cam, 2);
  std::vector<StrokeGrad> grads(batch.size());
  EXPECT_THROW(backprop_projection(grads, batch, random_wire(8, 1), cam), DomainError);
  grads.pop_back();
  EXPECT_THROW(backprop_projection(grads, batch, wire, cam), DomainError);
}
