#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "test_support.hpp"
#include "wire4d/adam.hpp"
#include "wire4d/loss.hpp"
#include "wire4d/optimize.hpp"
#include "wire4d/raster.hpp"

using namespace wire4d;
using wire4d::testing::disk_mask;
using wire4d::testing::relative_error;

namespace {

ImageBuffer random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageBuffer img(w, h);
  for (double& v : img.data) v = u(rng);
  return img;
}

Camera view_camera(int size, const Eigen::Vector3d& eye) {
  return Camera::look_at(eye, {0, 0, 0}, {0, 1, 0}, size, size, size);
}

ViewTarget disk_view(int size, double radius_px, const Eigen::Vector3d& eye = {0, 0, -2.5}) {
  ViewTarget v;
  v.name = "disk";
  v.camera = view_camera(size, eye);
  v.mask = disk_mask(size, radius_px);
  return v;
}

// Gently curved wire in front of the camera with mid-range widths.
Wire4D test_wire(std::uint64_t seed, std::size_t controls = 8) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5), w(-0.5, 0.5);
  std::vector<ControlPoint4> pts(controls);
  for (auto& p : pts) p = {u(rng), u(rng), 0.6 * u(rng), w(rng)};
  return make_wire(std::move(pts), WidthClamp{0.0, 0.1});
}

LossSettings mmse_only() {
  LossSettings s;
  s.lambda_G = 0.0;
  return s;
}

double loss_at(const Wire4D& base, const ControlMatrix& raw, const std::vector<ViewTarget>& views, const LossSettings& s) {
  return total_loss(Wire4D::from_raw(raw, base.knots, base.width_clamp), views, s).total;
}

RunConfig small_run(long iterations) {
  RunConfig c;
  c.control_count = 20;
  c.iterations = iterations;
  c.reinit_iters = {};
  c.refine_iter = -1;
  c.lambda_G = 0.0;
  c.render_every = 0;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// MMSE

TEST(Mmse, IdentityHasZeroLossAndGradient) {
  const ImageBuffer mask = disk_mask(37, 10);
  ImageBuffer render = mask;
  for (double& v : render.data) v *= 0.5;
  const LossResult r = mmse_loss(render, mask, 0.5, 4);
  EXPECT_EQ(r.value, 0.0);
  for (double g : r.gradient.data) EXPECT_EQ(g, 0.0);
}

TEST(Mmse, HalfOpacityClosedForm) {
  const ImageBuffer mask = random_image(16, 12, 1);
  double expected = 0.0;
  for (double m : mask.data) expected += 0.25 * m * m;
  expected /= static_cast<double>(mask.size());
  EXPECT_NEAR(mmse_loss(mask, mask, 0.5, 1).value, expected, 1e-15);
}

TEST(Mmse, LevelsAverageAndConstantImagesAgree) {
  // A constant error is the same at every scale, so the mean equals it.
  const ImageBuffer render(33, 17, 0.75), mask(33, 17, 1.0);
  EXPECT_NEAR(mmse_loss(render, mask, 1.0, 4).value, 0.0625, 1e-15);
}

TEST(Mmse, GradientMatchesFiniteDifferences) {
  const ImageBuffer mask = disk_mask(45, 14);
  const ImageBuffer render = random_image(45, 45, 2);
  const LossResult r = mmse_loss(render, mask, 0.8, 4);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, render.size() - 1);
  for (int i = 0; i < 10; ++i) {
    const std::size_t k = pick(rng);
    const double h = 1e-5;
    ImageBuffer p = render, m = render;
    p.data[k] += h;
    m.data[k] -= h;
    const double numeric = (mmse_loss(p, mask, 0.8, 4).value - mmse_loss(m, mask, 0.8, 4).value) / (2 * h);
    EXPECT_LT(relative_error(r.gradient.data[k], numeric), 1e-4) << k;
  }
}

TEST(Mmse, PoolingAdjointIsExactOnOddSizes) {
  const ImageBuffer x = random_image(13, 9, 4);
  const ImageBuffer pooled = detail::mean_pool2(x);
  EXPECT_EQ(pooled.width, 7);
  EXPECT_EQ(pooled.height, 5);
  const ImageBuffer g = random_image(7, 5, 5);
  const ImageBuffer back = detail::mean_pool2_adjoint(g, x);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) lhs += g.data[i] * pooled.data[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += back.data[i] * x.data[i];
  EXPECT_NEAR(lhs, rhs, 1e-13);
  // Edge cells average only the pixels that exist.
  EXPECT_DOUBLE_EQ(pooled.at(6, 4), x.at(12, 8));
}

TEST(Mmse, RejectsBadArguments) {
  const ImageBuffer a(8, 8), b(8, 9);
  EXPECT_THROW(mmse_loss(a, b, 1.0, 4), DomainError);
  EXPECT_THROW(mmse_loss(a, a, 0.0, 4), DomainError);
  EXPECT_THROW(mmse_loss(a, a, 1.5, 4), DomainError);
  EXPECT_THROW(mmse_loss(a, a, 1.0, 0), DomainError);
}

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, FirstStepMovesByLearningRate) {
  ControlMatrix p = ControlMatrix::Zero(3, 4);
  ControlMatrix g(3, 4);
  g << 1, -2, 3e3, -0.5, -1e-2, 7, 1, 1, 5, -5, 0.1, -0.1;
  AdamState st(3);
  const AdamSettings s;
  adam_step(p, g, st, s);
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double lr = j == 3 ? s.lr_width : s.lr_position;
      EXPECT_NEAR(p(i, j), -lr * (g(i, j) > 0 ? 1.0 : -1.0), 1e-6 * lr);
    }
  }
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, ClosedFormSecondStep) {
  ControlMatrix p = ControlMatrix::Zero(1, 4);
  AdamState st(1);
  AdamSettings s;
  ControlMatrix g1 = ControlMatrix::Constant(1, 4, 2.0);
  ControlMatrix g2 = ControlMatrix::Constant(1, 4, -1.0);
  adam_step(p, g1, st, s);
  adam_step(p, g2, st, s);
  const double m = 0.9 * 0.1 * 2.0 + 0.1 * -1.0;
  const double v = 0.999 * 0.001 * 4.0 + 0.001 * 1.0;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  const double expected = -0.02 * 2.0 / (2.0 + 1e-8) - 0.02 * mhat / (std::sqrt(vhat) + 1e-8);
  EXPECT_NEAR(p(0, 0), expected, 1e-12);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ControlMatrix p = ControlMatrix::Random(5, 4);
  const ControlMatrix before = p;
  AdamState st(5);
  for (int i = 0; i < 10; ++i) adam_step(p, ControlMatrix::Zero(5, 4), st, AdamSettings{});
  EXPECT_EQ(p, before);
}

TEST(Adam, RowResetAndRemap) {
  AdamState st(4);
  ControlMatrix p = ControlMatrix::Zero(4, 4);
  adam_step(p, ControlMatrix::Ones(4, 4), st, AdamSettings{});
  st.reset_rows({1});
  EXPECT_TRUE(st.m.row(1).isZero());
  EXPECT_FALSE(st.m.row(0).isZero());
  const ControlMatrix m0 = st.m;
  st.remap({0, -1, 2, 3, -1});
  EXPECT_EQ(st.m.rows(), 5);
  EXPECT_EQ(st.m.row(0), m0.row(0));
  EXPECT_EQ(st.m.row(3), m0.row(3));
  EXPECT_TRUE(st.m.row(4).isZero());
  EXPECT_TRUE(st.v.row(1).isZero());
}

TEST(Adam, ShapeMismatchThrows) {
  ControlMatrix p = ControlMatrix::Zero(3, 4);
  AdamState st(2);
  EXPECT_THROW(adam_step(p, ControlMatrix::Zero(3, 4), st, AdamSettings{}), DomainError);
  AdamState ok(3);
  EXPECT_THROW(adam_step(p, ControlMatrix::Zero(2, 4), ok, AdamSettings{}), DomainError);
  EXPECT_THROW((AdamSettings{0.1, 0.1, 1.0, 0.9, 1e-8}.validate()), DomainError);
}

// ---------------------------------------------------------------------------
// Total loss

TEST(TotalLoss, ImageWeightZeroLeavesJerkOnly) {
  const Wire4D w = test_wire(1);
  LossSettings s;
  s.lambda_I = 0.0;
  s.lambda_G = 0.7;
  const LossBreakdown l = total_loss(w, {disk_view(48, 10)}, s);
  const JerkResult j = jerk_energy(w);
  EXPECT_EQ(l.gradient, (0.7 * j.gradient).eval());
  EXPECT_DOUBLE_EQ(l.total, 0.7 * j.energy);
}

TEST(TotalLoss, DecomposesIntoViewsAndJerk) {
  const Wire4D w = test_wire(2);
  std::vector<ViewTarget> views{disk_view(48, 10), disk_view(48, 14, {2.5, 0, 0})};
  LossSettings s;
  s.lambda_I = 1.3;
  s.lambda_G = 0.2;
  const LossBreakdown full = total_loss(w, views, s);
  LossSettings jerk_only = s;
  jerk_only.lambda_I = 0.0;
  ControlMatrix sum = total_loss(w, views, jerk_only).gradient;
  LossSettings image_only = s;
  image_only.lambda_G = 0.0;
  double value = jerk_only.lambda_G * jerk_energy(w).energy;
  for (const auto& v : views) {
    const LossBreakdown one = total_loss(w, {v}, image_only);
    sum += one.gradient;
    value += one.total;
  }
  EXPECT_LT((full.gradient - sum).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, sum.cwiseAbs().maxCoeff()));
  EXPECT_NEAR(full.total, value, 1e-12);
  EXPECT_EQ(full.view_losses.size(), 2u);
}

TEST(TotalLoss, BlankMaskShrinksWidth) {
  // One fronto-parallel stroke against an empty target: growing a width
  // only adds ink. Interior widths act only through subdivided pieces.
  ViewTarget v = disk_view(48, 10);
  v.mask = ImageBuffer(48, 48);
  const Wire4D w = make_wire({{-0.3, 0, 0, 0}, {-0.1, 0.05, 0, 0}, {0.1, -0.05, 0, 0}, {0.3, 0, 0, 0}}, {0.0, 0.1});
  const LossSettings s = mmse_only();
  const LossBreakdown l = total_loss(w, {v}, s);
  for (Eigen::Index i = 0; i < 4; ++i) {
    if (i == 0 || i == 3) {
      EXPECT_GT(l.gradient(i, 3), 0.0);
    } else {
      EXPECT_GE(l.gradient(i, 3), 0.0);
    }
    ControlMatrix p = w.raw_matrix(), m = p;
    p(i, 3) += 1e-6;
    m(i, 3) -= 1e-6;
    const double numeric = (loss_at(w, p, {v}, s) - loss_at(w, m, {v}, s)) / 2e-6;
    EXPECT_LT(relative_error(l.gradient(i, 3), numeric, 1e-6), 1e-3);
  }
}

TEST(TotalLoss, EndToEndGradientMatchesFiniteDifferences) {
  const std::vector<ViewTarget> views{disk_view(64, 16)};
  const LossSettings s = mmse_only();
  std::mt19937_64 rng(21);
  int checked = 0, good = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Wire4D w = test_wire(100 + seed);
    const LossBreakdown l = total_loss(w, views, s);
    const ControlMatrix raw = w.raw_matrix();
    std::uniform_int_distribution<Eigen::Index> row(0, raw.rows() - 1), col(0, 3);
    for (int k = 0; k < 5; ++k) {
      const Eigen::Index i = row(rng), j = col(rng);
      const double h = 1e-6;
      ControlMatrix p = raw, m = raw;
      p(i, j) += h;
      m(i, j) -= h;
      const double numeric = (loss_at(w, p, views, s) - loss_at(w, m, views, s)) / (2 * h);
      const double floor = 1e-2 * l.gradient.cwiseAbs().maxCoeff();
      const double err = relative_error(l.gradient(i, j), numeric, floor);
      ++checked;
      if (err < 2e-2) ++good;
      EXPECT_LT(err, 2e-2) << "seed " << seed << " (" << i << "," << j << ") analytic " << l.gradient(i, j)
                           << " numeric " << numeric;
    }
  }
  EXPECT_EQ(checked, 20);
  EXPECT_EQ(good, 20);
}

TEST(TotalLoss, DepthAttenuationGradientMatchesFiniteDifferences) {
  // A wall behind part of the wire: the visibility term contributes a depth
  // gradient that finite differences must see.
  ViewTarget v = disk_view(48, 12);
  ImageBuffer depth(48, 48, std::numeric_limits<double>::infinity());
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 24; ++x) depth.at(x, y) = 2.52;
  }
  v.depth = depth;
  const Wire4D w = make_wire({{-0.3, 0.1, 0.0, 0}, {-0.1, -0.1, 0.02, 0}, {0.1, 0.1, -0.01, 0}, {0.3, 0, 0.03, 0}},
                             {0.0, 0.1});
  const LossSettings s = mmse_only();
  const LossBreakdown l = total_loss(w, {v}, s);
  const ControlMatrix raw = w.raw_matrix();
  std::vector<double> analytic, numeric;
  for (Eigen::Index i = 0; i < 4; ++i) {
    for (Eigen::Index j : {2, 3}) {
      ControlMatrix p = raw, m = raw;
      p(i, j) += 1e-7;
      m(i, j) -= 1e-7;
      analytic.push_back(l.gradient(i, j));
      numeric.push_back((loss_at(w, p, {v}, s) - loss_at(w, m, {v}, s)) / 2e-7);
    }
  }
  EXPECT_GE(wire4d::testing::agreement_fraction(analytic, numeric, 2e-2, 1e-2), 0.99);
}

TEST(TotalLoss, NeedsAView) { EXPECT_THROW(total_loss(test_wire(1), {}, LossSettings{}), DomainError); }

TEST(TotalLoss, BridgeGradientIsBackpropagated) {
  // A provider returning the MMSE pixel gradient reproduces the MMSE term.
  ViewTarget v = disk_view(48, 12);
  const Wire4D w = test_wire(3);
  LossSettings mmse = mmse_only();
  const LossBreakdown reference = total_loss(w, {v}, mmse);

  ViewTarget g = v;
  g.guidance_id = "front";
  LossSettings clip = mmse;
  clip.lambda_mmse = 0.0;
  clip.lambda_clip = 1.0;
  int calls = 0;
  const GradientProvider provider = [&](const ImageBuffer& render, const ViewTarget& view, double progress) {
    ++calls;
    EXPECT_EQ(view.guidance_id, "front");
    EXPECT_DOUBLE_EQ(progress, 0.25);
    return mmse_loss(render, *view.mask, 1.0, kDefaultMmseLevels).gradient;
  };
  const LossBreakdown bridged = total_loss(w, {g}, clip, provider, 0.25);
  EXPECT_EQ(calls, 1);
  EXPECT_LT((bridged.gradient - reference.gradient).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TotalLoss, BridgeFailureAbortsOrSkips) {
  ViewTarget good = disk_view(32, 8);
  ViewTarget bad = good;
  bad.name = "bad";
  bad.guidance_id = "x";
  LossSettings s = mmse_only();
  s.lambda_clip = 1.0;
  const GradientProvider failing = [](const ImageBuffer&, const ViewTarget&, double) -> ImageBuffer {
    throw BridgeError(BridgeError::Kind::Timeout, "no answer");
  };
  const Wire4D w = test_wire(4);
  EXPECT_THROW(total_loss(w, {good, bad}, s, failing), BridgeError);
  s.skip_failed_views = true;
  const LossBreakdown l = total_loss(w, {good, bad}, s, failing);
  EXPECT_EQ(l.skipped_views, (std::vector<std::string>{"bad"}));
  const LossBreakdown only_good = total_loss(w, {good}, s, failing);
  EXPECT_EQ(l.gradient, only_good.gradient);
  // A view with a guidance id and no provider is a connection error.
  s.skip_failed_views = false;
  EXPECT_THROW(total_loss(w, {bad}, s), BridgeError);
}

TEST(TotalLoss, WrongSizedBridgeGradientIsDimensionError) {
  ViewTarget v = disk_view(32, 8);
  v.guidance_id = "x";
  LossSettings s = mmse_only();
  s.lambda_clip = 1.0;
  const GradientProvider wrong = [](const ImageBuffer&, const ViewTarget&, double) { return ImageBuffer(3, 3); };
  try {
    total_loss(test_wire(5), {v}, s, wrong);
    FAIL();
  } catch (const BridgeError& e) {
    EXPECT_EQ(e.kind(), BridgeError::Kind::Dimension);
  }
}

// ---------------------------------------------------------------------------
// Schedule

TEST(Schedule, ZeroIterationsReturnsInitialWire) {
  const Wire4D w = test_wire(6, 20);
  const ScheduleResult r = run_schedule(small_run(0), w, {disk_view(32, 8)}, SphereBounds{});
  EXPECT_EQ(r.wire, w);
  EXPECT_TRUE(r.log.empty());
}

TEST(Schedule, EventsHappenExactlyWhenConfigured) {
  RunConfig c = small_run(30);
  c.reinit_iters = {5, 12};
  c.refine_iter = 20;
  c.refine_count = 3;
  c.width_epsilon = 0.2 * 0.1;  // prune a fair share of controls
  const Wire4D w = test_wire(7, 20);
  const ScheduleResult r = run_schedule(c, w, {disk_view(32, 8)}, SphereBounds{{0, 0, 0}, 0.5});
  ASSERT_EQ(r.log.size(), 31u);
  for (long it = 0; it < 30; ++it) {
    const auto& rec = r.log[static_cast<std::size_t>(it)];
    EXPECT_EQ(rec["iter"], it);
    EXPECT_EQ(rec.contains("pruned"), it == 5 || it == 12) << it;
    EXPECT_EQ(rec.contains("inserted_spans"), it == 20) << it;
  }
  EXPECT_EQ(r.log[20]["inserted_spans"].size(), 3u);
  EXPECT_EQ(r.log[20]["control_count"], 23);
  EXPECT_EQ(r.wire.control_count(), 23u);
  EXPECT_TRUE(r.log.back()["final"].get<bool>());
  EXPECT_EQ(r.log.back()["iter"], 30);
}

TEST(Schedule, ByteDeterministic) {
  RunConfig c = small_run(25);
  c.reinit_iters = {10};
  c.refine_iter = 15;
  c.refine_count = 2;
  c.threads = 3;
  const Wire4D w = test_wire(8, 20);
  const std::vector<ViewTarget> views{disk_view(40, 10), disk_view(40, 12, {2.5, 0, 0})};
  const ScheduleResult a = run_schedule(c, w, views, SphereBounds{});
  c.threads = 1;
  const ScheduleResult b = run_schedule(c, w, views, SphereBounds{});
  EXPECT_EQ(a.wire, b.wire);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].dump(), b.log[i].dump());
}

TEST(Schedule, ReducesLossOnASingleView) {
  RunConfig c = small_run(80);
  const std::vector<ViewTarget> views{disk_view(40, 10)};
  const ScheduleResult r = run_schedule(c, test_wire(9, 20), views, SphereBounds{});
  EXPECT_LT(r.final_loss, 0.5 * r.initial_loss);
}

TEST(Schedule, PureSmoothingNeverRaisesJerk) {
  RunConfig c = small_run(200);
  c.lambda_I = 0.0;
  c.lambda_G = 1.0;
  c.lr_position = 1e-3;
  const ScheduleResult r = run_schedule(c, test_wire(10, 20), {disk_view(32, 8)}, SphereBounds{});
  double prev = r.log.front()["jerk"].get<double>();
  for (const auto& rec : r.log) {
    const double j = rec["jerk"].get<double>();
    EXPECT_LE(j, prev + 1e-8) << rec["iter"];
    prev = j;
  }
  EXPECT_LT(r.log.back()["jerk"].get<double>(), r.log.front()["jerk"].get<double>());
}

TEST(Schedule, RenderHookCadence) {
  RunConfig c = small_run(25);
  c.render_every = 10;
  std::vector<long> seen;
  ScheduleHooks hooks;
  hooks.renders = [&](long it, const std::vector<ImageBuffer>& images) {
    seen.push_back(it);
    ASSERT_EQ(images.size(), 1u);
    EXPECT_EQ(images[0].width, 32);
  };
  run_schedule(c, test_wire(11, 20), {disk_view(32, 8)}, SphereBounds{}, {}, hooks);
  EXPECT_EQ(seen, (std::vector<long>{0, 10, 20, 25}));
}

TEST(Schedule, AbortReportsPartialWire) {
  RunConfig c = small_run(10);
  ViewTarget v = disk_view(32, 8);
  v.guidance_id = "x";
  c.lambda_clip = 1.0;
  int calls = 0;
  const GradientProvider flaky = [&](const ImageBuffer& r, const ViewTarget&, double) {
    if (++calls > 3) throw BridgeError(BridgeError::Kind::Connection, "gone");
    return ImageBuffer(r.width, r.height);
  };
  long aborted_at = -1;
  ScheduleHooks hooks;
  hooks.aborted = [&](long it, const Wire4D& w) {
    aborted_at = it;
    EXPECT_EQ(w.control_count(), 20u);
  };
  EXPECT_THROW(run_schedule(c, test_wire(12, 20), {v}, SphereBounds{}, flaky, hooks), BridgeError);
  EXPECT_EQ(aborted_at, 3);
}

TEST(Schedule, InkMassGrowsWithOpacity) {
  RunConfig c = small_run(150);
  c.control_count = 40;
  const std::vector<ViewTarget> views{disk_view(48, 14)};
  const Wire4D start = test_wire(13, 40);
  double prev = -1.0;
  for (double alpha : {0.25, 0.5, 1.0}) {
    c.alpha = alpha;
    const ScheduleResult r = run_schedule(c, start, views, SphereBounds{});
    const double ink = total_loss(r.wire, views, mmse_only(), {}, 1.0, true).renders[0].sum();
    EXPECT_GE(ink, prev) << alpha;
    prev = ink;
  }
}
