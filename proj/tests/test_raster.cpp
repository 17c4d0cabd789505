#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "wire4d/raster.hpp"

using namespace wire4d;
using wire4d::testing::agreement_fraction;
using wire4d::testing::random_wire;

namespace {

Stroke2D line_stroke(Eigen::Vector2d a, Eigen::Vector2d b, double w0, double w1) {
  Stroke2D s;
  for (int r = 0; r < 4; ++r) s.q[r] = a + (b - a) * (r / 3.0);
  s.w_start = w0;
  s.w_end = w1;
  return s;
}

StrokeBatch2D batch_of(std::vector<Stroke2D> strokes) {
  StrokeBatch2D b;
  b.strokes = std::move(strokes);
  for (std::size_t i = 0; i < b.strokes.size(); ++i) b.provenance.push_back({i, 0});
  b.counts.assign(b.strokes.size(), 1);
  return b;
}

Stroke2D curved_stroke() {
  Stroke2D s;
  s.q = {Eigen::Vector2d(6.3, 20.1), Eigen::Vector2d(12.7, 3.9), Eigen::Vector2d(24.2, 27.6), Eigen::Vector2d(28.4, 9.3)};
  s.w_start = 2.6;
  s.w_end = 4.1;
  return s;
}

// Stroke parameters in a fixed order: q0..q3 (x, y), w_start, w_end.
std::vector<double> flatten(const StrokeGrad& g) {
  std::vector<double> out;
  for (const auto& q : g.dq) {
    out.push_back(q.x());
    out.push_back(q.y());
  }
  out.push_back(g.dw_start);
  out.push_back(g.dw_end);
  return out;
}

double& parameter(Stroke2D& s, int k) {
  if (k < 8) return s.q[static_cast<std::size_t>(k / 2)][k % 2];
  return k == 8 ? s.w_start : s.w_end;
}

ImageBuffer random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ImageBuffer img(w, h);
  for (auto& v : img.data) v = u(rng);
  return img;
}

double weighted(const ImageBuffer& ink, const ImageBuffer& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < ink.size(); ++i) s += ink.data[i] * g.data[i];
  return s;
}

}  // namespace

TEST(Capsule, InteriorAndExterior) {
  const Eigen::Vector2d a(0, 0), b(10, 0);
  EXPECT_DOUBLE_EQ(capsule_coverage({5, 0}, a, b, 4, 4, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(capsule_coverage({5, 3}, a, b, 4, 4, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(capsule_coverage({5, 30}, a, b, 4, 4, 1.0), 0.0);
  EXPECT_NEAR(capsule_coverage({5, 2}, a, b, 4, 4, 1.0), 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(capsule_coverage({5, 0}, a, b, 0, 0, 1.0), 0.0);
}

TEST(Capsule, RoundCapsAndDegenerateSegment) {
  const Eigen::Vector2d a(0, 0);
  EXPECT_DOUBLE_EQ(capsule_coverage({-1, 0}, a, {10, 0}, 4, 4, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(capsule_coverage({1, 1}, a, a, 6, 6, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(capsule_coverage({9, 9}, a, a, 6, 6, 1.0), 0.0);
}

TEST(Capsule, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::uniform_real_distribution<double> w(0.3, 5.0);
  std::vector<double> analytic, numeric;
  int samples = 0;
  while (samples < 400) {
    const Eigen::Vector2d px(u(rng), u(rng));
    Eigen::Vector2d a(u(rng), u(rng)), b(u(rng), u(rng));
    double wa = w(rng), wb = w(rng);
    CapsuleGrad g;
    const double c = capsule_coverage(px, a, b, wa, wb, 1.0, &g);
    if (c <= 0.0 || c >= 1.0) continue;
    ++samples;
    const double h = 1e-6;
    auto fd = [&](double& x) {
      const double keep = x;
      x = keep + h;
      const double hi = capsule_coverage(px, a, b, wa, wb, 1.0);
      x = keep - h;
      const double lo = capsule_coverage(px, a, b, wa, wb, 1.0);
      x = keep;
      return (hi - lo) / (2 * h);
    };
    for (double v : {g.da.x(), g.da.y(), g.db.x(), g.db.y(), g.dwa, g.dwb}) analytic.push_back(v);
    for (double* p : {&a.x(), &a.y(), &b.x(), &b.y(), &wa, &wb}) numeric.push_back(fd(*p));
  }
  EXPECT_GE(agreement_fraction(analytic, numeric, 1e-3), 0.99);
}

TEST(Capsule, WidthGradientAtBoundaryPixel) {
  const Eigen::Vector2d a(0, 0), b(8, 1);
  const Eigen::Vector2d px(3.0, 2.1);
  CapsuleGrad g;
  const double c = capsule_coverage(px, a, b, 3.0, 4.0, 1.0, &g);
  ASSERT_GT(c, 0.0);
  ASSERT_LT(c, 1.0);
  const double h = 1e-6;
  const double fd = (capsule_coverage(px, a, b, 3.0 + h, 4.0, 1.0) - capsule_coverage(px, a, b, 3.0 - h, 4.0, 1.0)) / (2 * h);
  EXPECT_NEAR(g.dwa, fd, 1e-3 * std::abs(fd));
}

TEST(Flatten, OrderedAndWithinTolerance) {
  const Stroke2D s = curved_stroke();
  const auto ts = flatten_parameters(s, 0.25);
  ASSERT_GE(ts.size(), 3u);
  EXPECT_EQ(ts.front(), 0.0);
  EXPECT_EQ(ts.back(), 1.0);
  for (std::size_t i = 1; i < ts.size(); ++i) {
    ASSERT_LT(ts[i - 1], ts[i]);
    const Eigen::Vector2d a = s.point(ts[i - 1]);
    const Eigen::Vector2d b = s.point(ts[i]);
    for (int k = 1; k < 16; ++k) {
      const Eigen::Vector2d p = s.point(ts[i - 1] + (ts[i] - ts[i - 1]) * k / 16.0);
      const Eigen::Vector2d e = b - a;
      const double dist = std::abs(e.x() * (p - a).y() - e.y() * (p - a).x()) / e.norm();
      EXPECT_LT(dist, 0.25);
    }
  }
  EXPECT_GT(flatten_parameters(s, 0.05).size(), ts.size());
}

TEST(Rasterize, EmptyBatchIsBlank) {
  const ImageBuffer img = rasterize(StrokeBatch2D{}, 16, 12);
  EXPECT_EQ(img.width, 16);
  EXPECT_EQ(img.height, 12);
  EXPECT_EQ(img.sum(), 0.0);
}

TEST(Rasterize, HorizontalStrokeInksItsRow) {
  const auto img = rasterize(batch_of({line_stroke({2, 8.5}, {30, 8.5}, 2, 2)}), 32, 16);
  for (int x = 3; x < 29; ++x) EXPECT_GT(img.at(x, 8), 0.99);
  for (int x = 0; x < 32; ++x) EXPECT_EQ(img.at(x, 2), 0.0);
}

TEST(Rasterize, ValuesStayInUnitRange) {
  for (Composite mode : {Composite::Max, Composite::Over}) {
    RasterSettings rs;
    rs.composite = mode;
    std::vector<Stroke2D> strokes{curved_stroke(), line_stroke({0, 0}, {32, 32}, 6, 1), line_stroke({0, 30}, {30, 0}, 3, 3)};
    const auto img = rasterize(batch_of(strokes), 32, 32, rs);
    for (double v : img.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Rasterize, MaxCompositeIsIdempotent) {
  const auto one = rasterize(batch_of({curved_stroke()}), 32, 32);
  const auto two = rasterize(batch_of({curved_stroke(), curved_stroke()}), 32, 32);
  EXPECT_EQ(one, two);
}

TEST(Rasterize, OverCompositeDarkensOverlaps) {
  RasterSettings rs;
  rs.composite = Composite::Over;
  const auto one = rasterize(batch_of({line_stroke({2, 8}, {30, 8}, 1.2, 1.2)}), 32, 16, rs);
  const auto two = rasterize(batch_of({line_stroke({2, 8}, {30, 8}, 1.2, 1.2), line_stroke({2, 8}, {30, 8}, 1.2, 1.2)}),
                             32, 16, rs);
  EXPECT_GT(two.sum(), one.sum());
  const auto max_one = rasterize(batch_of({line_stroke({2, 8}, {30, 8}, 1.2, 1.2)}), 32, 16);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_NEAR(one.data[i], max_one.data[i], 1e-15);
}

TEST(Rasterize, MonotoneInWidth) {
  Stroke2D s = curved_stroke();
  ImageBuffer previous = rasterize(batch_of({s}), 32, 32);
  for (int i = 0; i < 5; ++i) {
    s.w_start += 0.5;
    s.w_end += 0.3;
    const ImageBuffer next = rasterize(batch_of({s}), 32, 32);
    for (std::size_t p = 0; p < next.size(); ++p) EXPECT_GE(next.data[p], previous.data[p] - 1e-15);
    previous = next;
  }
}

TEST(Rasterize, InkAreaMatchesStrokeArea) {
  const auto img = rasterize(batch_of({line_stroke({10, 20}, {50, 20}, 4, 4)}), 64, 40);
  // A 40 x 4 rectangle plus two caps of radius 2.
  const double area = 40.0 * 4.0 + std::acos(-1.0) * 4.0;
  EXPECT_NEAR(img.sum(), area, 0.05 * area);
}

TEST(Rasterize, DeterministicAcrossThreadCounts) {
  const Wire4D wire = random_wire(12, 9, WidthClamp{0.0, 0.05});
  const auto batch = project_wire(wire, canonical_camera(96, 3.0), 2);
  const ImageBuffer g = random_image(96, 96, 3);
  for (Composite mode : {Composite::Max, Composite::Over}) {
    RasterSettings one;
    one.composite = mode;
    RasterSettings many = one;
    many.threads = 4;
    EXPECT_EQ(rasterize(batch, 96, 96, one), rasterize(batch, 96, 96, many));
    const auto ga = rasterize_backward(batch, 96, 96, one, g);
    const auto gb = rasterize_backward(batch, 96, 96, many, g);
    ASSERT_EQ(ga.size(), gb.size());
    for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_EQ(flatten(ga[i]), flatten(gb[i]));
  }
}

TEST(RasterBackward, ZeroPixelGradientGivesZero) {
  const auto batch = batch_of({curved_stroke()});
  const auto grads = rasterize_backward(batch, 32, 32, {}, ImageBuffer(32, 32));
  for (double v : flatten(grads[0])) EXPECT_EQ(v, 0.0);
}

TEST(RasterBackward, RejectsMismatchedSize) {
  EXPECT_THROW(rasterize_backward(batch_of({curved_stroke()}), 32, 32, {}, ImageBuffer(31, 32)), DomainError);
}

TEST(RasterBackward, MatchesFiniteDifferences) {
  for (Composite mode : {Composite::Max, Composite::Over}) {
    RasterSettings rs;
    rs.composite = mode;
    std::vector<double> analytic, numeric;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      std::vector<Stroke2D> strokes{curved_stroke()};
      if (mode == Composite::Over) strokes.push_back(line_stroke({3, 4}, {29, 26}, 2.2, 3.1));
      const ImageBuffer g = random_image(32, 32, seed);
      const auto grads = rasterize_backward(batch_of(strokes), 32, 32, rs, g);
      for (std::size_t s = 0; s < strokes.size(); ++s) {
        const auto a = flatten(grads[s]);
        for (int k = 0; k < 10; ++k) {
          const double h = 1e-3;
          auto hi = strokes, lo = strokes;
          parameter(hi[s], k) += h;
          parameter(lo[s], k) -= h;
          numeric.push_back((weighted(rasterize(batch_of(hi), 32, 32, rs), g) -
                             weighted(rasterize(batch_of(lo), 32, 32, rs), g)) /
                            (2 * h));
          analytic.push_back(a[static_cast<std::size_t>(k)]);
        }
      }
    }
    EXPECT_GE(agreement_fraction(analytic, numeric, 1e-2), 0.95) << (mode == Composite::Max ? "max" : "over");
  }
}

TEST(RasterBackward, TranslationEquivariant) {
  const Stroke2D s = curved_stroke();
  Stroke2D moved = s;
  for (auto& q : moved.q) q += Eigen::Vector2d(3.0, 2.0);
  ImageBuffer g(48, 48), gm(48, 48);
  g.at(15, 14) = 1.0;
  gm.at(18, 16) = 1.0;
  const auto a = flatten(rasterize_backward(batch_of({s}), 48, 48, {}, g)[0]);
  const auto b = flatten(rasterize_backward(batch_of({moved}), 48, 48, {}, gm)[0]);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(RasterBackward, TieBreaksToLowestIndex) {
  const auto batch = batch_of({curved_stroke(), curved_stroke()});
  const auto grads = rasterize_backward(batch, 32, 32, {}, random_image(32, 32, 1));
  double first = 0.0, second = 0.0;
  for (double v : flatten(grads[0])) first += std::abs(v);
  for (double v : flatten(grads[1])) second += std::abs(v);
  EXPECT_GT(first, 0.0);
  EXPECT_EQ(second, 0.0);
}
