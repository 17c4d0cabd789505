#pragma once

// Differentiable rasterization of variable-width cubic Bezier strokes.
//
// Each stroke is flattened into capsules (segments with linearly varying
// width). Coverage is a smooth step on the distance to the capsule axis, so
// the image is differentiable in every stroke parameter and the backward pass
// is exact for this model.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "wire4d/error.hpp"
#include "wire4d/image.hpp"
#include "wire4d/parallel.hpp"
#include "wire4d/projection.hpp"

namespace wire4d {

enum class Composite { Max, Over };

struct RasterSettings {
  double aa_radius = 1.0;
  double flatten_tolerance = 0.25;
  Composite composite = Composite::Max;
  int threads = 1;

  void validate() const {
    if (!(aa_radius > 0.0)) throw DomainError("aa_radius must be positive");
    if (!(flatten_tolerance > 0.0)) throw DomainError("flatten_tolerance must be positive");
  }
};

struct CapsuleGrad {
  Eigen::Vector2d da = Eigen::Vector2d::Zero();
  Eigen::Vector2d db = Eigen::Vector2d::Zero();
  double dwa = 0.0;
  double dwb = 0.0;
};

namespace detail {

inline double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

inline double smoothstep_derivative(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  return 6.0 * t * (1.0 - t);
}

}  // namespace detail

/// Coverage of `pixel` by the capsule a-b with full widths w_a, w_b.
/// Half-width is interpolated at the closest axis point; coverage ramps from
/// 1 at (half-width - aa/2) to 0 at (half-width + aa/2), and fades for
/// strokes thinner than aa so zero width means zero ink.
inline double capsule_coverage(const Eigen::Vector2d& pixel, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                               double w_a, double w_b, double aa_radius, CapsuleGrad* grad = nullptr) {
  const Eigen::Vector2d e = b - a;
  const Eigen::Vector2d pa = pixel - a;
  const double ee = e.squaredNorm();
  double tau = 0.0;
  bool interior = false;
  if (ee > 0.0) {
    const double raw = pa.dot(e) / ee;
    tau = std::clamp(raw, 0.0, 1.0);
    interior = raw > 0.0 && raw < 1.0;
  }
  const Eigen::Vector2d c = a + tau * e;
  const double d = (pixel - c).norm();
  const double hw = 0.5 * ((1.0 - tau) * w_a + tau * w_b);

  const double edge_t = (hw - d) / aa_radius + 0.5;
  const double thin_t = 2.0 * hw / aa_radius;
  const double edge = detail::smoothstep(edge_t);
  const double thin = detail::smoothstep(thin_t);
  const double coverage = edge * thin;

  if (grad) {
    *grad = CapsuleGrad{};
    const double d_edge = detail::smoothstep_derivative(edge_t) / aa_radius;
    const double d_thin = detail::smoothstep_derivative(thin_t) * 2.0 / aa_radius;
    const double dcov_dd = -thin * d_edge;
    const double dcov_dhw = thin * d_edge + edge * d_thin;
    if (dcov_dd == 0.0 && dcov_dhw == 0.0) return coverage;

    Eigen::Vector2d unit = Eigen::Vector2d::Zero();  // d(d)/d(c)
    if (d > 0.0) unit = (c - pixel) / d;
    grad->da = dcov_dd * (1.0 - tau) * unit;
    grad->db = dcov_dd * tau * unit;
    grad->dwa = dcov_dhw * 0.5 * (1.0 - tau);
    grad->dwb = dcov_dhw * 0.5 * tau;
    if (interior) {
      // The closest point slides along the axis; d is stationary in tau but
      // the interpolated half-width is not.
      const Eigen::Vector2d dtau_da = (-e - pa + 2.0 * tau * e) / ee;
      const Eigen::Vector2d dtau_db = (pa - 2.0 * tau * e) / ee;
      const double dhw_dtau = 0.5 * (w_b - w_a);
      grad->da += dcov_dhw * dhw_dtau * dtau_da;
      grad->db += dcov_dhw * dhw_dtau * dtau_db;
    }
  }
  return coverage;
}

/// Parameters t_0 = 0 < ... < t_k = 1 such that every piece's control
/// polygon deviates from its chord by less than `tolerance`.
inline std::vector<double> flatten_parameters(const Stroke2D& stroke, double tolerance) {
  std::vector<double> ts{0.0};
  struct Piece {
    Bezier2 bez;
    double t0, t1;
    int depth;
  };
  Bezier2 root;
  root.p = stroke.q;
  std::vector<Piece> stack{{root, 0.0, 1.0, 0}};
  // Depth-first, right piece pushed first, so parameters come out ordered.
  while (!stack.empty()) {
    Piece piece = stack.back();
    stack.pop_back();
    const Eigen::Vector2d chord = piece.bez.p[3] - piece.bez.p[0];
    const double len = chord.norm();
    double dev = 0.0;
    for (int r = 1; r <= 2; ++r) {
      const Eigen::Vector2d v = piece.bez.p[r] - piece.bez.p[0];
      dev = std::max(dev, len > 0.0 ? std::abs(chord.x() * v.y() - chord.y() * v.x()) / len : v.norm());
    }
    if (dev < tolerance || piece.depth >= 12) {
      ts.push_back(piece.t1);
      continue;
    }
    const auto [left, right] = piece.bez.split(0.5);
    const double mid = 0.5 * (piece.t0 + piece.t1);
    stack.push_back({right, mid, piece.t1, piece.depth + 1});
    stack.push_back({left, piece.t0, mid, piece.depth + 1});
  }
  return ts;
}

namespace detail {

struct Capsule {
  std::size_t stroke = 0;
  double t0 = 0.0;
  double t1 = 0.0;
  Eigen::Vector2d a;
  Eigen::Vector2d b;
  double wa = 0.0;
  double wb = 0.0;
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds
};

inline std::vector<Capsule> build_capsules(const StrokeBatch2D& batch, int width, int height,
                                           const RasterSettings& settings, std::vector<std::size_t>* stroke_begin) {
  std::vector<Capsule> out;
  if (stroke_begin) stroke_begin->assign(batch.size() + 1, 0);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Stroke2D& stroke = batch.strokes[s];
    if (stroke_begin) (*stroke_begin)[s] = out.size();
    const auto ts = flatten_parameters(stroke, settings.flatten_tolerance);
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
      Capsule c;
      c.stroke = s;
      c.t0 = ts[i];
      c.t1 = ts[i + 1];
      c.a = stroke.point(c.t0);
      c.b = stroke.point(c.t1);
      c.wa = std::max(0.0, stroke.width(c.t0));
      c.wb = std::max(0.0, stroke.width(c.t1));
      const double pad = 0.5 * std::max(c.wa, c.wb) + settings.aa_radius + 1.0;
      const Eigen::Vector2d lo = c.a.cwiseMin(c.b).array() - pad;
      const Eigen::Vector2d hi = c.a.cwiseMax(c.b).array() + pad;
      c.x0 = std::max(0, static_cast<int>(std::floor(lo.x() - 0.5)));
      c.y0 = std::max(0, static_cast<int>(std::floor(lo.y() - 0.5)));
      c.x1 = std::min(width - 1, static_cast<int>(std::ceil(hi.x() - 0.5)));
      c.y1 = std::min(height - 1, static_cast<int>(std::ceil(hi.y() - 0.5)));
      out.push_back(c);
    }
  }
  if (stroke_begin) (*stroke_begin)[batch.size()] = out.size();
  return out;
}

inline Eigen::Vector2d pixel_center(int x, int y) { return {x + 0.5, y + 0.5}; }

// Forward state shared by the forward and backward passes.
struct RasterState {
  ImageBuffer ink;
  std::vector<std::int32_t> argmax;   // Max: capsule index per pixel, -1 if none
  std::vector<double> transmittance;  // Over: product of (1 - c_s) over strokes with c_s < 1
  std::vector<std::int32_t> full;     // Over: number of strokes with c_s == 1
};

// Per-stroke max coverage over its capsules inside rows [row0, row1).
template <typename Visit>
void stroke_coverage(const std::vector<Capsule>& caps, std::size_t begin, std::size_t end, int width,
                     int row0, int row1, double aa, std::vector<double>& cov, std::vector<std::int32_t>& arg,
                     Visit&& visit) {
  // Bounding box of the stroke within the band.
  int x0 = width, x1 = -1, y0 = row1, y1 = row0 - 1;
  for (std::size_t c = begin; c < end; ++c) {
    x0 = std::min(x0, caps[c].x0);
    x1 = std::max(x1, caps[c].x1);
    y0 = std::min(y0, std::max(row0, caps[c].y0));
    y1 = std::max(y1, std::min(row1 - 1, caps[c].y1));
  }
  if (x1 < x0 || y1 < y0) return;
  const int bw = x1 - x0 + 1;
  const auto cells = static_cast<std::size_t>(bw) * static_cast<std::size_t>(y1 - y0 + 1);
  cov.assign(cells, 0.0);
  arg.assign(cells, -1);
  for (std::size_t c = begin; c < end; ++c) {
    const Capsule& cap = caps[c];
    for (int y = std::max(cap.y0, y0); y <= std::min(cap.y1, y1); ++y) {
      for (int x = cap.x0; x <= cap.x1; ++x) {
        const double v = capsule_coverage(pixel_center(x, y), cap.a, cap.b, cap.wa, cap.wb, aa);
        const auto i = static_cast<std::size_t>(y - y0) * static_cast<std::size_t>(bw) + static_cast<std::size_t>(x - x0);
        if (v > cov[i]) {
          cov[i] = v;
          arg[i] = static_cast<std::int32_t>(c);
        }
      }
    }
  }
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const auto i = static_cast<std::size_t>(y - y0) * static_cast<std::size_t>(bw) + static_cast<std::size_t>(x - x0);
      if (arg[i] >= 0) visit(x, y, cov[i], arg[i]);
    }
  }
}

inline RasterState raster_forward(const std::vector<Capsule>& caps, const std::vector<std::size_t>& stroke_begin,
                                  int width, int height, const RasterSettings& settings) {
  RasterState st;
  st.ink = ImageBuffer(width, height);
  const auto pixels = st.ink.size();
  if (settings.composite == Composite::Max) {
    st.argmax.assign(pixels, -1);
  } else {
    st.transmittance.assign(pixels, 1.0);
    st.full.assign(pixels, 0);
  }
  const std::size_t strokes = stroke_begin.empty() ? 0 : stroke_begin.size() - 1;

  // Row bands are independent; every pixel sees capsules in index order.
  parallel_chunks(static_cast<std::size_t>(height), settings.threads, [&](std::size_t r0, std::size_t r1) {
    const int row0 = static_cast<int>(r0);
    const int row1 = static_cast<int>(r1);
    if (settings.composite == Composite::Max) {
      for (std::size_t c = 0; c < caps.size(); ++c) {
        const Capsule& cap = caps[c];
        for (int y = std::max(cap.y0, row0); y <= std::min(cap.y1, row1 - 1); ++y) {
          for (int x = cap.x0; x <= cap.x1; ++x) {
            const double v = capsule_coverage(pixel_center(x, y), cap.a, cap.b, cap.wa, cap.wb, settings.aa_radius);
            const auto i = st.ink.index(x, y);
            if (v > st.ink.data[i]) {
              st.ink.data[i] = v;
              st.argmax[i] = static_cast<std::int32_t>(c);
            }
          }
        }
      }
    } else {
      std::vector<double> cov;
      std::vector<std::int32_t> arg;
      for (std::size_t s = 0; s < strokes; ++s) {
        stroke_coverage(caps, stroke_begin[s], stroke_begin[s + 1], width, row0, row1, settings.aa_radius, cov, arg,
                        [&](int x, int y, double v, std::int32_t) {
                          const auto i = st.ink.index(x, y);
                          if (v >= 1.0) {
                            ++st.full[i];
                          } else {
                            st.transmittance[i] *= 1.0 - v;
                          }
                        });
      }
      for (int y = row0; y < row1; ++y) {
        for (int x = 0; x < width; ++x) {
          const auto i = st.ink.index(x, y);
          st.ink.data[i] = st.full[i] > 0 ? 1.0 : 1.0 - st.transmittance[i];
        }
      }
    }
  });
  return st;
}

inline void accumulate_capsule_grad(const Capsule& cap, const Stroke2D& stroke, const CapsuleGrad& g, double scale,
                                    StrokeGrad& out) {
  const auto b0 = bernstein(cap.t0);
  const auto b1 = bernstein(cap.t1);
  for (int r = 0; r < 4; ++r) out.dq[r] += scale * (b0[r] * g.da + b1[r] * g.db);
  // Widths clamped at zero pass no gradient.
  const double dwa = stroke.width(cap.t0) > 0.0 ? scale * g.dwa : 0.0;
  const double dwb = stroke.width(cap.t1) > 0.0 ? scale * g.dwb : 0.0;
  out.dw_start += (1.0 - cap.t0) * dwa + (1.0 - cap.t1) * dwb;
  out.dw_end += cap.t0 * dwa + cap.t1 * dwb;
}

}  // namespace detail

/// Renders the stroke batch into a width x height ink image in [0, 1].
inline ImageBuffer rasterize(const StrokeBatch2D& strokes, int width, int height, const RasterSettings& settings = {}) {
  settings.validate();
  std::vector<std::size_t> begin;
  const auto caps = detail::build_capsules(strokes, width, height, settings, &begin);
  return detail::raster_forward(caps, begin, width, height, settings).ink;
}

namespace detail {

inline std::vector<StrokeGrad> raster_backward(const StrokeBatch2D& strokes, int width, int height,
                                               const RasterSettings& settings, const std::vector<Capsule>& caps,
                                               const std::vector<std::size_t>& begin, const RasterState& st,
                                               const ImageBuffer& pixel_grad) {
  if (pixel_grad.width != width || pixel_grad.height != height) {
    throw DomainError("pixel gradient is " + std::to_string(pixel_grad.width) + "x" +
                      std::to_string(pixel_grad.height) + ", expected " + std::to_string(width) + "x" +
                      std::to_string(height));
  }
  std::vector<StrokeGrad> grads(strokes.size());

  // Each stroke owns its output slot and walks pixels in a fixed order, so
  // results do not depend on the thread count.
  parallel_chunks(strokes.size(), settings.threads, [&](std::size_t s0, std::size_t s1) {
    std::vector<double> cov;
    std::vector<std::int32_t> arg;
    for (std::size_t s = s0; s < s1; ++s) {
      const Stroke2D& stroke = strokes.strokes[s];
      StrokeGrad& out = grads[s];
      if (settings.composite == Composite::Max) {
        for (std::size_t c = begin[s]; c < begin[s + 1]; ++c) {
          const auto& cap = caps[c];
          for (int y = cap.y0; y <= cap.y1; ++y) {
            for (int x = cap.x0; x <= cap.x1; ++x) {
              const auto i = st.ink.index(x, y);
              if (st.argmax[i] != static_cast<std::int32_t>(c) || pixel_grad.data[i] == 0.0) continue;
              CapsuleGrad g;
              capsule_coverage(pixel_center(x, y), cap.a, cap.b, cap.wa, cap.wb, settings.aa_radius, &g);
              accumulate_capsule_grad(cap, stroke, g, pixel_grad.data[i], out);
            }
          }
        }
      } else {
        stroke_coverage(
            caps, begin[s], begin[s + 1], width, 0, height, settings.aa_radius, cov, arg,
            [&](int x, int y, double v, std::int32_t c) {
              const auto i = st.ink.index(x, y);
              if (pixel_grad.data[i] == 0.0) return;
              // d ink / d c_s = product of (1 - c_j) over the other strokes.
              double others = 0.0;
              if (v >= 1.0) {
                others = st.full[i] > 1 ? 0.0 : st.transmittance[i];
              } else {
                others = st.full[i] > 0 ? 0.0 : st.transmittance[i] / (1.0 - v);
              }
              if (others == 0.0) return;
              const auto& cap = caps[static_cast<std::size_t>(c)];
              CapsuleGrad g;
              capsule_coverage(pixel_center(x, y), cap.a, cap.b, cap.wa, cap.wb, settings.aa_radius, &g);
              accumulate_capsule_grad(cap, stroke, g, pixel_grad.data[i] * others, out);
            });
      }
    }
  });
  return grads;
}

}  // namespace detail

/// Gradient of sum(pixel_grad * ink) w.r.t. every stroke's parameters.
/// Under max compositing each pixel routes to its argmax capsule (lowest
/// index on ties).
inline std::vector<StrokeGrad> rasterize_backward(const StrokeBatch2D& strokes, int width, int height,
                                                  const RasterSettings& settings, const ImageBuffer& pixel_grad) {
  settings.validate();
  std::vector<std::size_t> begin;
  const auto caps = detail::build_capsules(strokes, width, height, settings, &begin);
  const auto st = detail::raster_forward(caps, begin, width, height, settings);
  return detail::raster_backward(strokes, width, height, settings, caps, begin, st, pixel_grad);
}

/// One forward pass, then the backward pass for the pixel gradient that
/// `pixel_grad_of(image)` returns.
template <typename PixelGrad>
std::vector<StrokeGrad> rasterize_with_gradient(const StrokeBatch2D& strokes, int width, int height,
                                                const RasterSettings& settings, PixelGrad&& pixel_grad_of,
                                                ImageBuffer* image = nullptr) {
  settings.validate();
  std::vector<std::size_t> begin;
  const auto caps = detail::build_capsules(strokes, width, height, settings, &begin);
  const auto st = detail::raster_forward(caps, begin, width, height, settings);
  if (image) *image = st.ink;
  const ImageBuffer g = pixel_grad_of(st.ink);
  return detail::raster_backward(strokes, width, height, settings, caps, begin, st, g);
}

}  // namespace wire4d
