#pragma once

// Multi-scale mean squared error against an opacity-scaled silhouette.

#include <algorithm>
#include <vector>

#include "wire4d/error.hpp"
#include "wire4d/image.hpp"

namespace wire4d {

inline constexpr int kDefaultMmseLevels = 4;

struct LossResult {
  double value = 0.0;
  ImageBuffer gradient;  // d value / d render
};

namespace detail {

// 2x2 mean pooling; odd edges average the pixels that exist.
inline ImageBuffer mean_pool2(const ImageBuffer& in) {
  ImageBuffer out((in.width + 1) / 2, (in.height + 1) / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double sum = 0.0;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = 2 * x + dx, sy = 2 * y + dy;
          if (sx < in.width && sy < in.height) {
            sum += in.at(sx, sy);
            ++n;
          }
        }
      }
      out.at(x, y) = sum / n;
    }
  }
  return out;
}

// Adjoint of mean_pool2 into an image of `shape`'s size.
inline ImageBuffer mean_pool2_adjoint(const ImageBuffer& g, const ImageBuffer& shape) {
  ImageBuffer out(shape.width, shape.height);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      int n = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          if (2 * x + dx < out.width && 2 * y + dy < out.height) ++n;
        }
      }
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = 2 * x + dx, sy = 2 * y + dy;
          if (sx < out.width && sy < out.height) out.at(sx, sy) += g.at(x, y) / n;
        }
      }
    }
  }
  return out;
}

}  // namespace detail

/// Mean over `levels` pyramid scales of MSE(render, alpha * mask).
inline LossResult mmse_loss(const ImageBuffer& render, const ImageBuffer& mask, double alpha,
                            int levels = kDefaultMmseLevels) {
  if (!render.same_shape(mask)) throw DomainError("render and mask sizes differ");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("alpha must be in (0, 1]");
  if (levels < 1) throw DomainError("mmse needs at least one level");
  if (render.size() == 0) throw DomainError("empty image");

  std::vector<ImageBuffer> diffs;
  ImageBuffer d(render.width, render.height);
  for (std::size_t i = 0; i < d.size(); ++i) d.data[i] = render.data[i] - alpha * mask.data[i];
  diffs.push_back(std::move(d));
  for (int l = 1; l < levels; ++l) diffs.push_back(detail::mean_pool2(diffs.back()));

  LossResult out;
  ImageBuffer g;
  for (int l = levels - 1; l >= 0; --l) {
    const ImageBuffer& dl = diffs[static_cast<std::size_t>(l)];
    const double n = static_cast<double>(dl.size());
    double sse = 0.0;
    for (double v : dl.data) sse += v * v;
    out.value += sse / n / levels;
    ImageBuffer gl(dl.width, dl.height);
    for (std::size_t i = 0; i < gl.size(); ++i) gl.data[i] = 2.0 * dl.data[i] / n / levels;
    if (l + 1 < levels) {
      const ImageBuffer up = detail::mean_pool2_adjoint(g, dl);
      for (std::size_t i = 0; i < gl.size(); ++i) gl.data[i] += up.data[i];
    }
    g = std::move(gl);
  }
  out.gradient = std::move(g);
  return out;
}

}  // namespace wire4d
