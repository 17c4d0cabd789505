#pragma once

// Loss assembly over views and the optimization schedule.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "wire4d/adam.hpp"
#include "wire4d/camera.hpp"
#include "wire4d/config.hpp"
#include "wire4d/depth.hpp"
#include "wire4d/error.hpp"
#include "wire4d/image.hpp"
#include "wire4d/loss.hpp"
#include "wire4d/projection.hpp"
#include "wire4d/raster.hpp"
#include "wire4d/spline.hpp"
#include "wire4d/topology.hpp"

namespace wire4d {

struct ViewTarget {
  std::string name;
  Camera camera;
  std::optional<ImageBuffer> mask;
  std::optional<ImageBuffer> depth;
  std::string guidance_id;
};

/// Supplies dL/dI for a render of a view with a guidance id.
using GradientProvider = std::function<ImageBuffer(const ImageBuffer& render, const ViewTarget& view, double progress)>;

struct LossSettings {
  double lambda_I = 1.0;
  double lambda_G = 0.5;
  double lambda_mmse = 1.0;
  double lambda_clip = 0.0;
  double alpha = 1.0;
  int mmse_levels = kDefaultMmseLevels;
  double epsilon_px = kDefaultEpsilonPx;
  RasterSettings raster;
  VisibilityParams visibility;
  bool skip_failed_views = false;

  static LossSettings from(const RunConfig& c) {
    LossSettings s;
    s.lambda_I = c.lambda_I;
    s.lambda_G = c.lambda_G;
    s.lambda_mmse = c.lambda_mmse;
    s.lambda_clip = c.lambda_clip;
    s.alpha = c.alpha;
    s.mmse_levels = static_cast<int>(c.mmse_levels);
    s.epsilon_px = c.epsilon_px;
    s.raster.aa_radius = c.aa_radius;
    s.raster.flatten_tolerance = c.flatten_tolerance;
    s.raster.composite = c.composite;
    s.raster.threads = static_cast<int>(c.threads);
    s.visibility = {c.visibility_k, c.visibility_b};
    s.skip_failed_views = c.skip_failed_views;
    return s;
  }
};

struct LossBreakdown {
  double total = 0.0;
  double image = 0.0;  // L_I, before lambda_I
  double jerk = 0.0;   // L_G, before lambda_G
  std::vector<double> view_losses;
  std::vector<std::string> skipped_views;
  ControlMatrix gradient;  // d total / d raw controls
  std::vector<ImageBuffer> renders;
};

/// lambda_I * sum_v (lambda_mmse MMSE_v + lambda_clip bridge_v) + lambda_G * jerk,
/// with its gradient w.r.t. the wire's raw control parameters.
inline LossBreakdown total_loss(const Wire4D& wire, const std::vector<ViewTarget>& views, const LossSettings& s,
                                const GradientProvider& bridge = {}, double progress = 0.0, bool keep_renders = false) {
  if (views.empty()) throw DomainError("total loss needs at least one view");
  LossBreakdown out;
  out.gradient = ControlMatrix::Zero(static_cast<Eigen::Index>(wire.control_count()), 4);
  out.view_losses.assign(views.size(), 0.0);
  if (keep_renders) out.renders.resize(views.size());

  const bool need_images = s.lambda_I != 0.0 || keep_renders;
  for (std::size_t vi = 0; need_images && vi < views.size(); ++vi) {
    const ViewTarget& view = views[vi];
    const int w = view.camera.width;
    const int h = view.camera.height;
    const StrokeBatch2D batch = project_wire(wire, view.camera, s.epsilon_px);
    StrokeBatch2D drawn = batch;
    std::optional<VisibilityRecord> vis;
    if (view.depth) vis = attenuate_widths(drawn, *view.depth, s.visibility);

    double value = 0.0;
    auto pixel_grad = [&](const ImageBuffer& img) {
      ImageBuffer g(w, h);
      if (view.mask && s.lambda_mmse != 0.0) {
        const LossResult r = mmse_loss(img, *view.mask, s.alpha, s.mmse_levels);
        value += s.lambda_mmse * r.value;
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += s.lambda_mmse * r.gradient.data[i];
      }
      if (!view.guidance_id.empty() && s.lambda_clip != 0.0 && s.lambda_I != 0.0) {
        if (!bridge) throw BridgeError(BridgeError::Kind::Connection, "view '" + view.name + "' needs a guidance bridge");
        const ImageBuffer gb = bridge(img, view, progress);
        if (!gb.same_shape(img)) throw BridgeError(BridgeError::Kind::Dimension, "bridge gradient size mismatch");
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += s.lambda_clip * gb.data[i];
      }
      return g;
    };

    ImageBuffer img;
    std::vector<StrokeGrad> grads;
    try {
      grads = rasterize_with_gradient(drawn, w, h, s.raster, pixel_grad, &img);
    } catch (const BridgeError&) {
      if (!s.skip_failed_views) throw;
      out.skipped_views.push_back(view.name);
      if (keep_renders) out.renders[vi] = rasterize(drawn, w, h, s.raster);
      continue;
    }
    if (keep_renders) out.renders[vi] = img;
    if (s.lambda_I == 0.0) continue;
    if (vis) attenuate_backward(grads, *vis);
    const ControlMatrix g = backprop_projection(grads, batch, wire, view.camera);
    out.gradient += s.lambda_I * g;
    out.view_losses[vi] = value;
    out.image += value;
  }
  if (s.lambda_G != 0.0) {
    const JerkResult j = jerk_energy(wire);
    out.jerk = j.energy;
    out.gradient += s.lambda_G * j.gradient;
  }
  out.total = s.lambda_I * out.image + s.lambda_G * out.jerk;
  return out;
}

// ---------------------------------------------------------------------------
// Schedule

struct ScheduleHooks {
  /// Every record as it is produced.
  std::function<void(const nlohmann::json&)> log;
  /// Renders at iterations divisible by `render_every` and after the last step.
  std::function<void(long iter, const std::vector<ImageBuffer>&)> renders;
  /// Called with the current wire before an error propagates out of the loop.
  std::function<void(long iter, const Wire4D&)> aborted;
};

struct ScheduleResult {
  Wire4D wire;
  std::vector<nlohmann::json> log;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

inline std::uint64_t event_seed(std::uint64_t seed, long iter) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(iter), 0x77697265u};
  std::uint64_t out = 0;
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out;
}

/// Runs `config.iterations` Adam steps with reinitialization and refinement
/// events at their configured iterations.
inline ScheduleResult run_schedule(const RunConfig& config, Wire4D wire, const std::vector<ViewTarget>& views,
                                   const ReinitBounds& bounds, const GradientProvider& bridge = {},
                                   const ScheduleHooks& hooks = {}) {
  const LossSettings settings = LossSettings::from(config);
  AdamSettings adam_settings{config.lr_position, config.lr_width, config.adam_beta1, config.adam_beta2, config.adam_eps};
  adam_settings.validate();
  AdamState adam(static_cast<Eigen::Index>(wire.control_count()));
  GradientHistory history(wire.control_count(), static_cast<std::size_t>(config.gradient_window));

  ScheduleResult result{wire, {}, 0.0, 0.0};
  if (config.iterations <= 0) return result;

  auto emit = [&](nlohmann::json rec) {
    if (hooks.log) hooks.log(rec);
    result.log.push_back(std::move(rec));
  };
  auto wants_render = [&](long it) { return hooks.renders && config.render_every > 0 && it % config.render_every == 0; };

  long it = 0;
  try {
    for (; it < config.iterations; ++it) {
      nlohmann::json rec{{"iter", it}};
      if (std::find(config.reinit_iters.begin(), config.reinit_iters.end(), it) != config.reinit_iters.end()) {
        const auto prune = detect_prune_set(wire, config.prune_epsilon());
        ReinitResult r = width_guided_reinit(wire, prune, bounds, event_seed(config.seed, it), config.initial_width);
        wire = std::move(r.wire);
        adam.reset_rows(prune);
        rec["pruned"] = prune;
      }
      if (config.refine_iter >= 0 && it == config.refine_iter) {
        RefineResult r = gradient_knot_refine(wire, history, static_cast<std::size_t>(config.refine_count));
        wire = std::move(r.wire);
        adam.remap(r.row_map);
        history.reset(wire.control_count());
        rec["inserted_spans"] = r.spans;
        rec["control_count"] = wire.control_count();
      }

      const double progress = static_cast<double>(it) / static_cast<double>(config.iterations);
      const LossBreakdown loss = total_loss(wire, views, settings, bridge, progress, wants_render(it));
      if (it == 0) result.initial_loss = loss.total;
      if (wants_render(it)) hooks.renders(it, loss.renders);
      rec["loss"] = loss.total;
      rec["image"] = loss.image;
      rec["jerk"] = loss.jerk;
      rec["views"] = loss.view_losses;
      if (!loss.skipped_views.empty()) rec["skipped_views"] = loss.skipped_views;
      emit(std::move(rec));

      history.push(loss.gradient);
      ControlMatrix params = wire.raw_matrix();
      adam_step(params, loss.gradient, adam, adam_settings);
      wire = Wire4D::from_raw(params, wire.knots, wire.width_clamp);
    }
  } catch (...) {
    if (hooks.aborted) hooks.aborted(it, wire);
    throw;
  }

  const LossBreakdown final_loss = total_loss(wire, views, settings, bridge, 1.0, static_cast<bool>(hooks.renders));
  if (hooks.renders) hooks.renders(config.iterations, final_loss.renders);
  result.final_loss = final_loss.total;
  emit({{"iter", config.iterations},
        {"final", true},
        {"loss", final_loss.total},
        {"image", final_loss.image},
        {"jerk", final_loss.jerk},
        {"views", final_loss.view_losses}});
  result.wire = std::move(wire);
  return result;
}

}  // namespace wire4d
