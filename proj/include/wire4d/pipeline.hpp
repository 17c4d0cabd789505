#pragma once

// Builds views, the initial wire and reinitialization bounds from a run config.

#include <string>
#include <vector>

#include "wire4d/camera.hpp"
#include "wire4d/config.hpp"
#include "wire4d/depth.hpp"
#include "wire4d/error.hpp"
#include "wire4d/image.hpp"
#include "wire4d/init.hpp"
#include "wire4d/mesh.hpp"
#include "wire4d/optimize.hpp"
#include "wire4d/topology.hpp"
#include "wire4d/wire_io.hpp"

namespace wire4d {

inline Camera view_camera(const RunConfig& config, const ViewConfig& view) {
  if (!view.camera_file.empty()) return read_camera(config.resolve(view.camera_file));
  const double focal = view.focal > 0.0 ? view.focal : static_cast<double>(view.width);
  Camera cam = Camera::look_at(view.eye, view.target, view.up, focal, view.width, view.height);
  cam.validate();
  return cam;
}

inline std::vector<ViewTarget> load_views(const RunConfig& config) {
  std::vector<ViewTarget> views;
  for (const ViewConfig& vc : config.views) {
    ViewTarget v;
    v.name = vc.name;
    v.camera = view_camera(config, vc);
    v.guidance_id = vc.guidance_id;
    if (!vc.mask.empty()) {
      const auto path = config.resolve(vc.mask);
      ImageBuffer mask = read_image(path);
      if (mask.width != v.camera.width || mask.height != v.camera.height) {
        throw InputError(path.string() + ": mask is " + std::to_string(mask.width) + "x" +
                         std::to_string(mask.height) + " but view '" + vc.name + "' is " +
                         std::to_string(v.camera.width) + "x" + std::to_string(v.camera.height));
      }
      if (vc.invert_mask) {
        for (double& x : mask.data) x = 1.0 - x;
      }
      v.mask = std::move(mask);
    }
    if (!vc.depth_mesh.empty()) {
      const TriangleMesh mesh = load_mesh(config.resolve(vc.depth_mesh), vc.normalize_mesh);
      v.depth = render_depth(mesh, v.camera, static_cast<int>(config.threads));
    }
    views.push_back(std::move(v));
  }
  return views;
}

inline InitVolume init_volume(const RunConfig& config, const std::vector<ViewTarget>& views) {
  InitVolume volume;
  if (config.init.kind == "silhouette_cone") {
    const ViewTarget& v = views.at(static_cast<std::size_t>(config.init.view));
    if (!v.mask) throw InputError("config: init view '" + v.name + "' has no mask");
    volume.kind = VolumeKind::SilhouetteCone;
    volume.mask = v.mask;
    volume.camera = v.camera;
    const auto range = config.init.depth_range ? *config.init.depth_range : default_depth_range(v.camera);
    volume.z_near = range.first;
    volume.z_far = range.second;
  } else {
    volume.kind = VolumeKind::Sphere;
    volume.radius = config.init.radius;
    volume.center = config.init.center;
  }
  volume.validate();
  return volume;
}

inline Wire4D initial_wire(const RunConfig& config, const std::vector<ViewTarget>& views) {
  const auto count = static_cast<std::size_t>(config.control_count);
  const std::string& kind = config.init.kind;
  if (kind == "wire") return read_wire(config.resolve(config.init.path));
  std::vector<Eigen::Vector3d> path;
  if (kind == "polyline") {
    path = import_polyline(config.resolve(config.init.path));
  } else {
    const auto samples = config.init.sample_count > 0 ? static_cast<std::size_t>(config.init.sample_count) : count;
    const auto points = sample_init_volume(init_volume(config, views), samples, config.seed);
    for (std::size_t i : tsp_order(points)) path.push_back(points[i]);
  }
  return wire_from_path(path, count, config.initial_width, config.width_clamp());
}

/// Where pruned controls are re-seeded: the init volume, or the padded
/// bounding box of the initial controls for imported curves.
inline ReinitBounds reinit_bounds(const RunConfig& config, const std::vector<ViewTarget>& views,
                                  const Wire4D& initial) {
  if (config.init.kind == "sphere") return SphereBounds{config.init.center, config.init.radius};
  if (config.init.kind == "silhouette_cone") return init_volume(config, views);
  const ControlMatrix m = initial.effective_matrix();
  const Eigen::Vector3d lo = m.leftCols(3).colwise().minCoeff().transpose();
  const Eigen::Vector3d hi = m.leftCols(3).colwise().maxCoeff().transpose();
  const Eigen::Vector3d pad = (0.05 * (hi - lo)).cwiseMax(1e-3);
  return BoxBounds{lo - pad, hi + pad};
}

}  // namespace wire4d
