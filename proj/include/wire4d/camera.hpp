#pragma once

// Pinhole camera (OpenCV convention: x right, y down, z forward).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <json.hpp>

#include "wire4d/error.hpp"
#include "wire4d/wire_io.hpp"

namespace wire4d {

struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double near = 1e-3;

  Eigen::Vector3d to_camera(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  double focal() const { return std::max(fx, fy); }

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw DomainError("focal lengths must be positive");
    if (!(near > 0.0)) throw DomainError("near plane must be positive");
    if (width < 1 || height < 1) throw DomainError("image size must be positive");
    const Eigen::Matrix3d gram = rotation.transpose() * rotation;
    if (!((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-9) ||
        std::abs(rotation.determinant() - 1.0) > 1e-9) {
      throw DomainError("rotation must be orthonormal with determinant 1");
    }
  }

  /// Camera at `eye` looking at `target`; `up` is the world direction that
  /// should appear upward on screen.
  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                        const Eigen::Vector3d& up, double focal, int width, int height) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Camera cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    cam.fx = cam.fy = focal;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.near = 1e-3;
    return cam;
  }
};

struct ScreenPoint {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
};

/// Pinhole projection of a world point; throws ClipError at or behind near.
inline ScreenPoint project_point(const Camera& camera, const Eigen::Vector3d& p) {
  const Eigen::Vector3d c = camera.to_camera(p);
  if (!(c.z() > camera.near)) {
    throw ClipError("point at depth " + std::to_string(c.z()) + " is not in front of the near plane " +
                    std::to_string(camera.near));
  }
  return {camera.fx * c.x() / c.z() + camera.cx, camera.fy * c.y() / c.z() + camera.cy, c.z()};
}

/// Jacobian rows d(u, v, z)/d(world point).
inline Eigen::Matrix3d projection_jacobian(const Camera& camera, const Eigen::Vector3d& p) {
  const Eigen::Vector3d c = camera.to_camera(p);
  const double iz = 1.0 / c.z();
  Eigen::Matrix3d d_cam;  // d(u, v, z)/d(camera point)
  d_cam << camera.fx * iz, 0.0, -camera.fx * c.x() * iz * iz,
           0.0, camera.fy * iz, -camera.fy * c.y() * iz * iz,
           0.0, 0.0, 1.0;
  return d_cam * camera.rotation;
}

inline nlohmann::json camera_to_json(const Camera& cam) {
  nlohmann::json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  auto rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(cam.rotation(r, c));
  j["rotation"] = std::move(rot);
  j["translation"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
  j["near"] = cam.near;
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  try {
    Camera cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    const auto rot = j.at("rotation").get<std::vector<double>>();
    const auto tr = j.at("translation").get<std::vector<double>>();
    if (rot.size() != 9 || tr.size() != 3) throw InputError("rotation needs 9 values and translation 3");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rot[static_cast<std::size_t>(3 * r + c)];
    cam.translation = {tr[0], tr[1], tr[2]};
    cam.near = j.at("near").get<double>();
    cam.validate();
    return cam;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed camera: ") + e.what());
  } catch (const DomainError& e) {
    throw InputError(std::string("invalid camera: ") + e.what());
  }
}

inline Camera read_camera(const std::filesystem::path& path) {
  try {
    return camera_from_json(read_json_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline void write_camera(const std::filesystem::path& path, const Camera& cam) {
  write_text_file(path, dump_json(camera_to_json(cam)));
}

}  // namespace wire4d
