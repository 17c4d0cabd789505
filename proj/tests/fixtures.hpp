#pragma once

// Two-view silhouette fixture and scratch directories.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "wire4d/config.hpp"
#include "wire4d/image.hpp"
#include "wire4d/optimize.hpp"

namespace wire4d::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "wire4d") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ImageBuffer disk_mask(int size, double radius_px) {
  ImageBuffer m(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - 0.5 * size;
      const double dy = y + 0.5 - 0.5 * size;
      m.at(x, y) = dx * dx + dy * dy <= radius_px * radius_px ? 1.0 : 0.0;
    }
  }
  return m;
}

inline ImageBuffer square_mask(int size, double half_px) {
  ImageBuffer m(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - 0.5 * size;
      const double dy = y + 0.5 - 0.5 * size;
      m.at(x, y) = std::abs(dx) <= half_px && std::abs(dy) <= half_px ? 1.0 : 0.0;
    }
  }
  return m;
}

inline constexpr double kFixtureDistance = 2.5;
inline constexpr double kFixtureHalfExtent = 0.6;  // world units

// Disk seen from the front and a square from the side: the silhouettes of a
// cylinder of radius 0.6 and length 1.2 along the view axis of the front camera.
inline std::string silhouette_config_text(long iterations, int size) {
  const long refine = iterations > 400 ? 400 : iterations * 4 / 5;
  std::string text;
  text += "control_count = 150\n";
  text += "iterations = " + std::to_string(iterations) + "\n";
  text += "reinit_iters = [" + std::to_string(iterations * 3 / 10) + ", " + std::to_string(iterations * 6 / 10) + "]\n";
  text += "refine_iter = " + std::to_string(refine) + "\n";
  text += "lambda_G = 0.0\n";
  text += "seed = 7\n";
  text += "render_every = 100\n";
  text += "\n[init]\nkind = \"sphere\"\nradius = 0.6\n";
  text += "\n[[view]]\nname = \"front\"\neye = [0, 0, -2.5]\nmask = \"front.png\"\n";
  text += "width = " + std::to_string(size) + "\nheight = " + std::to_string(size) + "\n";
  text += "\n[[view]]\nname = \"side\"\neye = [2.5, 0, 0]\nmask = \"side.png\"\n";
  text += "width = " + std::to_string(size) + "\nheight = " + std::to_string(size) + "\n";
  return text;
}

/// Writes masks and config.toml into `dir`; returns the config path.
inline std::filesystem::path write_silhouette_fixture(const std::filesystem::path& dir, long iterations = 500,
                                                      int size = 128) {
  const double r = kFixtureHalfExtent / kFixtureDistance * size;
  write_png(dir / "front.png", disk_mask(size, r), false);
  write_png(dir / "side.png", square_mask(size, r), false);
  const auto path = dir / "config.toml";
  std::ofstream(path) << silhouette_config_text(iterations, size);
  return path;
}

}  // namespace wire4d::testing
