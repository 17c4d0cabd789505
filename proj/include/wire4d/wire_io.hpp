#pragma once

// Versioned JSON wire files:
// {"version":1,"degree":3,"knots":[...],"controls":[[x,y,z,w_raw],...],
//  "width_clamp":[w_min,w_max]}

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "wire4d/error.hpp"
#include "wire4d/spline.hpp"

namespace wire4d {

inline constexpr int kWireFileVersion = 1;

inline nlohmann::json wire_to_json(const Wire4D& wire) {
  nlohmann::json j;
  j["version"] = kWireFileVersion;
  j["degree"] = kDegree;
  j["knots"] = wire.knots.values();
  auto controls = nlohmann::json::array();
  for (const auto& c : wire.controls) controls.push_back({c.x, c.y, c.z, c.w});
  j["controls"] = std::move(controls);
  j["width_clamp"] = {wire.width_clamp.w_min, wire.width_clamp.w_max};
  return j;
}

inline Wire4D wire_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kWireFileVersion) {
      throw InputError("unsupported wire file version " + j.at("version").dump());
    }
    if (j.at("degree").get<int>() != kDegree) throw InputError("only cubic wires are supported");
    Wire4D wire;
    wire.knots = KnotVector(j.at("knots").get<std::vector<double>>());
    for (const auto& c : j.at("controls")) {
      const auto v = c.get<std::vector<double>>();
      if (v.size() != 4) throw InputError("control points must have 4 components");
      wire.controls.push_back({v[0], v[1], v[2], v[3]});
    }
    const auto clamp = j.at("width_clamp").get<std::vector<double>>();
    if (clamp.size() != 2) throw InputError("width_clamp must be [w_min, w_max]");
    wire.width_clamp = {clamp[0], clamp[1]};
    wire.validate();
    return wire;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed wire file: ") + e.what());
  } catch (const DomainError& e) {
    throw InputError(std::string("invalid wire: ") + e.what());
  }
}

inline std::string dump_json(const nlohmann::json& j) { return j.dump(1) + "\n"; }

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

inline Wire4D read_wire(const std::filesystem::path& path) {
  try {
    return wire_from_json(read_json_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline void write_wire(const std::filesystem::path& path, const Wire4D& wire) {
  write_text_file(path, dump_json(wire_to_json(wire)));
}

}  // namespace wire4d
