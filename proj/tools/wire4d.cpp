// wire4d command-line tool.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wire4d/wire4d.hpp"

namespace fs = std::filesystem;
using namespace wire4d;

namespace {

enum Exit { kOk = 0, kInputError = 2, kRuntimeError = 3, kBridgeError = 4 };

const char* bridge_kind_name(BridgeError::Kind kind) {
  switch (kind) {
    case BridgeError::Kind::Timeout: return "timeout";
    case BridgeError::Kind::Protocol: return "protocol";
    case BridgeError::Kind::Dimension: return "dimension";
    case BridgeError::Kind::Connection: return "connection";
    case BridgeError::Kind::Remote: return "remote";
  }
  return "unknown";
}

int report(const std::string& kind, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
  return code;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string views;
  std::optional<double> epsilon_px;
  bool dry_run = false;
};

RunConfig load_config(const Common& c) {
  if (c.config.empty()) throw InputError("--config is required");
  RunConfig config = load_run_config(c.config);
  if (c.seed) config.seed = *c.seed;
  if (c.epsilon_px) config.epsilon_px = *c.epsilon_px;
  if (!c.views.empty()) {
    const auto names = split_list(c.views);
    std::vector<ViewConfig> kept;
    for (const auto& name : names) {
      auto it = std::find_if(config.views.begin(), config.views.end(), [&](const ViewConfig& v) { return v.name == name; });
      if (it == config.views.end()) throw InputError("--views: no view named '" + name + "'");
      kept.push_back(*it);
    }
    config.views = std::move(kept);
    if (config.init.kind == "silhouette_cone") config.init.view = 0;
  }
  config.validate();
  return config;
}

bool needs_bridge(const RunConfig& config) {
  if (config.lambda_clip == 0.0) return false;
  return std::any_of(config.views.begin(), config.views.end(), [](const ViewConfig& v) { return !v.guidance_id.empty(); });
}

GradientProvider make_bridge(const RunConfig& config, std::shared_ptr<guidance::Client>& client) {
  if (!needs_bridge(config)) return {};
  const char* address = std::getenv("WIRE4D_BRIDGE");
  if (!address || !*address) {
    throw BridgeError(BridgeError::Kind::Connection, "views request guidance but WIRE4D_BRIDGE is not set");
  }
  client = std::make_shared<guidance::Client>(address, config.bridge_timeout);
  return [client](const ImageBuffer& render, const ViewTarget& view, double progress) {
    return client->request(render, view.guidance_id, progress);
  };
}

int cmd_init(const Common& c) {
  const RunConfig config = load_config(c);
  const auto views = load_views(config);
  const Wire4D wire = initial_wire(config, views);
  if (c.dry_run) return kOk;
  if (c.out.empty()) throw InputError("--out is required");
  ensure_parent(c.out);
  write_wire(c.out, wire);
  return kOk;
}

int cmd_fit(const Common& c) {
  const RunConfig config = load_config(c);
  const auto views = load_views(config);
  const Wire4D initial = initial_wire(config, views);
  const ReinitBounds bounds = reinit_bounds(config, views, initial);
  if (c.dry_run) return kOk;
  if (c.out.empty()) throw InputError("--out is required");

  const fs::path out = c.out;
  fs::create_directories(out / "renders");
  std::shared_ptr<guidance::Client> client;
  const GradientProvider bridge = make_bridge(config, client);

  std::ofstream log(out / "log.jsonl");
  if (!log) throw InputError("cannot write " + (out / "log.jsonl").string());
  ScheduleHooks hooks;
  hooks.log = [&](const nlohmann::json& rec) { log << rec.dump() << '\n'; };
  hooks.renders = [&](long iter, const std::vector<ImageBuffer>& images) {
    char suffix[32];
    std::snprintf(suffix, sizeof suffix, "_%06ld.png", iter);
    for (std::size_t i = 0; i < images.size(); ++i) {
      write_png(out / "renders" / (views[i].name + suffix), images[i]);
    }
  };
  hooks.aborted = [&](long iter, const Wire4D& wire) {
    log.flush();
    write_wire(out / "partial_wire.json", wire);
    std::cerr << nlohmann::json{{"aborted_at", iter}, {"partial_wire", (out / "partial_wire.json").string()}}.dump()
              << "\n";
  };
  write_wire(out / "initial_wire.json", initial);
  const ScheduleResult result = run_schedule(config, initial, views, bounds, bridge, hooks);
  write_wire(out / "wire.json", result.wire);
  const double threshold = config.prune_epsilon();
  const ComponentSet comps = component_count(result.wire, threshold);
  nlohmann::json summary{{"initial_loss", result.initial_loss},
                         {"final_loss", result.final_loss},
                         {"iterations", config.iterations},
                         {"control_count", result.wire.control_count()},
                         {"components", comps.size()}};
  write_text_file(out / "summary.json", dump_json(summary));
  std::cout << summary.dump() << "\n";
  return kOk;
}

int cmd_render(const std::string& wire_path, const std::string& camera_path, const std::string& out,
               double epsilon_px, const std::string& depth_mesh, bool normalize_mesh, bool dry_run) {
  const Wire4D wire = read_wire(wire_path);
  const Camera camera = read_camera(camera_path);
  StrokeBatch2D batch = project_wire(wire, camera, epsilon_px);
  if (!depth_mesh.empty()) {
    const ImageBuffer depth = render_depth(load_mesh(depth_mesh, normalize_mesh), camera);
    attenuate_widths(batch, depth, VisibilityParams{});
  }
  const ImageBuffer image = rasterize(batch, camera.width, camera.height);
  if (dry_run) return kOk;
  ensure_parent(out);
  if (fs::path(out).extension() == ".png") {
    write_png(out, image);
  } else {
    write_float_buffer(out, image);
  }
  return kOk;
}

int cmd_metrics(const std::string& wire_path, std::optional<double> threshold) {
  const Wire4D wire = read_wire(wire_path);
  const double eps = threshold ? *threshold : default_width_epsilon(wire.width_clamp);
  const ComponentSet comps = component_count(wire, eps);
  nlohmann::json out{{"length", total_length(wire)}, {"components", comps.size()}, {"threshold", eps}};
  out["mst_cost"] = comps.empty() ? nlohmann::json(nullptr) : nlohmann::json(mst_connectivity_cost(comps));
  std::cout << out.dump() << "\n";
  return kOk;
}

int cmd_validate_projection(const std::string& wire_path, const std::string& camera_path, const std::string& levels,
                            const std::string& out) {
  const Wire4D wire = wire_path.empty() ? canonical_helix() : read_wire(wire_path);
  const Camera camera = camera_path.empty() ? canonical_camera() : read_camera(camera_path);
  std::vector<int> counts;
  for (const auto& s : split_list(levels)) {
    try {
      counts.push_back(std::stoi(s));
    } catch (const std::exception&) {
      throw InputError("--levels: not an integer '" + s + "'");
    }
  }
  const auto rows = convergence_report(wire, camera, counts);
  std::ostringstream csv;
  csv.precision(17);
  csv << "h,error_normalized,subdivision\n";
  for (const auto& r : rows) csv << r.h << ',' << r.error << ',' << r.subdivision << '\n';
  if (out.empty()) {
    std::cout << csv.str();
  } else {
    ensure_parent(out);
    write_text_file(out, csv.str());
  }
  return kOk;
}

int cmd_export_svg(const std::string& wire_path, const std::string& camera_path, const std::string& out,
                   double epsilon_px) {
  const Wire4D wire = read_wire(wire_path);
  const Camera camera = read_camera(camera_path);
  const std::string svg = export_svg(wire, camera, epsilon_px);
  ensure_parent(out);
  write_text_file(out, svg);
  return kOk;
}

int cmd_export_mesh(const std::string& wire_path, const std::string& out, int sides, int samples) {
  const Wire4D wire = read_wire(wire_path);
  const TubeResult tube = tube_mesh(wire, {sides, samples});
  for (const auto& w : tube.warnings) std::cerr << nlohmann::json{{"warning", w}}.dump() << "\n";
  ensure_parent(out);
  write_obj(out, tube.mesh);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable 4D wire kernel"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Run config (TOML)")->required();
    sub->add_option("--seed", common.seed, "Override the config seed");
    sub->add_option("--views", common.views, "Comma-separated view names to keep");
    sub->add_option("--epsilon-px", common.epsilon_px, "Projection error bound in pixels");
    sub->add_flag("--dry-run", common.dry_run, "Validate config and inputs only");
  };

  auto* init = app.add_subcommand("init", "Write the initial wire for a config");
  add_common(init);
  init->add_option("--out", common.out, "Output wire file");

  auto* fit = app.add_subcommand("fit", "Run the optimization schedule");
  add_common(fit);
  fit->add_option("--out", common.out, "Output directory");

  std::string wire_path, camera_path, out, depth_mesh, levels = "1,2,4,8,16";
  double epsilon_px = kDefaultEpsilonPx;
  bool normalize_mesh = false;
  bool dry_run = false;
  std::optional<double> threshold;
  int sides = 12;
  int samples = 256;

  auto* render = app.add_subcommand("render", "Rasterize a wire from a camera");
  render->add_option("--wire", wire_path)->required();
  render->add_option("--camera", camera_path)->required();
  render->add_option("--out", out, "PNG, or float buffer for other extensions")->required();
  render->add_option("--epsilon-px", epsilon_px);
  render->add_option("--depth-mesh", depth_mesh, "OBJ occluder for soft visibility");
  render->add_flag("--normalize-mesh", normalize_mesh);
  render->add_flag("--dry-run", dry_run);

  auto* metrics = app.add_subcommand("metrics", "Length, components and MST cost of a wire");
  metrics->add_option("--wire", wire_path)->required();
  metrics->add_option("--threshold", threshold, "Width threshold (default 2% of the width range)");

  auto* validate = app.add_subcommand("validate-projection", "Projection error per subdivision level as CSV");
  validate->add_option("--wire", wire_path, "Wire file (default: canonical helix)");
  validate->add_option("--camera", camera_path, "Camera file (default: canonical camera)");
  validate->add_option("--levels", levels, "Comma-separated subdivision counts");
  validate->add_option("--out", out, "CSV file (default: stdout)");

  auto* svg = app.add_subcommand("export-svg", "Projected wire as SVG paths");
  svg->add_option("--wire", wire_path)->required();
  svg->add_option("--camera", camera_path)->required();
  svg->add_option("--out", out)->required();
  svg->add_option("--epsilon-px", epsilon_px);

  auto* mesh = app.add_subcommand("export-mesh", "Watertight tube mesh as OBJ");
  mesh->add_option("--wire", wire_path)->required();
  mesh->add_option("--out", out)->required();
  mesh->add_option("--sides", sides)->check(CLI::Range(3, 1024));
  mesh->add_option("--samples", samples)->check(CLI::Range(2, 1 << 20));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), kInputError);
  }

  try {
    if (*init) return cmd_init(common);
    if (*fit) return cmd_fit(common);
    if (*render) return cmd_render(wire_path, camera_path, out, epsilon_px, depth_mesh, normalize_mesh, dry_run);
    if (*metrics) return cmd_metrics(wire_path, threshold);
    if (*validate) return cmd_validate_projection(wire_path, camera_path, levels, out);
    if (*svg) return cmd_export_svg(wire_path, camera_path, out, epsilon_px);
    if (*mesh) return cmd_export_mesh(wire_path, out, sides, samples);
  } catch (const InputError& e) {
    return report("input", e.what(), kInputError);
  } catch (const BridgeError& e) {
    return report(std::string("bridge_") + bridge_kind_name(e.kind()), e.what(), kBridgeError);
  } catch (const ClipError& e) {
    return report("clip", e.what(), kRuntimeError);
  } catch (const DomainError& e) {
    return report("domain", e.what(), kRuntimeError);
  } catch (const std::exception& e) {
    return report("runtime", e.what(), kRuntimeError);
  }
  return kRuntimeError;
}
