#pragma once

// Run configuration in a TOML subset: `key = value` pairs, `[table]` and
// `[[array-of-tables]]` headers, `#` comments. Values are strings, numbers,
// booleans and (possibly nested, possibly multi-line) arrays.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wire4d/error.hpp"
#include "wire4d/raster.hpp"
#include "wire4d/spline.hpp"

namespace wire4d {

struct TomlValue {
  enum class Type { Number, Bool, String, Array };
  Type type = Type::Number;
  double number = 0.0;
  bool integer = false;
  bool boolean = false;
  std::string string;
  std::vector<TomlValue> array;
};

struct TomlTable {
  std::string name;
  std::map<std::string, TomlValue> values;
  std::map<std::string, int> lines;
};

struct TomlDocument {
  TomlTable root;
  std::map<std::string, TomlTable> tables;
  std::map<std::string, std::vector<TomlTable>> arrays;
};

namespace detail {

class TomlParser {
 public:
  TomlParser(std::string text, std::string source) : text_(std::move(text)), source_(std::move(source)) {}

  TomlDocument parse() {
    TomlDocument doc;
    doc.root.name = "";
    TomlTable* current = &doc.root;
    std::set<std::string> seen_tables;
    while (true) {
      skip_blank_lines();
      if (at_end()) break;
      if (peek() == '[') {
        const bool array = text_.compare(pos_, 2, "[[") == 0;
        pos_ += array ? 2 : 1;
        skip_inline_space();
        const std::string name = parse_key();
        skip_inline_space();
        if (!consume(array ? "]]" : "]")) fail("malformed table header");
        end_of_line();
        if (array) {
          auto& list = doc.arrays[name];
          list.push_back(TomlTable{name, {}, {}});
          current = &list.back();
        } else {
          if (!seen_tables.insert(name).second) fail("table [" + name + "] defined twice");
          current = &doc.tables[name];
          current->name = name;
        }
        continue;
      }
      const int line = line_;
      const std::string key = parse_key();
      skip_inline_space();
      if (!consume("=")) fail("expected '=' after key '" + key + "'");
      skip_inline_space();
      TomlValue value = parse_value();
      end_of_line();
      if (current->values.count(key)) fail("duplicate key '" + key + "'");
      current->values[key] = std::move(value);
      current->lines[key] = line;
    }
    return doc;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw InputError(source_ + ":" + std::to_string(line_) + ": " + why);
  }
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return at_end() ? '\0' : text_[pos_]; }
  bool consume(const std::string& s) {
    if (text_.compare(pos_, s.size(), s) != 0) return false;
    pos_ += s.size();
    return true;
  }
  void skip_inline_space() {
    while (!at_end() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) ++pos_;
  }
  void skip_comment() {
    if (peek() == '#') {
      while (!at_end() && peek() != '\n') ++pos_;
    }
  }
  void skip_blank_lines() {
    while (true) {
      skip_inline_space();
      skip_comment();
      if (peek() == '\n') {
        ++pos_;
        ++line_;
        continue;
      }
      return;
    }
  }
  // Whitespace, comments and newlines inside arrays.
  void skip_array_space() { skip_blank_lines(); }
  void end_of_line() {
    skip_inline_space();
    skip_comment();
    if (at_end()) return;
    if (peek() != '\n') fail("unexpected text after value");
    ++pos_;
    ++line_;
  }
  std::string parse_key() {
    if (peek() == '"') return parse_string();
    const std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++pos_;
    if (pos_ == start) fail("expected a key");
    return text_.substr(start, pos_ - start);
  }
  std::string parse_string() {
    ++pos_;  // opening quote
    std::string out;
    while (true) {
      if (at_end() || peek() == '\n') fail("unterminated string");
      const char c = text_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      if (at_end()) fail("unterminated escape");
      const char e = text_[pos_++];
      switch (e) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        default: fail(std::string("unsupported escape \\") + e);
      }
    }
    return out;
  }
  std::string parse_literal_string() {
    const std::size_t start = ++pos_;
    while (!at_end() && peek() != '\'' && peek() != '\n') ++pos_;
    if (at_end() || peek() != '\'') fail("unterminated string");
    return text_.substr(start, pos_++ - start);
  }
  TomlValue parse_value() {
    TomlValue v;
    const char c = peek();
    if (c == '"' || c == '\'') {
      v.type = TomlValue::Type::String;
      v.string = c == '"' ? parse_string() : parse_literal_string();
      return v;
    }
    if (c == '[') {
      ++pos_;
      v.type = TomlValue::Type::Array;
      skip_array_space();
      while (peek() != ']') {
        v.array.push_back(parse_value());
        skip_array_space();
        if (peek() == ',') {
          ++pos_;
          skip_array_space();
        } else if (peek() != ']') {
          fail("expected ',' or ']' in array");
        }
      }
      ++pos_;
      return v;
    }
    if (c == '{') fail("inline tables are not supported");
    if (consume("true")) {
      v.type = TomlValue::Type::Bool;
      v.boolean = true;
      return v;
    }
    if (consume("false")) {
      v.type = TomlValue::Type::Bool;
      return v;
    }
    const std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || std::string("+-._").find(peek()) != std::string::npos)) ++pos_;
    std::string tok = text_.substr(start, pos_ - start);
    std::erase(tok, '_');
    if (tok.empty()) fail("expected a value");
    std::size_t used = 0;
    try {
      v.number = std::stod(tok, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != tok.size() || !std::isfinite(v.number)) fail("invalid value '" + tok + "'");
    v.integer = tok.find_first_of(".eE") == std::string::npos;
    return v;
  }

  std::string text_;
  std::string source_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

}  // namespace detail

inline TomlDocument parse_toml(const std::string& text, const std::string& source = "<config>") {
  return detail::TomlParser(text, source).parse();
}

// ---------------------------------------------------------------------------
// Typed access with unknown-key detection

class TableReader {
 public:
  TableReader(const TomlTable& table, std::string source) : table_(table), source_(std::move(source)) {}

  std::optional<TomlValue> get(const std::string& key) {
    used_.insert(key);
    const auto it = table_.values.find(key);
    if (it == table_.values.end()) return std::nullopt;
    return it->second;
  }

  double number(const std::string& key, double fallback) {
    const auto v = get(key);
    if (!v) return fallback;
    if (v->type != TomlValue::Type::Number) fail(key, "expected a number");
    return v->number;
  }
  long integer(const std::string& key, long fallback) {
    const auto v = get(key);
    if (!v) return fallback;
    if (v->type != TomlValue::Type::Number || !v->integer) fail(key, "expected an integer");
    return static_cast<long>(v->number);
  }
  bool boolean(const std::string& key, bool fallback) {
    const auto v = get(key);
    if (!v) return fallback;
    if (v->type != TomlValue::Type::Bool) fail(key, "expected true or false");
    return v->boolean;
  }
  std::string string(const std::string& key, const std::string& fallback) {
    const auto v = get(key);
    if (!v) return fallback;
    if (v->type != TomlValue::Type::String) fail(key, "expected a string");
    return v->string;
  }
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    const auto v = get(key);
    if (!v) return fallback;
    if (v->type != TomlValue::Type::Array) fail(key, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v->array) {
      if (e.type != TomlValue::Type::Number) fail(key, "expected an array of numbers");
      out.push_back(e.number);
    }
    return out;
  }
  Eigen::Vector3d vec3(const std::string& key, const Eigen::Vector3d& fallback) {
    const auto xs = numbers(key, {fallback.x(), fallback.y(), fallback.z()});
    if (xs.size() != 3) fail(key, "expected 3 numbers");
    return {xs[0], xs[1], xs[2]};
  }
  bool has(const std::string& key) const { return table_.values.count(key) > 0; }

  void reject_unknown() const {
    for (const auto& [key, _] : table_.values) {
      if (!used_.count(key)) fail(key, "unknown key");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    const auto it = table_.lines.find(key);
    const std::string where = it == table_.lines.end() ? "" : ":" + std::to_string(it->second);
    const std::string table = table_.name.empty() ? "" : " in [" + table_.name + "]";
    throw InputError(source_ + where + ": '" + key + "'" + table + ": " + why);
  }

 private:
  const TomlTable& table_;
  std::string source_;
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Run configuration

struct InitConfig {
  std::string kind = "sphere";  // sphere | silhouette_cone | polyline | wire
  double radius = 1.0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  int view = 0;                        // cone view index
  std::optional<std::pair<double, double>> depth_range;
  std::filesystem::path path;          // polyline or wire file
  long sample_count = 0;               // 0: one sample per control
};

struct ViewConfig {
  std::string name;
  std::filesystem::path camera_file;
  // Inline camera when no file is given.
  Eigen::Vector3d eye = Eigen::Vector3d(0, 0, -3);
  Eigen::Vector3d target = Eigen::Vector3d::Zero();
  Eigen::Vector3d up = Eigen::Vector3d(0, 1, 0);
  double focal = 0.0;  // 0: image width
  int width = 128;
  int height = 128;
  std::filesystem::path mask;
  bool invert_mask = false;
  std::filesystem::path depth_mesh;
  bool normalize_mesh = false;
  std::string guidance_id;
};

struct RunConfig {
  long control_count = 150;
  long iterations = 900;
  std::vector<long> reinit_iters{150, 300};
  long refine_iter = 600;  // negative: off
  long refine_count = 8;
  long gradient_window = 50;
  double lambda_I = 1.0;
  double lambda_G = 0.5;
  double lambda_mmse = 1.0;
  double lambda_clip = 0.0;
  double alpha = 1.0;
  double lr_position = 0.02;
  double lr_width = 0.05;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double width_min = 0.0;
  double width_max = 0.1;
  double initial_width = 0.01;
  double width_epsilon = 0.0;  // 0: 2% of the width range
  std::uint64_t seed = 0;
  double epsilon_px = 0.5;
  double aa_radius = 1.0;
  double flatten_tolerance = 0.25;
  Composite composite = Composite::Max;
  long mmse_levels = 4;
  long threads = 1;
  long render_every = 100;
  double visibility_k = 100.0;
  double visibility_b = 0.05;
  double bridge_timeout = 120.0;
  bool skip_failed_views = false;
  InitConfig init;
  std::vector<ViewConfig> views;
  std::filesystem::path base_dir;  // relative paths resolve here

  WidthClamp width_clamp() const { return {width_min, width_max}; }
  double prune_epsilon() const { return width_epsilon > 0.0 ? width_epsilon : 0.02 * (width_max - width_min); }

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.empty() || p.is_absolute() ? p : base_dir / p;
  }

  void validate() const {
    auto bad = [](const std::string& why) { throw InputError("config: " + why); };
    if (iterations < 0) bad("iterations must be >= 0");
    if (control_count < 4) bad("control_count must be >= 4");
    if (!(alpha > 0.0 && alpha <= 1.0)) bad("alpha must be in (0, 1]");
    for (long it : reinit_iters) {
      if (it < 0 || (iterations > 0 && it >= iterations)) bad("reinit_iters must lie in [0, iterations)");
    }
    if (refine_iter >= 0 && iterations > 0 && refine_iter >= iterations) bad("refine_iter must be < iterations");
    if (refine_count < 1) bad("refine_count must be >= 1");
    if (gradient_window < 1) bad("gradient_window must be >= 1");
    if (mmse_levels < 1) bad("mmse_levels must be >= 1");
    if (threads < 1) bad("threads must be >= 1");
    if (!(epsilon_px > 0.0)) bad("epsilon_px must be positive");
    if (!(aa_radius > 0.0) || !(flatten_tolerance > 0.0)) bad("raster settings must be positive");
    if (!(visibility_k > 0.0)) bad("visibility_k must be positive");
    try {
      width_clamp().validate();
    } catch (const DomainError& e) {
      bad(e.what());
    }
    if (!(initial_width > width_min && initial_width < width_max)) bad("initial_width must lie inside the width range");
    if (views.empty()) bad("at least one [[view]] is required");
    for (const auto& v : views) {
      if (v.mask.empty() && v.guidance_id.empty()) bad("view '" + v.name + "' needs a mask or a guidance_id");
      if (v.width < 1 || v.height < 1) bad("view '" + v.name + "' has an invalid size");
    }
    if (init.kind != "sphere" && init.kind != "silhouette_cone" && init.kind != "polyline" && init.kind != "wire") {
      bad("unknown init kind '" + init.kind + "'");
    }
    if (init.kind == "silhouette_cone" && (init.view < 0 || init.view >= static_cast<int>(views.size()))) {
      bad("init view index out of range");
    }
    if ((init.kind == "polyline" || init.kind == "wire") && init.path.empty()) bad("init kind '" + init.kind + "' needs a path");
  }
};

inline RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>",
                                  const std::filesystem::path& base_dir = {}) {
  const TomlDocument doc = parse_toml(text, source);
  RunConfig c;
  c.base_dir = base_dir;
  TableReader r(doc.root, source);
  c.control_count = r.integer("control_count", c.control_count);
  c.iterations = r.integer("iterations", c.iterations);
  if (const auto v = r.get("reinit_iters")) {
    if (v->type != TomlValue::Type::Array) r.fail("reinit_iters", "expected an array of integers");
    c.reinit_iters.clear();
    for (const auto& e : v->array) {
      if (e.type != TomlValue::Type::Number || !e.integer) r.fail("reinit_iters", "expected an array of integers");
      c.reinit_iters.push_back(static_cast<long>(e.number));
    }
  }
  c.refine_iter = r.integer("refine_iter", c.refine_iter);
  c.refine_count = r.integer("refine_count", c.refine_count);
  c.gradient_window = r.integer("gradient_window", c.gradient_window);
  c.lambda_I = r.number("lambda_I", c.lambda_I);
  c.lambda_G = r.number("lambda_G", c.lambda_G);
  c.lambda_mmse = r.number("lambda_mmse", c.lambda_mmse);
  c.lambda_clip = r.number("lambda_clip", c.lambda_clip);
  c.alpha = r.number("alpha", c.alpha);
  c.lr_position = r.number("lr_position", c.lr_position);
  c.lr_width = r.number("lr_width", c.lr_width);
  if (r.has("learning_rate")) c.lr_position = r.number("learning_rate", c.lr_position);
  const auto betas = r.numbers("adam_betas", {c.adam_beta1, c.adam_beta2});
  if (betas.size() != 2) r.fail("adam_betas", "expected 2 numbers");
  c.adam_beta1 = betas[0];
  c.adam_beta2 = betas[1];
  c.adam_eps = r.number("adam_eps", c.adam_eps);
  const auto range = r.numbers("width_range", {c.width_min, c.width_max});
  if (range.size() != 2) r.fail("width_range", "expected 2 numbers");
  c.width_min = range[0];
  c.width_max = range[1];
  c.initial_width = r.number("initial_width", c.initial_width);
  c.width_epsilon = r.number("width_epsilon", c.width_epsilon);
  const long seed = r.integer("seed", 0);
  if (seed < 0) r.fail("seed", "must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);
  c.epsilon_px = r.number("epsilon_px", c.epsilon_px);
  c.aa_radius = r.number("aa_radius", c.aa_radius);
  c.flatten_tolerance = r.number("flatten_tolerance", c.flatten_tolerance);
  const std::string composite = r.string("composite", "max");
  if (composite == "max") {
    c.composite = Composite::Max;
  } else if (composite == "over") {
    c.composite = Composite::Over;
  } else {
    r.fail("composite", "expected \"max\" or \"over\"");
  }
  c.mmse_levels = r.integer("mmse_levels", c.mmse_levels);
  c.threads = r.integer("threads", c.threads);
  c.render_every = r.integer("render_every", c.render_every);
  c.visibility_k = r.number("visibility_k", c.visibility_k);
  c.visibility_b = r.number("visibility_b", c.visibility_b);
  c.bridge_timeout = r.number("bridge_timeout", c.bridge_timeout);
  const std::string on_error = r.string("on_view_error", "abort");
  if (on_error != "abort" && on_error != "skip") r.fail("on_view_error", "expected \"abort\" or \"skip\"");
  c.skip_failed_views = on_error == "skip";
  r.reject_unknown();

  for (const auto& [name, table] : doc.tables) {
    if (name != "init") throw InputError(source + ": unknown table [" + name + "]");
  }
  if (const auto it = doc.tables.find("init"); it != doc.tables.end()) {
    TableReader t(it->second, source);
    c.init.kind = t.string("kind", c.init.kind);
    c.init.radius = t.number("radius", c.init.radius);
    c.init.center = t.vec3("center", c.init.center);
    c.init.view = static_cast<int>(t.integer("view", c.init.view));
    if (t.has("depth_range")) {
      const auto d = t.numbers("depth_range", {});
      if (d.size() != 2) t.fail("depth_range", "expected 2 numbers");
      c.init.depth_range = std::make_pair(d[0], d[1]);
    }
    c.init.path = t.string("path", "");
    c.init.sample_count = t.integer("sample_count", 0);
    t.reject_unknown();
  }
  for (const auto& [name, list] : doc.arrays) {
    if (name != "view") throw InputError(source + ": unknown table array [[" + name + "]]");
    for (const auto& table : list) {
      TableReader t(table, source);
      ViewConfig v;
      v.name = t.string("name", "view" + std::to_string(c.views.size()));
      v.camera_file = t.string("camera", "");
      v.eye = t.vec3("eye", v.eye);
      v.target = t.vec3("target", v.target);
      v.up = t.vec3("up", v.up);
      v.width = static_cast<int>(t.integer("width", v.width));
      v.height = static_cast<int>(t.integer("height", v.height));
      v.focal = t.number("focal", v.focal);
      v.mask = t.string("mask", "");
      v.invert_mask = t.boolean("invert_mask", false);
      v.depth_mesh = t.string("depth_mesh", "");
      v.normalize_mesh = t.boolean("normalize_mesh", false);
      v.guidance_id = t.string("guidance_id", "");
      t.reject_unknown();
      c.views.push_back(std::move(v));
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string(), path.parent_path());
}

}  // namespace wire4d
