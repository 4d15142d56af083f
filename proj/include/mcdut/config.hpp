#pragma once

#include <cctype>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>

#include "mcdut/train/engine.hpp"

namespace mcdut::config {

using nlohmann::json;

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline json parse_toml_value(const std::string& raw, const std::string& origin, int line_no) {
  const std::string v = trim(raw);
  require(!v.empty(), ErrorKind::InvalidConfig,
          origin + ":" + std::to_string(line_no) + ": missing value");
  if (v.front() == '"') {
    require(v.size() >= 2 && v.back() == '"', ErrorKind::InvalidConfig,
            origin + ":" + std::to_string(line_no) + ": unterminated string");
    return v.substr(1, v.size() - 2);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  // integer, then float
  {
    std::istringstream is(v);
    int64_t i;
    if (is >> i && is.eof()) return i;
  }
  {
    std::istringstream is(v);
    double d;
    if (is >> d && is.eof()) return d;
  }
  fail(ErrorKind::InvalidConfig,
       origin + ":" + std::to_string(line_no) + ": cannot parse value '" + v + "'");
}

}  // namespace detail

// Declarative key-value grammar: `key = value` lines, '#' comments, optional
// [section] headers that prefix keys with "section.". Values are strings in
// double quotes, booleans, integers or floats.
inline json parse_kv_config(const std::string& text, const std::string& origin) {
  json out = json::object();
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']', ErrorKind::InvalidConfig,
              origin + ":" + std::to_string(line_no) + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::InvalidConfig,
            origin + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    require(!key.empty(), ErrorKind::InvalidConfig,
            origin + ":" + std::to_string(line_no) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    require(!out.contains(key), ErrorKind::InvalidConfig,
            origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    out[key] = detail::parse_toml_value(line.substr(eq + 1), origin, line_no);
  }
  return out;
}

// Full run description: the training configuration plus everything the CLI
// needs to reproduce a run from its archived config.
struct RunConfig {
  train::TrainConfig train;
  std::string dataset;  // preset name, informational
  std::string data_root;
  std::string out_dir = "runs/default";
  int64_t checkpoint_interval = 25;  // epochs
  std::string extractor = "randproj";
  uint64_t extractor_seed = 0;

  void validate() const { train.validate(); }
};

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    json j;
    train::to_json(j, train::TrainConfig{});
    for (const auto& [key, value] : j.items()) k.insert(key);
    for (const char* extra : {"dataset", "data_root", "out_dir", "checkpoint_interval", "extractor",
                              "extractor_seed"})
      k.insert(extra);
    return k;
  }();
  return keys;
}

inline void to_json(json& j, const RunConfig& c) {
  train::to_json(j, c.train);
  j["dataset"] = c.dataset;
  j["data_root"] = c.data_root;
  j["out_dir"] = c.out_dir;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["extractor"] = c.extractor;
  j["extractor_seed"] = c.extractor_seed;
}

inline void from_json(const json& j, RunConfig& c) {
  for (const auto& [key, value] : j.items())
    require(known_config_keys().count(key) > 0, ErrorKind::InvalidConfig,
            "unknown config key: " + key);
  train::from_json(j, c.train);
  RunConfig d;
  c.dataset = j.value("dataset", d.dataset);
  c.data_root = j.value("data_root", d.data_root);
  c.out_dir = j.value("out_dir", d.out_dir);
  c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
  c.extractor = j.value("extractor", d.extractor);
  c.extractor_seed = j.value("extractor_seed", d.extractor_seed);
}

// Applies the key/value overlay from a config file on top of `base`.
inline RunConfig apply_overlay(const RunConfig& base, const json& overlay) {
  json merged;
  to_json(merged, base);
  for (const auto& [key, value] : overlay.items()) {
    require(known_config_keys().count(key) > 0, ErrorKind::InvalidConfig,
            "unknown config key: " + key);
    merged[key] = value;
  }
  RunConfig out;
  from_json(merged, out);
  return out;
}

// Loads .toml (key-value grammar) or .json config files.
inline RunConfig load_run_config(const std::string& path, const RunConfig& base = {}) {
  std::ifstream is(path);
  require(is.good(), ErrorKind::Io, "cannot open config file: " + path);
  std::stringstream buffer;
  buffer << is.rdbuf();
  json overlay;
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    try {
      overlay = json::parse(buffer.str());
    } catch (const json::exception& e) {
      fail(ErrorKind::InvalidConfig, path + ": " + e.what());
    }
  } else {
    overlay = parse_kv_config(buffer.str(), path);
  }
  return apply_overlay(base, overlay);
}

inline void archive_resolved_config(const RunConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / "config.resolved.json").string();
  std::ofstream os(path);
  require(os.good(), ErrorKind::Io, "cannot write " + path);
  json j;
  to_json(j, cfg);
  os << j.dump(2) << "\n";
}

}  // namespace mcdut::config
