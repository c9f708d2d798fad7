#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "evs/tensor.hpp"

namespace evs {

// Every tunable of the pipeline, readable from a key=value text file and
// overridable per key on the command line. Defaults are the desk-scale model
// with the reference training hyperparameters.
struct Config {
  // model
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::int64_t patch = 4;
  std::int64_t dim = 64;
  std::int64_t depth = 2;
  std::int64_t n_state = 16;
  std::int64_t frames = 8;        // T': frames for the spatial branch
  std::int64_t voxel_budget = 16; // K: trajectory rows for the temporal branch
  std::int64_t clips = 8;         // L: clip columns for the temporal branch
  std::int64_t micro_s = 2;       // voxel descriptor micro-binning factor
  std::int64_t conv_k = 3;
  std::string fusion = "add";     // add | concat | b-matrix | a-matrix
  std::string loss = "softmax-ce";  // softmax-ce | eq5-bce
  std::int64_t categories = 5;
  bool voxel_branch = true;       // off = frame-only ablation

  // voxel scan
  std::int64_t min_traj_length = 1;   // delta: trajectory length filter
  std::int64_t min_count = 1;         // informative cell threshold
  std::int64_t per_clip_budget = 64;  // M
  double min_similarity = -1.0;       // matching floor; -1 disables
  std::int64_t cell_px = 0;           // voxel edge in pixels; 0 = width/16
  std::int64_t cell_us = 0;           // voxel edge in microseconds; 0 = span/frames

  // training
  double lr = 0.001;
  double weight_decay = 0.0001;
  double momentum = 0.0;
  std::int64_t epochs = 30;
  std::int64_t batch_size = 8;
  double stop_top1 = 2.0;  // early stop when test top-1 reaches this; >1 disables
  std::uint64_t seed = 42;
  std::int64_t threads = 0;  // worker threads for batch gradients; 0 = hardware

  // synthetic data generation
  std::int64_t train_per_category = 200;
  std::int64_t test_per_category = 100;
  std::uint64_t duration_us = 100000;
  double rate_per_ms = 20.0;

  std::int64_t descriptor_dim() const { return micro_s * micro_s * micro_s + 2; }
  std::int64_t patch_rows() const { return height / patch; }
  std::int64_t patch_cols() const { return width / patch; }

  void validate() const {
    tensor_check(height >= 1 && width >= 1 && patch >= 1, "config: non-positive geometry");
    tensor_check(height % patch == 0 && width % patch == 0,
                 "config: height and width must be divisible by patch");
    tensor_check(dim >= 1 && n_state >= 1, "config: dim and n_state must be >= 1");
    tensor_check(depth >= 1, "config: depth must be >= 1");
    tensor_check(categories >= 2, "config: category count must be >= 2");
    tensor_check(frames >= 1 && voxel_budget >= 1 && clips >= 1,
                 "config: frames, voxel_budget, clips must be >= 1");
    tensor_check(micro_s >= 1, "config: micro_s must be >= 1");
    tensor_check(conv_k >= 1 && conv_k % 2 == 1, "config: conv_k must be odd");
    tensor_check(fusion == "add" || fusion == "concat" || fusion == "b-matrix" ||
                     fusion == "a-matrix",
                 "config: unknown fusion mode '" + fusion + "'");
    tensor_check(loss == "softmax-ce" || loss == "eq5-bce",
                 "config: unknown loss mode '" + loss + "'");
    tensor_check(min_traj_length >= 1, "config: min_traj_length must be >= 1");
    tensor_check(min_count >= 1, "config: min_count must be >= 1");
    tensor_check(per_clip_budget >= 1, "config: per_clip_budget must be >= 1");
    tensor_check(lr > 0.0, "config: lr must be positive");
    tensor_check(weight_decay >= 0.0 && momentum >= 0.0,
                 "config: weight_decay and momentum must be >= 0");
    tensor_check(epochs >= 0 && batch_size >= 1, "config: bad epochs or batch_size");
    tensor_check(train_per_category >= 1 && test_per_category >= 1,
                 "config: per-category sample counts must be >= 1");
    tensor_check(duration_us > 0 && rate_per_ms > 0.0, "config: bad generation parameters");
  }
};

namespace detail {

struct ConfigField {
  const char* key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

inline std::int64_t parse_i64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const std::int64_t r = std::stoll(v, &used);
    tensor_check(used == v.size(), "config: trailing junk in value for " + key);
    return r;
  } catch (const TensorError&) {
    throw;
  } catch (const std::exception&) {
    throw TensorError("config: bad integer for " + key + ": '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const std::uint64_t r = std::stoull(v, &used);
    tensor_check(used == v.size(), "config: trailing junk in value for " + key);
    return r;
  } catch (const TensorError&) {
    throw;
  } catch (const std::exception&) {
    throw TensorError("config: bad unsigned integer for " + key + ": '" + v + "'");
  }
}

inline double parse_f64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    tensor_check(used == v.size(), "config: trailing junk in value for " + key);
    return r;
  } catch (const TensorError&) {
    throw;
  } catch (const std::exception&) {
    throw TensorError("config: bad number for " + key + ": '" + v + "'");
  }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw TensorError("config: bad boolean for " + key + ": '" + v + "'");
}

inline std::string format_f64(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline const std::vector<ConfigField>& config_fields() {
#define EVS_I64_FIELD(name)                                                       \
  ConfigField{#name, [](Config& c, const std::string& v) { c.name = parse_i64(v, #name); }, \
              [](const Config& c) { return std::to_string(c.name); }}
#define EVS_U64_FIELD(name)                                                       \
  ConfigField{#name, [](Config& c, const std::string& v) { c.name = parse_u64(v, #name); }, \
              [](const Config& c) { return std::to_string(c.name); }}
#define EVS_F64_FIELD(name)                                                       \
  ConfigField{#name, [](Config& c, const std::string& v) { c.name = parse_f64(v, #name); }, \
              [](const Config& c) { return format_f64(c.name); }}
#define EVS_STR_FIELD(name)                                                       \
  ConfigField{#name, [](Config& c, const std::string& v) { c.name = v; },         \
              [](const Config& c) { return c.name; }}
#define EVS_BOOL_FIELD(name)                                                      \
  ConfigField{#name, [](Config& c, const std::string& v) { c.name = parse_bool(v, #name); }, \
              [](const Config& c) { return c.name ? std::string("1") : std::string("0"); }}
  static const std::vector<ConfigField> fields = {
      EVS_I64_FIELD(height),
      EVS_I64_FIELD(width),
      EVS_I64_FIELD(patch),
      EVS_I64_FIELD(dim),
      EVS_I64_FIELD(depth),
      EVS_I64_FIELD(n_state),
      EVS_I64_FIELD(frames),
      EVS_I64_FIELD(voxel_budget),
      EVS_I64_FIELD(clips),
      EVS_I64_FIELD(micro_s),
      EVS_I64_FIELD(conv_k),
      EVS_STR_FIELD(fusion),
      EVS_STR_FIELD(loss),
      EVS_I64_FIELD(categories),
      EVS_BOOL_FIELD(voxel_branch),
      EVS_I64_FIELD(min_traj_length),
      EVS_I64_FIELD(min_count),
      EVS_I64_FIELD(per_clip_budget),
      EVS_F64_FIELD(min_similarity),
      EVS_I64_FIELD(cell_px),
      EVS_I64_FIELD(cell_us),
      EVS_F64_FIELD(lr),
      EVS_F64_FIELD(weight_decay),
      EVS_F64_FIELD(momentum),
      EVS_I64_FIELD(epochs),
      EVS_I64_FIELD(batch_size),
      EVS_F64_FIELD(stop_top1),
      EVS_U64_FIELD(seed),
      EVS_I64_FIELD(threads),
      EVS_I64_FIELD(train_per_category),
      EVS_I64_FIELD(test_per_category),
      EVS_U64_FIELD(duration_us),
      EVS_F64_FIELD(rate_per_ms),
  };
#undef EVS_I64_FIELD
#undef EVS_U64_FIELD
#undef EVS_F64_FIELD
#undef EVS_STR_FIELD
#undef EVS_BOOL_FIELD
  return fields;
}

}  // namespace detail

// Applies one `key=value` assignment; unknown keys are errors.
inline void config_set(Config& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  tensor_check(eq != std::string::npos && eq > 0,
               "config: expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  for (const auto& f : detail::config_fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw TensorError("config: unknown key '" + key + "'");
}

// key=value per line; blank lines and lines starting with '#' are skipped.
inline Config parse_config(std::istream& in) {
  Config cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    try {
      config_set(cfg, line);
    } catch (const TensorError& e) {
      throw TensorError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  tensor_check(static_cast<bool>(in), "cannot open config: " + path);
  return parse_config(in);
}

inline void write_config(const Config& cfg, std::ostream& out) {
  for (const auto& f : detail::config_fields()) out << f.key << '=' << f.get(cfg) << "\n";
}

}  // namespace evs
