// SPDX-License-Identifier: Apache-2.0
//
// Training configuration and its flat "key = value" text form. Lines starting
// with '#' are comments. The `model` key selects a preset (toy or standard)
// that the architecture keys then override, regardless of line order.
#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "semhtr/image.hpp"
#include "semhtr/model.hpp"

namespace semhtr {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 64;
  double learning_rate = 1.0;
  double rho = 0.95;
  double eps = 1e-8;
  double lambda = 1.0;
  double grad_clip = 5.0;
  int beam_width = 5;
  int val_beam_width = 1;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;
  bool augment = true;
  AugmentSettings augmentation;
  bool keep_epoch_checkpoints = false;
  double stop_val_wer = -1.0;  // negative: run every epoch
  std::string preset = "standard";
  ModelConfig model = ModelConfig::standard();

  void validate() const;
  void set(const std::string& key, const std::string& value);
  /// Every key with its current value; `from_map(to_map())` round-trips.
  std::map<std::string, std::string> to_map() const;
  static TrainConfig from_map(const std::map<std::string, std::string>& values);
  static std::vector<std::string> keys();
};

namespace config_detail {

inline std::string show(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::vector<int> to_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(key, std::string(unicode::trim(item))));
  if (out.empty()) throw ConfigError("config key '" + key + "': expected a comma-separated list");
  return out;
}

inline std::string show(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define SEMHTR_FIELD(member, parse, print)                                                          \
  Field {                                                                                           \
    [](TrainConfig& c, const std::string& k, const std::string& v) { c.member = parse(k, v); },     \
        [](const TrainConfig& c) { return print(c.member); }                                        \
  }

inline std::string show_int(int v) { return std::to_string(v); }
inline std::string show_u64(std::uint64_t v) { return std::to_string(v); }
inline std::string show_bool(bool v) { return v ? "true" : "false"; }

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"epochs", SEMHTR_FIELD(epochs, to_int, show_int)},
      {"batch_size", SEMHTR_FIELD(batch_size, to_int, show_int)},
      {"learning_rate", SEMHTR_FIELD(learning_rate, to_double, show)},
      {"rho", SEMHTR_FIELD(rho, to_double, show)},
      {"eps", SEMHTR_FIELD(eps, to_double, show)},
      {"lambda", SEMHTR_FIELD(lambda, to_double, show)},
      {"grad_clip", SEMHTR_FIELD(grad_clip, to_double, show)},
      {"beam_width", SEMHTR_FIELD(beam_width, to_int, show_int)},
      {"val_beam_width", SEMHTR_FIELD(val_beam_width, to_int, show_int)},
      {"seed", SEMHTR_FIELD(seed, to_u64, show_u64)},
      {"val_fraction", SEMHTR_FIELD(val_fraction, to_double, show)},
      {"augment", SEMHTR_FIELD(augment, to_bool, show_bool)},
      {"aug_p_affine", SEMHTR_FIELD(augmentation.p_affine, to_double, show)},
      {"aug_rotation", SEMHTR_FIELD(augmentation.max_rotation_deg, to_double, show)},
      {"aug_shear", SEMHTR_FIELD(augmentation.max_shear, to_double, show)},
      {"aug_scale_min", SEMHTR_FIELD(augmentation.min_scale, to_double, show)},
      {"aug_scale_max", SEMHTR_FIELD(augmentation.max_scale, to_double, show)},
      {"aug_p_elastic", SEMHTR_FIELD(augmentation.p_elastic, to_double, show)},
      {"aug_elastic_alpha", SEMHTR_FIELD(augmentation.elastic_alpha, to_double, show)},
      {"aug_elastic_sigma", SEMHTR_FIELD(augmentation.elastic_sigma, to_double, show)},
      {"aug_p_brightness", SEMHTR_FIELD(augmentation.p_brightness, to_double, show)},
      {"aug_brightness", SEMHTR_FIELD(augmentation.max_brightness, to_double, show)},
      {"aug_p_contrast", SEMHTR_FIELD(augmentation.p_contrast, to_double, show)},
      {"aug_contrast_min", SEMHTR_FIELD(augmentation.min_contrast, to_double, show)},
      {"aug_contrast_max", SEMHTR_FIELD(augmentation.max_contrast, to_double, show)},
      {"keep_epoch_checkpoints", SEMHTR_FIELD(keep_epoch_checkpoints, to_bool, show_bool)},
      {"stop_val_wer", SEMHTR_FIELD(stop_val_wer, to_double, show)},
      {"use_attention", SEMHTR_FIELD(model.decoder.use_attention, to_bool, show_bool)},
      {"semantic_init", SEMHTR_FIELD(model.decoder.semantic_init, to_bool, show_bool)},
      {"use_rectifier", SEMHTR_FIELD(model.use_rectifier, to_bool, show_bool)},
      {"max_len", SEMHTR_FIELD(model.decoder.max_len, to_int, show_int)},
      {"decoder_hidden", SEMHTR_FIELD(model.decoder.hidden, to_int, show_int)},
      {"attention_dim", SEMHTR_FIELD(model.decoder.attention, to_int, show_int)},
      {"token_embedding", SEMHTR_FIELD(model.decoder.embedding, to_int, show_int)},
      {"semantic_hidden", SEMHTR_FIELD(model.semantic_hidden, to_int, show_int)},
      {"stem_channels", SEMHTR_FIELD(model.encoder.stem_channels, to_int, show_int)},
      {"stage_channels", SEMHTR_FIELD(model.encoder.stage_channels, to_ints, show)},
      {"stage_blocks", SEMHTR_FIELD(model.encoder.stage_blocks, to_ints, show)},
      {"rnn_layers", SEMHTR_FIELD(model.encoder.recurrent_layers, to_int, show_int)},
      {"rnn_hidden", SEMHTR_FIELD(model.encoder.recurrent_hidden, to_int, show_int)},
      {"control_points", SEMHTR_FIELD(model.rectifier.control_points, to_int, show_int)},
      {"loc_channels", SEMHTR_FIELD(model.rectifier.loc_channels, to_ints, show)},
      {"loc_hidden", SEMHTR_FIELD(model.rectifier.loc_hidden, to_int, show_int)},
  };
  return table;
}

#undef SEMHTR_FIELD

}  // namespace config_detail

inline void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "model") {
    if (value == "toy") {
      model = ModelConfig::toy();
    } else if (value == "standard") {
      model = ModelConfig::standard();
    } else {
      throw ConfigError("config key 'model': expected toy or standard, got '" + value + "'");
    }
    preset = value;
    return;
  }
  const auto& table = config_detail::fields();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

inline std::map<std::string, std::string> TrainConfig::to_map() const {
  std::map<std::string, std::string> out{{"model", preset}};
  for (const auto& [k, f] : config_detail::fields()) out[k] = f.get(*this);
  return out;
}

inline std::vector<std::string> TrainConfig::keys() {
  std::vector<std::string> out{"model"};
  for (const auto& [k, f] : config_detail::fields()) out.push_back(k);
  return out;
}

inline TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& values) {
  TrainConfig c;
  if (auto it = values.find("model"); it != values.end()) c.set("model", it->second);
  for (const auto& [k, v] : values)
    if (k != "model") c.set(k, v);
  c.validate();
  return c;
}

inline void TrainConfig::validate() const {
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("config: ") + what);
  };
  positive(epochs >= 1, "epochs must be >= 1");
  positive(batch_size >= 1, "batch_size must be >= 1");
  positive(learning_rate > 0, "learning_rate must be > 0");
  positive(rho > 0 && rho < 1, "rho must be in (0, 1)");
  positive(eps > 0, "eps must be > 0");
  positive(lambda >= 0, "lambda must be >= 0");
  positive(grad_clip > 0, "grad_clip must be > 0");
  positive(beam_width >= 1 && val_beam_width >= 1, "beam widths must be >= 1");
  positive(val_fraction >= 0 && val_fraction < 1, "val_fraction must be in [0, 1)");
  positive(model.decoder.max_len >= 1, "max_len must be >= 1");
  model.encoder.validate();
}

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Raw "key = value" entries in file order.
inline std::vector<ConfigEntry> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::vector<ConfigEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = unicode::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    out.push_back({std::string(unicode::trim(body.substr(0, eq))), std::string(unicode::trim(body.substr(eq + 1))),
                   line_no});
  }
  return out;
}

/// Training keys of a config file. Duplicate keys: the last one wins.
inline std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  for (const auto& e : read_key_values(path)) {
    if (e.key != "model" && !config_detail::fields().count(e.key)) {
      throw ConfigError(path.string() + ":" + std::to_string(e.line) + ": unknown config key '" + e.key + "'");
    }
    out[e.key] = e.value;
  }
  return out;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  return TrainConfig::from_map(read_config_file(path));
}

inline std::string format_config(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : c.to_map()) out += k + " = " + v + "\n";
  return out;
}

}  // namespace semhtr
