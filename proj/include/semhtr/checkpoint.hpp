// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint archive:
//
//   SEMHTR-CHECKPOINT 1\n
//   <metadata byte length>\n
//   <metadata JSON>\n
//   <tensor blob>
//
// The metadata holds the format version, charset (UTF-8), embedding
// dimension, config map, epoch, metrics history and one {name, shape, offset}
// record per stored tensor. `offset` counts bytes from the start of the blob;
// values are IEEE float32, little-endian, row-major.
#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "semhtr/charset.hpp"
#include "semhtr/config.hpp"
#include "semhtr/model.hpp"

namespace semhtr {

inline constexpr const char* kCheckpointMagic = "SEMHTR-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
struct LoadedModel {
  TrainConfig config;
  Charset charset;
  int embedding_dim = 0;
  int epoch = 0;
  nlohmann::json history = nlohmann::json::array();
  std::unique_ptr<Recognizer<T>> model;
};

inline ModelConfig model_config_for(const TrainConfig& config, int embedding_dim) {
  ModelConfig m = config.model;
  m.embedding_dim = embedding_dim;
  return m;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Recognizer<T>& model, const TrainConfig& config,
                     const Charset& charset, int epoch, const nlohmann::json& history) {
  nlohmann::json meta;
  meta["version"] = kCheckpointVersion;
  meta["charset"] = unicode::to_utf8(charset.symbols());
  meta["embedding_dim"] = model.config().embedding_dim;
  meta["vocab_size"] = model.vocab_size();
  meta["config"] = config.to_map();
  meta["epoch"] = epoch;
  meta["metrics"] = history;
  nlohmann::json tensors = nlohmann::json::array();
  std::string blob;
  for (const auto& e : model.store().entries()) {
    tensors.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", blob.size()}});
    for (T v : e.tensor.values()) {
      const float f = static_cast<float>(v);
      char bytes[sizeof f];
      std::memcpy(bytes, &f, sizeof f);
      blob.append(bytes, sizeof f);
    }
  }
  meta["tensors"] = tensors;
  const std::string text = meta.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << text.size() << '\n' << text << '\n';
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    out.flush();
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

template <typename T = float>
LoadedModel<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string where = "checkpoint " + path.string();
  std::string magic_line, length_line;
  if (!std::getline(in, magic_line) || !std::getline(in, length_line)) throw DataError(where + " is truncated");
  if (magic_line != std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion)) {
    throw DataError(where + ": unrecognized header '" + magic_line.substr(0, 40) + "'");
  }
  std::size_t length = 0;
  try {
    length = std::stoull(length_line);
  } catch (const std::exception&) {
    throw DataError(where + ": bad metadata length");
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (in.get() != '\n' || !in) throw DataError(where + " is truncated");
  const std::string blob{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": malformed metadata: " + e.what());
  }

  LoadedModel<T> out;
  try {
    if (meta.at("version").get<int>() != kCheckpointVersion) throw DataError(where + ": unsupported version");
    out.charset = Charset(unicode::to_code_points(meta.at("charset").get<std::string>()));
    out.embedding_dim = meta.at("embedding_dim").get<int>();
    out.config = TrainConfig::from_map(meta.at("config").get<std::map<std::string, std::string>>());
    out.epoch = meta.at("epoch").get<int>();
    out.history = meta.at("metrics");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": malformed metadata: " + e.what());
  }
  if (out.charset.empty()) throw DataError(where + ": empty charset");

  out.model = std::make_unique<Recognizer<T>>(model_config_for(out.config, out.embedding_dim), out.charset.size(),
                                              out.config.seed);
  std::map<std::string, nlohmann::json> records;
  for (const auto& t : meta.at("tensors")) records[t.at("name").get<std::string>()] = t;
  for (const auto& e : out.model->store().entries()) {
    auto it = records.find(e.name);
    if (it == records.end()) throw ShapeError(where + ": missing tensor " + e.name);
    const auto shape = it->second.at("shape").template get<Shape>();
    if (shape != e.tensor.shape()) {
      throw ShapeError(where + ": tensor " + e.name + " has shape " + to_string(shape) + ", model expects " +
                       to_string(e.tensor.shape()));
    }
    const auto offset = it->second.at("offset").template get<std::size_t>();
    auto values = e.tensor.node().value.data();
    const std::size_t n = e.tensor.values().size();
    if (offset + n * sizeof(float) > blob.size()) throw DataError(where + ": tensor data truncated");
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, blob.data() + offset + i * sizeof f, sizeof f);
      values[i] = static_cast<T>(f);
    }
    records.erase(it);
  }
  if (!records.empty()) throw ShapeError(where + ": unexpected tensor " + records.begin()->first);
  return out;
}

}  // namespace semhtr
