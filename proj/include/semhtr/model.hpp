// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <vector>

#include "semhtr/decoder.hpp"
#include "semhtr/encoder.hpp"
#include "semhtr/rectify.hpp"
#include "semhtr/semantic.hpp"

namespace semhtr {

struct ModelConfig {
  RectifierConfig rectifier;
  EncoderConfig encoder;
  DecoderConfig decoder;
  int semantic_hidden = 512;
  int embedding_dim = 300;
  bool use_rectifier = true;

  /// Full-size network.
  static ModelConfig standard() { return {}; }

  /// Narrow network for CPU-scale experiments; same topology, fewer channels.
  static ModelConfig toy() {
    ModelConfig c;
    c.rectifier.loc_channels = {8, 16, 16, 32};
    c.rectifier.loc_hidden = 32;
    c.encoder.stem_channels = 8;
    c.encoder.stage_channels = {8, 16, 32, 32, 64};
    c.encoder.stage_blocks = {1, 1, 1, 1, 1};
    c.encoder.recurrent_hidden = 32;
    c.semantic_hidden = 64;
    c.embedding_dim = 32;
    c.decoder.hidden = 64;
    c.decoder.attention = 64;
    c.decoder.embedding = 32;
    return c;
  }
};

template <typename T>
struct ForwardResult {
  FeatureSequence<T> features;
  Tensor<T> semantics;  // [N, D_e]
};

/// Rectifier -> encoder -> semantic head, with the decoder on top.
template <typename T>
class Recognizer {
 public:
  Recognizer(const ModelConfig& config, int vocab_size, std::uint64_t seed) : config_(config), vocab_(vocab_size) {
    config_.encoder.validate();
    std::mt19937_64 rng(seed);
    const auto& e = config_.encoder;
    if (config_.use_rectifier) {
      rectifier_ = Rectifier<T>(store_, "rectifier", config_.rectifier, e.input_h, e.input_w, rng);
    }
    encoder_ = Encoder<T>(store_, "encoder", e, rng);
    semantic_ = SemanticHead<T>(store_, "semantic", e.sequence_length(), e.feature_depth(), config_.semantic_hidden,
                                config_.embedding_dim, rng);
    decoder_ = AttentionDecoder<T>(store_, "decoder", config_.decoder, vocab_size, e.feature_depth(),
                                   config_.embedding_dim, rng);
  }

  Recognizer(const Recognizer&) = delete;
  Recognizer& operator=(const Recognizer&) = delete;

  const ModelConfig& config() const { return config_; }
  int vocab_size() const { return vocab_; }
  nn::ParameterStore<T>& store() { return store_; }
  const nn::ParameterStore<T>& store() const { return store_; }
  const Rectifier<T>& rectifier() const { return rectifier_; }
  Encoder<T>& encoder() { return encoder_; }
  const SemanticHead<T>& semantic_head() const { return semantic_; }
  const AttentionDecoder<T>& decoder() const { return decoder_; }

  /// images: [N, 1, H, W] normalized.
  ForwardResult<T> forward(const Tensor<T>& images, bool training) {
    auto x = config_.use_rectifier ? rectifier_(images) : images;
    auto h = encoder_(x, training);
    auto s = semantic_(h);
    return {std::move(h), std::move(s)};
  }

  /// Best hypothesis per image; width 1 is greedy decoding.
  std::vector<Hypothesis> recognize(const Tensor<T>& images, int beam_width, int max_len = -1) {
    NoGradGuard guard;
    auto out = forward(images, false);
    std::vector<Hypothesis> result;
    for (int i = 0; i < out.features.batch; ++i) {
      if (beam_width <= 1) {
        result.push_back(decoder_.greedy(out.features, out.semantics, i, max_len));
      } else {
        result.push_back(decoder_.beam_search(out.features, out.semantics, i, beam_width, max_len).front());
      }
    }
    return result;
  }

 private:
  ModelConfig config_;
  int vocab_ = 0;
  nn::ParameterStore<T> store_;
  Rectifier<T> rectifier_;
  Encoder<T> encoder_;
  SemanticHead<T> semantic_;
  AttentionDecoder<T> decoder_;
};

}  // namespace semhtr
