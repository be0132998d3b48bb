// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "semhtr/nn.hpp"

namespace semhtr {

struct Stride {
  int h = 1;
  int w = 1;
};

/// Residual trunk + stacked bidirectional LSTM.
///
/// The stem convolution is followed by one residual stage per entry of
/// `stage_channels`; `stem_stride` and `stage_strides` together must reduce
/// the input height to exactly 1.
struct EncoderConfig {
  int input_h = 64;
  int input_w = 256;
  int stem_channels = 32;
  Stride stem_stride{2, 1};
  std::vector<int> stage_channels{32, 64, 128, 256, 512};
  std::vector<int> stage_blocks{3, 4, 6, 6, 3};
  std::vector<Stride> stage_strides{{2, 2}, {2, 2}, {2, 1}, {2, 1}, {2, 1}};
  int recurrent_layers = 2;
  int recurrent_hidden = 256;

  int conv_layers() const {
    int n = 1;
    for (int b : stage_blocks) n += 2 * b;
    return n;
  }

  int sequence_length() const {
    int w = input_w;
    auto down = [](int x, int s) { return (x - 1) / s + 1; };
    w = down(w, stem_stride.w);
    for (const auto& s : stage_strides) w = down(w, s.w);
    return w;
  }

  int feature_depth() const { return 2 * recurrent_hidden; }

  void validate() const {
    if (stage_channels.size() != stage_blocks.size() || stage_channels.size() != stage_strides.size()) {
      throw ConfigError("encoder: stage_channels, stage_blocks and stage_strides must have equal length");
    }
    int h = stem_stride.h;
    for (const auto& s : stage_strides) h *= s.h;
    if (h != input_h) {
      throw ConfigError("encoder: product of height strides (" + std::to_string(h) + ") must equal input height " +
                        std::to_string(input_h));
    }
    if (recurrent_layers < 1 || recurrent_hidden < 1) throw ConfigError("encoder: recurrent stack must be non-empty");
  }
};

/// Encoder output h = (h_1..h_L) stored batch-major as [N*L, C].
template <typename T>
struct FeatureSequence {
  Tensor<T> values;
  int batch = 0;
  int length = 0;
  int depth = 0;

  /// Row-major (L, C) flattening per image: [N, L*C].
  Tensor<T> flattened() const { return ops::reshape(values, {batch, length * depth}); }
};

template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(nn::ParameterStore<T>& store, const std::string& name, int in, int out, Stride stride,
                std::mt19937_64& rng)
      : conv1_(store, name + ".conv1", in, out, 3, stride.h, stride.w, rng),
        bn1_(store, name + ".bn1", out),
        conv2_(store, name + ".conv2", out, out, 3, 1, 1, rng),
        bn2_(store, name + ".bn2", out) {
    if (in != out || stride.h != 1 || stride.w != 1) {
      shortcut_ = nn::Conv2d<T>(store, name + ".shortcut", in, out, 1, stride.h, stride.w, rng);
      shortcut_bn_ = nn::BatchNorm2d<T>(store, name + ".shortcut_bn", out);
      has_shortcut_ = true;
    }
  }

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    auto y = ops::relu(bn1_(conv1_(x), training));
    y = bn2_(conv2_(y), training);
    auto skip = has_shortcut_ ? shortcut_bn_(shortcut_(x), training) : x;
    return ops::relu(ops::add(y, skip));
  }

 private:
  nn::Conv2d<T> conv1_;
  nn::BatchNorm2d<T> bn1_;
  nn::Conv2d<T> conv2_;
  nn::BatchNorm2d<T> bn2_;
  nn::Conv2d<T> shortcut_;
  nn::BatchNorm2d<T> shortcut_bn_;
  bool has_shortcut_ = false;
};

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(nn::ParameterStore<T>& store, const std::string& name, const EncoderConfig& config, std::mt19937_64& rng)
      : config_(config) {
    config.validate();
    stem_ = nn::Conv2d<T>(store, name + ".stem", 1, config.stem_channels, 3, config.stem_stride.h,
                          config.stem_stride.w, rng);
    stem_bn_ = nn::BatchNorm2d<T>(store, name + ".stem_bn", config.stem_channels);
    int channels = config.stem_channels;
    for (std::size_t s = 0; s < config.stage_channels.size(); ++s) {
      for (int b = 0; b < config.stage_blocks[s]; ++b) {
        blocks_.emplace_back(store, name + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b), channels,
                             config.stage_channels[s], b == 0 ? config.stage_strides[s] : Stride{1, 1}, rng);
        channels = config.stage_channels[s];
      }
    }
    for (int l = 0; l < config.recurrent_layers; ++l) {
      const std::string p = name + ".rnn" + std::to_string(l);
      forward_.emplace_back(store, p + ".fwd", channels, config.recurrent_hidden, false, rng);
      backward_.emplace_back(store, p + ".bwd", channels, config.recurrent_hidden, true, rng);
      channels = 2 * config.recurrent_hidden;
    }
  }

  const EncoderConfig& config() const { return config_; }

  /// images: [N, 1, input_h, input_w] normalized to [-1, 1].
  FeatureSequence<T> operator()(const Tensor<T>& images, bool training) {
    const Shape expected{images.rank() == 4 ? images.dim(0) : 0, 1, config_.input_h, config_.input_w};
    if (images.shape() != expected) {
      throw ShapeError("encode: expected input [N, 1, " + std::to_string(config_.input_h) + ", " +
                       std::to_string(config_.input_w) + "], got " + to_string(images.shape()));
    }
    const int n = images.dim(0);
    auto x = ops::relu(stem_bn_(stem_(images), training));
    for (auto& block : blocks_) x = block(x, training);
    const int steps = x.dim(3);
    auto seq = ops::map_to_sequence(x);
    for (std::size_t l = 0; l < forward_.size(); ++l) {
      seq = ops::concat_cols<T>({forward_[l](seq, steps, n), backward_[l](seq, steps, n)});
    }
    return {ops::swap_leading(seq, steps, n), n, steps, seq.dim(1)};
  }

 private:
  EncoderConfig config_;
  nn::Conv2d<T> stem_;
  nn::BatchNorm2d<T> stem_bn_;
  std::vector<ResidualBlock<T>> blocks_;
  std::vector<nn::LstmLayer<T>> forward_, backward_;
};

}  // namespace semhtr
