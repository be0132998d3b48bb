// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>

#include "semhtr/encoder.hpp"

namespace semhtr {

/// Two linear maps with a ReLU between them: S = W2 relu(W1 X + b1) + b2,
/// where X is the row-major flattening of the feature sequence.
template <typename T>
class SemanticHead {
 public:
  SemanticHead() = default;
  SemanticHead(nn::ParameterStore<T>& store, const std::string& name, int seq_len, int depth, int hidden,
               int embedding_dim, std::mt19937_64& rng)
      : seq_len_(seq_len), depth_(depth),
        fc1_(store, name + ".fc1", seq_len * depth, hidden, rng),
        fc2_(store, name + ".fc2", hidden, embedding_dim, rng) {}

  int embedding_dim() const { return fc2_.out_features(); }
  int hidden() const { return fc1_.out_features(); }
  const nn::Linear<T>& first() const { return fc1_; }
  const nn::Linear<T>& second() const { return fc2_; }

  /// [N, D_e]
  Tensor<T> operator()(const FeatureSequence<T>& h) const {
    if (h.length != seq_len_ || h.depth != depth_) {
      throw ShapeError("predict_semantics: expected feature sequence " + std::to_string(seq_len_) + "x" +
                       std::to_string(depth_) + ", got " + std::to_string(h.length) + "x" + std::to_string(h.depth));
    }
    return predict(h.flattened());
  }

  /// X: [N, K] already flattened.
  Tensor<T> predict(const Tensor<T>& x) const { return fc2_(ops::relu(fc1_(x))); }

 private:
  int seq_len_ = 0, depth_ = 0;
  nn::Linear<T> fc1_, fc2_;
};

/// 1 - cos(s, e) for plain vectors; throws DegenerateError on a zero-norm input.
template <typename T>
T cosine_embedding_loss(std::span<const T> s, std::span<const T> e) {
  if (s.size() != e.size()) throw ShapeError("cosine_embedding_loss: dimension mismatch");
  double dot = 0, ss = 0, ee = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    dot += static_cast<double>(s[i]) * e[i];
    ss += static_cast<double>(s[i]) * s[i];
    ee += static_cast<double>(e[i]) * e[i];
  }
  if (std::sqrt(ss) < 1e-12 || std::sqrt(ee) < 1e-12) {
    throw DegenerateError("cosine_embedding_loss: zero-norm vector");
  }
  return static_cast<T>(1.0 - dot / (std::sqrt(ss) * std::sqrt(ee)));
}

template <typename T>
T cosine_similarity(std::span<const T> a, std::span<const T> b) {
  return T(1) - cosine_embedding_loss(a, b);
}

}  // namespace semhtr
