// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <vector>

#include "semhtr/beam.hpp"
#include "semhtr/charset.hpp"
#include "semhtr/encoder.hpp"

namespace semhtr {

struct DecoderConfig {
  int hidden = 512;
  int attention = 512;
  int embedding = 512;
  int max_len = 32;
  /// Off: context is the plain mean of the feature sequence.
  bool use_attention = true;
  /// Off: the GRU starts from a zero state instead of the semantic vector.
  bool semantic_init = true;
};

/// Feature sequence plus its precomputed attention keys U_a h_i.
template <typename T>
struct DecoderMemory {
  Tensor<T> values;  // [N*L, C]
  Tensor<T> keys;    // [N*L, A]
  int batch = 0;
  int length = 0;
};

/// Single-layer unidirectional GRU with additive attention. The step input
/// is [embedding(prev); context] and the output layer reads [state; context].
template <typename T>
class AttentionDecoder {
 public:
  struct Attention {
    Tensor<T> context;  // [N, C]
    Tensor<T> weights;  // [N, L]
  };
  struct Step {
    Tensor<T> logits;   // [N, V]
    Tensor<T> state;    // [N, H]
    Tensor<T> weights;  // [N, L]
  };

  AttentionDecoder() = default;
  AttentionDecoder(nn::ParameterStore<T>& store, const std::string& name, const DecoderConfig& config, int vocab,
                   int feature_depth, int semantic_dim, std::mt19937_64& rng)
      : config_(config), vocab_(vocab), depth_(feature_depth) {
    embed_ = store.parameter(name + ".embedding", {vocab, config.embedding},
                             nn::normal_init<T>(static_cast<std::size_t>(vocab) * config.embedding, T(0.1), rng));
    init_ = nn::Linear<T>(store, name + ".init", semantic_dim, config.hidden, rng);
    query_ = nn::Linear<T>(store, name + ".att_query", config.hidden, config.attention, rng, false);
    key_ = nn::Linear<T>(store, name + ".att_key", feature_depth, config.attention, rng);
    score_ = store.parameter(name + ".att_score", {config.attention},
                             nn::uniform_init<T>(static_cast<std::size_t>(config.attention),
                                                 T(1) / std::sqrt(static_cast<T>(config.attention)), rng));
    gru_ = nn::GruCell<T>(store, name + ".gru", config.embedding + feature_depth, config.hidden, rng);
    out_ = nn::Linear<T>(store, name + ".out", config.hidden + feature_depth, vocab, rng);
  }

  const DecoderConfig& config() const { return config_; }
  int vocab_size() const { return vocab_; }
  const nn::Linear<T>& init_projection() const { return init_; }
  const Tensor<T>& score_vector() const { return score_; }
  const nn::Linear<T>& query_projection() const { return query_; }
  const nn::Linear<T>& key_projection() const { return key_; }

  /// tanh(W_init S + b_init): [N, D_e] -> [N, H].
  Tensor<T> init_state(const Tensor<T>& semantics) const {
    require_rank(semantics, 2, "init_state");
    if (semantics.dim(1) != init_.in_features()) {
      throw ShapeError("init_state: semantic vector has dimension " + std::to_string(semantics.dim(1)) +
                       ", expected " + std::to_string(init_.in_features()));
    }
    return ops::tanh(init_(semantics));
  }

  /// Semantic initialization, or zeros when it is disabled.
  Tensor<T> initial_state(const Tensor<T>& semantics) const {
    if (config_.semantic_init) return init_state(semantics);
    return Tensor<T>::zeros({semantics.dim(0), config_.hidden});
  }

  DecoderMemory<T> prepare(const FeatureSequence<T>& h) const {
    if (h.depth != depth_) throw ShapeError("decoder: feature depth mismatch");
    DecoderMemory<T> mem{h.values, {}, h.batch, h.length};
    if (config_.use_attention) mem.keys = key_(h.values);
    return mem;
  }

  Attention attend(const Tensor<T>& state, const DecoderMemory<T>& mem) const {
    auto out = config_.use_attention
                   ? ops::additive_attention(query_(state), mem.keys, score_, mem.values, mem.length)
                   : ops::uniform_attention(mem.values, mem.batch, mem.length);
    return {ops::slice_cols(out, 0, depth_), ops::slice_cols(out, depth_, mem.length)};
  }

  Step step(const Tensor<T>& state, const std::vector<int>& prev, const DecoderMemory<T>& mem) const {
    for (int id : prev) {
      if (id < 0 || id >= vocab_) throw VocabularyError("decode_step: token id " + std::to_string(id) + " not in vocabulary");
    }
    auto att = attend(state, mem);
    auto x = ops::concat_cols<T>({ops::embedding(embed_, prev), att.context});
    auto next = gru_(x, state);
    auto logits = out_(ops::concat_cols<T>({next, att.context}));
    return {logits, next, att.weights};
  }

  /// Teacher-forced logits, time-major [T*N, V]. Each target ends with EOS;
  /// shorter targets are padded with PAD (returned in `flat_targets`).
  Tensor<T> teacher_forced(const FeatureSequence<T>& h, const Tensor<T>& semantics,
                           const std::vector<std::vector<int>>& targets, std::vector<int>* flat_targets = nullptr) const {
    if (static_cast<int>(targets.size()) != h.batch) throw ShapeError("teacher forcing: target count != batch");
    std::size_t steps = 0;
    for (const auto& t : targets) {
      if (t.empty()) throw DataError("teacher forcing: empty target sequence");
      steps = std::max(steps, t.size());
    }
    auto mem = prepare(h);
    auto state = initial_state(semantics);
    std::vector<Tensor<T>> logits;
    std::vector<int> flat;
    for (std::size_t t = 0; t < steps; ++t) {
      std::vector<int> prev(targets.size());
      for (std::size_t b = 0; b < targets.size(); ++b) {
        prev[b] = t == 0 ? Charset::kBos : (t - 1 < targets[b].size() ? targets[b][t - 1] : Charset::kPad);
        flat.push_back(t < targets[b].size() ? targets[b][t] : Charset::kPad);
      }
      auto s = step(state, prev, mem);
      logits.push_back(s.logits);
      state = s.state;
    }
    if (flat_targets) *flat_targets = std::move(flat);
    return ops::concat_rows(logits);
  }

  DecodeOptions decode_options(int max_len = -1) const {
    DecodeOptions opt;
    opt.bos_id = Charset::kBos;
    opt.eos_id = Charset::kEos;
    opt.max_len = max_len > 0 ? max_len : config_.max_len;
    opt.banned = {Charset::kPad, Charset::kBos};
    return opt;
  }

  /// Beam search for image `index` of the batch in `h`; `semantics` is [N, D_e].
  std::vector<Hypothesis> beam_search(const FeatureSequence<T>& h, const Tensor<T>& semantics, int index, int width,
                                      int max_len = -1) const {
    NoGradGuard guard;
    auto single = select(h, index);
    auto init = initial_state(ops::slice_rows(semantics, index, 1));
    const int rows = std::max(1, width);
    auto mem = prepare(repeat(single, rows));
    std::vector<DecoderMemory<T>> by_rows(static_cast<std::size_t>(rows) + 1);
    auto step_fn = [&](const std::vector<std::vector<T>>& states, const std::vector<int>& prev) {
      const int r = static_cast<int>(states.size());
      auto& m = by_rows.at(static_cast<std::size_t>(r));
      if (!m.values.defined()) {
        m = DecoderMemory<T>{ops::slice_rows(mem.values, 0, r * mem.length),
                             mem.keys.defined() ? ops::slice_rows(mem.keys, 0, r * mem.length) : Tensor<T>{}, r,
                             mem.length};
      }
      std::vector<T> flat;
      for (const auto& s : states) flat.insert(flat.end(), s.begin(), s.end());
      auto out = step(Tensor<T>::from({r, config_.hidden}, std::move(flat)), prev, m);
      StepOutput<std::vector<T>> res;
      for (int i = 0; i < r; ++i) {
        const auto row = out.logits.data().subspan(static_cast<std::size_t>(i) * vocab_, static_cast<std::size_t>(vocab_));
        auto lp = ops::log_softmax_row<T>(row);
        res.log_probs.emplace_back(lp.begin(), lp.end());
        res.states.emplace_back(out.state.values().begin() + static_cast<std::ptrdiff_t>(i) * config_.hidden,
                                out.state.values().begin() + static_cast<std::ptrdiff_t>(i + 1) * config_.hidden);
      }
      return res;
    };
    return semhtr::beam_search(std::vector<T>(init.values()), step_fn, width, decode_options(max_len));
  }

  Hypothesis greedy(const FeatureSequence<T>& h, const Tensor<T>& semantics, int index, int max_len = -1) const {
    NoGradGuard guard;
    auto single = select(h, index);
    auto init = initial_state(ops::slice_rows(semantics, index, 1));
    auto mem = prepare(single);
    auto step_fn = [&](const std::vector<std::vector<T>>& states, const std::vector<int>& prev) {
      auto out = step(Tensor<T>::from({1, config_.hidden}, states.at(0)), prev, mem);
      auto lp = ops::log_softmax_row<T>(out.logits.data());
      StepOutput<std::vector<T>> res;
      res.log_probs.emplace_back(lp.begin(), lp.end());
      res.states.push_back(out.state.values());
      return res;
    };
    return greedy_decode(std::vector<T>(init.values()), step_fn, decode_options(max_len));
  }

  std::vector<Tensor<T>> parameters() const {
    return {embed_, init_.weight, init_.bias, query_.weight, key_.weight, key_.bias, score_, gru_.w_ih, gru_.w_hh,
            gru_.b_ih, gru_.b_hh, out_.weight, out_.bias};
  }

 private:
  static FeatureSequence<T> select(const FeatureSequence<T>& h, int index) {
    return {ops::slice_rows(h.values, index * h.length, h.length), 1, h.length, h.depth};
  }

  static FeatureSequence<T> repeat(const FeatureSequence<T>& single, int times) {
    std::vector<Tensor<T>> parts(static_cast<std::size_t>(times), single.values);
    return {ops::concat_rows(parts), times, single.length, single.depth};
  }

  DecoderConfig config_;
  int vocab_ = 0;
  int depth_ = 0;
  Tensor<T> embed_;
  nn::Linear<T> init_;
  nn::Linear<T> query_;
  nn::Linear<T> key_;
  Tensor<T> score_;
  nn::GruCell<T> gru_;
  nn::Linear<T> out_;
};

}  // namespace semhtr
