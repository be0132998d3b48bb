// SPDX-License-Identifier: Apache-2.0
//
// Joint training of recognition and semantic supervision:
// total = L_r + lambda * L_e, with L_r the mean token cross-entropy over
// non-PAD steps and L_e the batch mean of 1 - cos(S, E).
#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "semhtr/checkpoint.hpp"
#include "semhtr/embedding.hpp"
#include "semhtr/inference.hpp"
#include "semhtr/metrics.hpp"
#include "semhtr/optim.hpp"

namespace semhtr {

template <typename T>
struct LossBreakdown {
  Tensor<T> total;  // differentiable
  double recognition = 0;  // L_r
  double embedding = 0;    // L_e
  double value = 0;        // total as computed
};

/// logits: [M, V] with M = steps * batch; targets: M ids (PAD ignored);
/// semantics, embeddings: [N, D_e]. Throws NumericError on a non-finite loss.
template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& logits, const std::vector<int>& targets, const Tensor<T>& semantics,
                            const Tensor<T>& embeddings, double lambda) {
  LossBreakdown<T> out;
  auto l_r = ops::cross_entropy(logits, targets, Charset::kPad);
  auto l_e = ops::cosine_embedding_loss(semantics, embeddings);
  out.recognition = l_r.item();
  out.embedding = l_e.item();
  out.total = lambda == 0.0 ? l_r : ops::add(l_r, ops::affine(l_e, static_cast<T>(lambda)));
  out.value = out.total.item();
  if (!std::isfinite(out.value) || !std::isfinite(out.recognition) || !std::isfinite(out.embedding)) {
    throw NumericError("non-finite loss (L_r=" + std::to_string(out.recognition) +
                       ", L_e=" + std::to_string(out.embedding) + ")");
  }
  return out;
}

struct EpochRecord {
  int epoch = 0;
  double recognition = 0;
  double embedding = 0;
  double total = 0;
  double val_cer = 0;
  double val_wer = 0;
  double seconds = 0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"L_r", recognition}, {"L_e", embedding},     {"total", total},
            {"val_cer", val_cer}, {"val_wer", val_wer}, {"seconds", seconds}};
  }
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_wer = 0;
  Charset charset;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
};

/// Deterministic hold-out of `fraction` of the samples (at least one when
/// there are two or more). Returns {train, val}.
inline std::pair<std::vector<WordSample>, std::vector<WordSample>> holdout_split(const std::vector<WordSample>& samples,
                                                                              double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x4a1d));
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(samples.size())));
  if (samples.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, samples.size() - 1);
  std::vector<bool> is_val(samples.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  std::pair<std::vector<WordSample>, std::vector<WordSample>> out;
  for (std::size_t i = 0; i < samples.size(); ++i) (is_val[i] ? out.second : out.first).push_back(samples[i]);
  for (auto& s : out.second) s.split = Split::kVal;
  return out;
}

/// Charset from the training and validation transcriptions.
inline Charset charset_for(const std::vector<WordSample>& train_set, const std::vector<WordSample>& val_set) {
  std::vector<WordSample> all = train_set;
  all.insert(all.end(), val_set.begin(), val_set.end());
  return build_charset(all);
}

template <typename T = float>
class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochRecord&)>;

  /// An empty `val_set` triggers a hold-out of config.val_fraction of `train_set`.
  Trainer(std::vector<WordSample> train_set, std::vector<WordSample> val_set, const EmbeddingTable& embeddings,
          TrainConfig config)
      : config_(std::move(config)) {
    config_.validate();
    if (train_set.empty()) throw DataError("training set is empty");
    if (val_set.empty() && config_.val_fraction > 0 && train_set.size() >= 2) {
      std::tie(train_set, val_set) = holdout_split(train_set, config_.val_fraction, config_.seed);
    }
    if (val_set.empty()) val_set = train_set;
    charset_ = charset_for(train_set, val_set);

    // Coverage: every training word must be encodable and embeddable.
    for (const auto& s : train_set) {
      targets_.push_back(charset_.encode(s.transcription));
      if (static_cast<int>(targets_.back().size()) > config_.model.decoder.max_len) {
        throw ConfigError("word '" + s.transcription + "' is longer than max_len " +
                          std::to_string(config_.model.decoder.max_len));
      }
      const auto e = embed_word(s.transcription, embeddings);
      targets_embedding_.insert(targets_embedding_.end(), e.begin(), e.end());
    }
    embedding_dim_ = embeddings.dimension();
    train_ = ImageBank::load(train_set);
    val_ = ImageBank::load(val_set);
    model_ = std::make_unique<Recognizer<T>>(model_config_for(config_, embedding_dim_), charset_.size(), config_.seed);
  }

  const Charset& charset() const { return charset_; }
  Recognizer<T>& model() { return *model_; }
  const TrainConfig& config() const { return config_; }
  std::size_t train_size() const { return train_.size(); }
  std::size_t val_size() const { return val_.size(); }

  /// Runs the configured epochs, writing metrics.jsonl, last.ckpt and
  /// best.ckpt into out_dir.
  TrainResult run(const std::filesystem::path& out_dir, EpochCallback on_epoch = {}) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    std::ofstream log(out_dir / "metrics.jsonl", std::ios::trunc);
    if (!log) throw DataError("cannot write " + (out_dir / "metrics.jsonl").string());

    auto params = model_->store().trainable();
    optim::Adadelta<T> opt(params, config_.learning_rate, config_.rho, config_.eps);
    TrainResult result;
    result.charset = charset_;
    result.last_checkpoint = out_dir / "last.ckpt";
    result.best_checkpoint = out_dir / "best.ckpt";
    nlohmann::json history = nlohmann::json::array();
    double best_wer = 0, best_cer = 0;

    for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
      const auto started = std::chrono::steady_clock::now();
      EpochRecord rec = run_epoch(epoch, opt, params);
      const auto hyps = recognize_canvases(*model_, charset_, val_.canvases, config_.val_beam_width);
      std::vector<TextPair> pairs;
      for (std::size_t i = 0; i < hyps.size(); ++i) pairs.emplace_back(val_.words[i], hyps[i]);
      rec.val_cer = cer(pairs);
      rec.val_wer = wer(pairs);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

      result.history.push_back(rec);
      history.push_back(rec.to_json());
      log << rec.to_json().dump() << '\n' << std::flush;

      save_checkpoint(result.last_checkpoint, *model_, config_, charset_, epoch, history);
      if (config_.keep_epoch_checkpoints) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
        save_checkpoint(out_dir / name, *model_, config_, charset_, epoch, history);
      }
      if (result.best_epoch == 0 || rec.val_wer < best_wer || (rec.val_wer == best_wer && rec.val_cer < best_cer)) {
        result.best_epoch = epoch;
        best_wer = rec.val_wer;
        best_cer = rec.val_cer;
        save_checkpoint(result.best_checkpoint, *model_, config_, charset_, epoch, history);
      }
      if (on_epoch) on_epoch(rec);
      if (config_.stop_val_wer >= 0 && rec.val_wer <= config_.stop_val_wer) break;
    }
    result.best_val_wer = best_wer;
    return result;
  }

  /// Loss of one batch without updating anything.
  LossBreakdown<T> batch_loss(const std::vector<std::size_t>& indices, int epoch) {
    std::vector<cv::Mat> canvases;
    std::vector<std::vector<int>> targets;
    std::vector<T> e;
    const auto d = static_cast<std::size_t>(embedding_dim_);
    for (std::size_t idx : indices) {
      canvases.push_back(config_.augment
                             ? augment(train_.canvases[idx], config_.augmentation, derive_seed(config_.seed, epoch, idx))
                             : train_.canvases[idx]);
      targets.push_back(targets_[idx]);
      for (std::size_t j = 0; j < d; ++j) e.push_back(static_cast<T>(targets_embedding_[idx * d + j]));
    }
    auto fwd = model_->forward(images_tensor<T>(canvases), true);
    std::vector<int> flat;
    auto logits = model_->decoder().teacher_forced(fwd.features, fwd.semantics, targets, &flat);
    auto embeddings = Tensor<T>::from({static_cast<int>(indices.size()), embedding_dim_}, std::move(e));
    return total_loss(logits, flat, fwd.semantics, embeddings, config_.lambda);
  }

 private:
  EpochRecord run_epoch(int epoch, optim::Adadelta<T>& opt, std::vector<Tensor<T>>& params) {
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(config_.seed, static_cast<std::uint64_t>(epoch), 0x5eed));
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = epoch;
    double count = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      auto loss = batch_loss(batch, epoch);
      loss.total.backward();
      optim::clip_grad_norm(params, config_.grad_clip);
      opt.step();
      opt.zero_grad();
      const double n = static_cast<double>(batch.size());
      rec.recognition += loss.recognition * n;
      rec.embedding += loss.embedding * n;
      rec.total += loss.value * n;
      count += n;
    }
    rec.recognition /= count;
    rec.embedding /= count;
    rec.total /= count;
    return rec;
  }

  TrainConfig config_;
  Charset charset_;
  int embedding_dim_ = 0;
  std::vector<std::vector<int>> targets_;
  std::vector<float> targets_embedding_;
  ImageBank train_, val_;
  std::unique_ptr<Recognizer<T>> model_;
};

}  // namespace semhtr
