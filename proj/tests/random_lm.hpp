// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <random>
#include <vector>

#include "semhtr/beam.hpp"
#include "semhtr/ops.hpp"

namespace semhtr::toylm {

/// Step model whose next-token distribution is a fixed random function of
/// the prefix. The state is the prefix itself.
class RandomLm {
 public:
  RandomLm(std::uint64_t seed, int vocab, double temperature = 2.0)
      : seed_(seed), vocab_(vocab), temperature_(temperature) {}

  StepOutput<std::vector<int>> operator()(const std::vector<std::vector<int>>& states, const std::vector<int>& prev) {
    StepOutput<std::vector<int>> out;
    for (std::size_t r = 0; r < states.size(); ++r) {
      auto next = states[r];
      next.push_back(prev[r]);
      out.log_probs.push_back(dist(next));
      out.states.push_back(next);
    }
    return out;
  }

  std::vector<double> dist(const std::vector<int>& prefix) {
    auto it = cache_.find(prefix);
    if (it != cache_.end()) return it->second;
    std::uint64_t h = seed_;
    for (int t : prefix) h = h * 1000003u + static_cast<std::uint64_t>(t + 7);
    std::mt19937_64 rng(h);
    std::normal_distribution<double> n(0.0, temperature_);
    std::vector<double> z(vocab_);
    for (auto& v : z) v = n(rng);
    auto lp = ops::log_softmax_row<double>(z);
    cache_[prefix] = lp;
    return lp;
  }

 private:
  std::uint64_t seed_;
  int vocab_;
  double temperature_;
  std::map<std::vector<int>, std::vector<double>> cache_;
};

inline DecodeOptions toy_options(int max_len) {
  DecodeOptions opt;
  opt.max_len = max_len;
  opt.banned = {0, 1};
  return opt;
}

/// Best joint log-probability over all sequences of at most `steps` tokens
/// (ending at EOS or truncated at `steps`).
inline void enumerate(RandomLm& lm, std::vector<int> prefix, double lp, int steps, const DecodeOptions& opt, Hypothesis& best,
               bool& have) {
  std::vector<int> hist{opt.bos_id};
  hist.insert(hist.end(), prefix.begin(), prefix.end());
  hist.pop_back();
  auto probs = lm.dist(hist);
  for (int v = 0; v < static_cast<int>(probs.size()); ++v) {
    if (detail::is_banned(opt, v)) continue;
    Hypothesis h;
    h.log_prob = lp + probs[v];
    h.token_ids = std::vector<int>(prefix.begin(), prefix.end() - 1);
    if (v == opt.eos_id) {
      h.finished = true;
    } else {
      h.token_ids.push_back(v);
      if (static_cast<int>(h.token_ids.size()) < steps) {
        auto next = h.token_ids;
        next.push_back(v);
        enumerate(lm, next, h.log_prob, steps, opt, best, have);
        continue;
      }
    }
    if (!have || detail::hypothesis_before(h, best)) {
      best = h;
      have = true;
    }
  }
}


/// Exhaustive search over every sequence of at most `steps` tokens.
inline Hypothesis best_sequence(RandomLm& lm, int steps, const DecodeOptions& opt) {
  Hypothesis best;
  bool have = false;
  enumerate(lm, {opt.bos_id}, 0.0, steps, opt, best, have);
  return best;
}

}  // namespace semhtr::toylm
