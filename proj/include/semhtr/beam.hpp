// SPDX-License-Identifier: Apache-2.0
//
// Greedy and beam decoding over any step model. A step model maps a batch of
// hypothesis states plus their previous tokens to per-row log-probabilities
// and successor states.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "semhtr/errors.hpp"

namespace semhtr {

struct Hypothesis {
  std::vector<int> token_ids;  // after BOS, EOS excluded
  double log_prob = 0.0;
  bool finished = false;
};

template <typename State>
struct StepOutput {
  std::vector<std::vector<double>> log_probs;  // one row per input state
  std::vector<State> states;
};

struct DecodeOptions {
  int bos_id = 1;
  int eos_id = 2;
  int max_len = 32;
  std::vector<int> banned;  // never emitted (e.g. PAD, BOS)
};

namespace detail {

/// Total order: higher score first, then earlier EOS, then smaller token sequence.
inline bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  const std::size_t ea = a.finished ? a.token_ids.size() : std::numeric_limits<std::size_t>::max();
  const std::size_t eb = b.finished ? b.token_ids.size() : std::numeric_limits<std::size_t>::max();
  if (ea != eb) return ea < eb;
  return a.token_ids < b.token_ids;
}

inline bool is_banned(const DecodeOptions& opt, int token) {
  return std::find(opt.banned.begin(), opt.banned.end(), token) != opt.banned.end();
}

}  // namespace detail

/// Argmax decoding; ties go to the lowest token id.
template <typename State, typename StepFn>
Hypothesis greedy_decode(State initial, StepFn&& step, const DecodeOptions& opt) {
  Hypothesis hyp;
  std::vector<State> states{std::move(initial)};
  int prev = opt.bos_id;
  for (int t = 0; t < opt.max_len; ++t) {
    StepOutput<State> out = step(states, std::vector<int>{prev});
    const auto& lp = out.log_probs.at(0);
    int best = -1;
    for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
      if (detail::is_banned(opt, v)) continue;
      if (best < 0 || lp[v] > lp[best]) best = v;
    }
    hyp.log_prob += lp[best];
    if (best == opt.eos_id) {
      hyp.finished = true;
      break;
    }
    hyp.token_ids.push_back(best);
    prev = best;
    states = std::move(out.states);
  }
  return hyp;
}

/// Beam search without length normalization. Returns up to `width`
/// hypotheses, best first.
template <typename State, typename StepFn>
std::vector<Hypothesis> beam_search(State initial, StepFn&& step, int width, const DecodeOptions& opt) {
  if (width < 1) throw InvalidInputError("beam width must be >= 1");
  if (opt.max_len < 1) throw InvalidInputError("max_len must be >= 1");
  struct Beam {
    Hypothesis hyp;
    State state;
  };
  std::vector<Beam> beams{{Hypothesis{}, std::move(initial)}};
  for (int t = 0; t < opt.max_len; ++t) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < beams.size(); ++i)
      if (!beams[i].hyp.finished) active.push_back(i);
    if (active.empty()) break;

    std::vector<State> states;
    std::vector<int> prev;
    for (std::size_t i : active) {
      states.push_back(beams[i].state);
      prev.push_back(beams[i].hyp.token_ids.empty() ? opt.bos_id : beams[i].hyp.token_ids.back());
    }
    StepOutput<State> out = step(states, prev);

    struct Candidate {
      Hypothesis hyp;
      std::size_t source;  // index into beams (finished) or active row
      bool extended;
    };
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < beams.size(); ++i)
      if (beams[i].hyp.finished) cands.push_back({beams[i].hyp, i, false});
    for (std::size_t r = 0; r < active.size(); ++r) {
      const auto& lp = out.log_probs.at(r);
      const auto& base = beams[active[r]].hyp;
      for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
        if (detail::is_banned(opt, v)) continue;
        Hypothesis h;
        h.token_ids = base.token_ids;
        h.log_prob = base.log_prob + lp[v];
        if (v == opt.eos_id) {
          h.finished = true;
        } else {
          h.token_ids.push_back(v);
        }
        cands.push_back({std::move(h), r, true});
      }
    }
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(width), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) { return detail::hypothesis_before(a.hyp, b.hyp); });
    std::vector<Beam> next;
    next.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      auto& c = cands[i];
      State s = c.extended ? out.states.at(c.source) : beams[c.source].state;
      next.push_back({std::move(c.hyp), std::move(s)});
    }
    beams = std::move(next);
  }
  std::vector<Hypothesis> result;
  for (auto& b : beams) result.push_back(std::move(b.hyp));
  std::sort(result.begin(), result.end(), detail::hypothesis_before);
  return result;
}

}  // namespace semhtr
