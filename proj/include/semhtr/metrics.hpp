// SPDX-License-Identifier: Apache-2.0
//
// Character and word error rates. Strings are compared as NFC code-point
// sequences; CER is aggregated over the corpus, WER is exact-match failure.
#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semhtr/unicode.hpp"

namespace semhtr {

struct EditOps {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_length = 0;

  std::size_t distance() const { return substitutions + deletions + insertions; }
  bool operator==(const EditOps&) const = default;
};

/// Minimal unit-cost alignment; among minimal alignments the one with the
/// most substitutions (fewest insert+delete pairs) wins.
inline EditOps edit_ops(std::u32string_view ref, std::u32string_view hyp) {
  struct Cell {
    std::size_t cost = 0, subs = 0, dels = 0, ins = 0;
  };
  auto better = [](const Cell& a, const Cell& b) {
    if (a.cost != b.cost) return a.cost < b.cost;
    return a.subs > b.subs;
  };
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, 0, 0, j};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {i, 0, i, 0};
    for (std::size_t j = 1; j <= m; ++j) {
      const bool same = ref[i - 1] == hyp[j - 1];
      Cell diag = prev[j - 1];
      if (!same) {
        ++diag.cost;
        ++diag.subs;
      }
      Cell del = prev[j];
      ++del.cost;
      ++del.dels;
      Cell ins = cur[j - 1];
      ++ins.cost;
      ++ins.ins;
      Cell best = diag;
      if (better(del, best)) best = del;
      if (better(ins, best)) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cell& r = prev[m];
  return {r.subs, r.dels, r.ins, n};
}

inline EditOps edit_ops(std::string_view ref, std::string_view hyp) {
  return edit_ops(unicode::to_code_points(unicode::nfc(ref)), unicode::to_code_points(unicode::nfc(hyp)));
}

using TextPair = std::pair<std::string, std::string>;  // (reference, hypothesis)

inline double cer(const std::vector<TextPair>& pairs) {
  std::size_t errors = 0, total = 0;
  for (const auto& [ref, hyp] : pairs) {
    const EditOps ops = edit_ops(ref, hyp);
    errors += ops.distance();
    total += ops.reference_length;
  }
  if (total == 0) throw UndefinedMetricError("CER is undefined: references contain no characters");
  return static_cast<double>(errors) / static_cast<double>(total);
}

inline double wer(const std::vector<TextPair>& pairs) {
  if (pairs.empty()) throw UndefinedMetricError("WER is undefined: no samples");
  std::size_t wrong = 0;
  for (const auto& [ref, hyp] : pairs) wrong += unicode::nfc(ref) != unicode::nfc(hyp);
  return static_cast<double>(wrong) / static_cast<double>(pairs.size());
}

struct SampleRecord {
  std::string id;  // image path or index
  std::string reference;
  std::string hypothesis;
  EditOps ops;
};

struct MetricReport {
  double cer = 0, wer = 0, crr = 1, wrr = 1;
  std::size_t samples = 0;
  std::vector<SampleRecord> records;

  nlohmann::json summary_json() const {
    return {{"cer", cer}, {"wer", wer}, {"crr", crr}, {"wrr", wrr}, {"samples", samples}};
  }

  /// One summary line followed by one line per sample.
  std::string to_jsonl() const {
    std::string out = summary_json().dump() + "\n";
    for (const auto& r : records) {
      nlohmann::json j{{"id", r.id},
                       {"reference", r.reference},
                       {"hypothesis", r.hypothesis},
                       {"distance", r.ops.distance()},
                       {"substitutions", r.ops.substitutions},
                       {"deletions", r.ops.deletions},
                       {"insertions", r.ops.insertions},
                       {"reference_length", r.ops.reference_length}};
      out += j.dump() + "\n";
    }
    return out;
  }
};

/// Builds a report from (id, reference, hypothesis) triples.
inline MetricReport make_report(const std::vector<std::string>& ids, const std::vector<TextPair>& pairs) {
  if (ids.size() != pairs.size()) throw InvalidInputError("make_report: id and pair counts differ");
  MetricReport rep;
  rep.cer = cer(pairs);
  rep.wer = wer(pairs);
  rep.crr = 1.0 - rep.cer;
  rep.wrr = 1.0 - rep.wer;
  rep.samples = pairs.size();
  for (std::size_t i = 0; i < pairs.size(); ++i)
    rep.records.push_back({ids[i], pairs[i].first, pairs[i].second, edit_ops(pairs[i].first, pairs[i].second)});
  return rep;
}

}  // namespace semhtr
