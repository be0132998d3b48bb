#pragma once

#include <string>
#include <tuple>

#include "semhtr/metrics.hpp"

namespace semhtr::oracle {

/// Exhaustive recursion over every alignment (no memoisation). Picks the
/// lowest cost, then the most substitutions.
inline EditOps align(std::u32string_view a, std::u32string_view b) {
  if (a.empty()) return {0, 0, b.size(), 0};
  if (b.empty()) return {0, a.size(), 0, a.size()};
  EditOps best;
  bool have = false;
  auto consider = [&](EditOps c) {
    if (!have || c.distance() < best.distance() ||
        (c.distance() == best.distance() && c.substitutions > best.substitutions)) {
      best = c;
      have = true;
    }
  };
  EditOps diag = align(a.substr(1), b.substr(1));
  if (a[0] != b[0]) ++diag.substitutions;
  consider(diag);
  EditOps del = align(a.substr(1), b);
  ++del.deletions;
  consider(del);
  EditOps ins = align(a, b.substr(1));
  ++ins.insertions;
  consider(ins);
  best.reference_length = a.size();
  return best;
}

}  // namespace semhtr::oracle
