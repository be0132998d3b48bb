// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semhtr/unicode.hpp"

namespace semhtr {

enum class UnknownPolicy {
  kError,    // training transcriptions
  kMapToUnk  // evaluation references
};

/// Decoder output inventory: four special tokens followed by the listed code
/// points in their given order.
class Charset {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kSpecials = 4;

  Charset() = default;
  explicit Charset(std::u32string symbols) : symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (!ids_.emplace(symbols_[i], static_cast<int>(i) + kSpecials).second) {
        throw InvalidInputError("charset: duplicate character '" + unicode::to_utf8(symbols_[i]) + "'");
      }
    }
  }

  /// Total vocabulary including specials.
  int size() const { return static_cast<int>(symbols_.size()) + kSpecials; }
  const std::u32string& symbols() const { return symbols_; }
  bool empty() const { return symbols_.empty(); }

  std::optional<int> id(char32_t c) const {
    auto it = ids_.find(c);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  bool is_special(int id) const { return id >= 0 && id < kSpecials; }

  char32_t symbol(int id) const {
    if (id < kSpecials || id >= size()) throw VocabularyError("token id " + std::to_string(id) + " has no character");
    return symbols_[static_cast<std::size_t>(id - kSpecials)];
  }

  bool covers(std::string_view word) const {
    for (char32_t c : unicode::to_code_points(word))
      if (!ids_.count(c)) return false;
    return true;
  }

  /// Token ids of `word` followed by EOS.
  std::vector<int> encode(std::string_view word, UnknownPolicy policy = UnknownPolicy::kError) const {
    std::vector<int> out;
    for (char32_t c : unicode::to_code_points(word)) {
      auto it = ids_.find(c);
      if (it != ids_.end()) {
        out.push_back(it->second);
      } else if (policy == UnknownPolicy::kMapToUnk) {
        out.push_back(kUnk);
      } else {
        throw CoverageError("character '" + unicode::to_utf8(c) + "' of word '" + std::string(word) +
                            "' is not in the charset");
      }
    }
    out.push_back(kEos);
    return out;
  }

  /// Stops at the first EOS; other specials are skipped.
  std::string decode(std::span<const int> ids) const {
    std::u32string out;
    for (int id : ids) {
      if (id == kEos) break;
      if (is_special(id)) continue;
      out.push_back(symbol(id));
    }
    return unicode::to_utf8(out);
  }

  bool operator==(const Charset& other) const { return symbols_ == other.symbols_; }

 private:
  std::u32string symbols_;
  std::unordered_map<char32_t, int> ids_;
};

}  // namespace semhtr
