// SPDX-License-Identifier: Apache-2.0
//
// Minimal TrueType/OpenType `cmap` reader: which code points a font maps to
// a non-zero glyph. Supports subtable formats 4 and 12.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include "semhtr/errors.hpp"

namespace semhtr {

class FontCoverage {
 public:
  explicit FontCoverage(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open font file " + path.string());
    data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    parse();
  }

  const std::filesystem::path& path() const { return path_; }
  bool covers(char32_t c) const { return chars_.count(c) != 0; }
  bool covers(const std::u32string& s) const {
    for (char32_t c : s)
      if (!covers(c)) return false;
    return true;
  }
  std::size_t size() const { return chars_.size(); }

 private:
  std::uint16_t u16(std::size_t off) const {
    check(off, 2);
    return static_cast<std::uint16_t>((static_cast<std::uint8_t>(data_[off]) << 8) | static_cast<std::uint8_t>(data_[off + 1]));
  }
  std::uint32_t u32(std::size_t off) const { return (static_cast<std::uint32_t>(u16(off)) << 16) | u16(off + 2); }
  void check(std::size_t off, std::size_t n) const {
    if (off + n > data_.size()) throw DataError("font file " + path_.string() + " is truncated or not a TrueType font");
  }

  void parse() {
    std::size_t base = 0;
    if (data_.size() >= 4 && data_.compare(0, 4, "ttcf") == 0) base = u32(12);  // first face of a collection
    const std::uint16_t tables = u16(base + 4);
    std::size_t cmap = 0;
    for (std::uint16_t i = 0; i < tables; ++i) {
      const std::size_t rec = base + 12 + 16u * i;
      check(rec, 16);
      if (data_.compare(rec, 4, "cmap") == 0) cmap = u32(rec + 8);
    }
    if (cmap == 0) throw DataError("font file " + path_.string() + " has no cmap table");
    const std::uint16_t count = u16(cmap + 2);
    std::size_t best = 0;
    int best_rank = -1;
    for (std::uint16_t i = 0; i < count; ++i) {
      const std::size_t rec = cmap + 4 + 8u * i;
      const std::uint16_t platform = u16(rec), encoding = u16(rec + 2);
      const std::size_t sub = cmap + u32(rec + 4);
      const std::uint16_t format = u16(sub);
      int rank = -1;
      if (format == 12 && (platform == 0 || (platform == 3 && encoding == 10))) rank = 2;
      if (format == 4 && (platform == 0 || (platform == 3 && encoding == 1))) rank = 1;
      if (rank > best_rank) {
        best_rank = rank;
        best = sub;
      }
    }
    if (best_rank < 0) throw DataError("font file " + path_.string() + " has no Unicode cmap subtable");
    if (u16(best) == 12) {
      parse_format12(best);
    } else {
      parse_format4(best);
    }
  }

  void parse_format4(std::size_t sub) {
    const std::size_t segs = u16(sub + 6) / 2;
    const std::size_t ends = sub + 14, starts = ends + 2 * segs + 2, deltas = starts + 2 * segs,
                      offsets = deltas + 2 * segs;
    for (std::size_t s = 0; s < segs; ++s) {
      const std::uint32_t end = u16(ends + 2 * s), start = u16(starts + 2 * s);
      const std::uint16_t delta = u16(deltas + 2 * s), range = u16(offsets + 2 * s);
      for (std::uint32_t c = start; c <= end && c != 0xFFFF; ++c) {
        std::uint16_t glyph;
        if (range == 0) {
          glyph = static_cast<std::uint16_t>(c + delta);
        } else {
          const std::size_t at = offsets + 2 * s + range + 2 * (c - start);
          glyph = u16(at);
          if (glyph != 0) glyph = static_cast<std::uint16_t>(glyph + delta);
        }
        if (glyph != 0) chars_.insert(static_cast<char32_t>(c));
      }
    }
  }

  void parse_format12(std::size_t sub) {
    const std::uint32_t groups = u32(sub + 12);
    for (std::uint32_t g = 0; g < groups; ++g) {
      const std::size_t rec = sub + 16 + 12u * g;
      const std::uint32_t start = u32(rec), end = u32(rec + 4), glyph = u32(rec + 8);
      for (std::uint32_t c = start; c <= end; ++c)
        if (glyph + (c - start) != 0) chars_.insert(static_cast<char32_t>(c));
    }
  }

  std::filesystem::path path_;
  std::string data_;
  std::set<char32_t> chars_;
};

}  // namespace semhtr
