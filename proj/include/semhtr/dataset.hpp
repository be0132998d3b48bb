// SPDX-License-Identifier: Apache-2.0
//
// Word-image datasets laid out as <root>/{train,val,test}.txt, one
// "relative/image/path<TAB>transcription" line per sample.
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "semhtr/charset.hpp"

namespace semhtr {

enum class Split { kTrain, kVal, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

struct WordSample {
  std::filesystem::path image_path;  // absolute or root-joined
  std::string transcription;         // trimmed, NFC
  Split split = Split::kTrain;
};

/// Reads one index file. Blank lines are skipped; every other line must be a
/// sample. `check_images` verifies that each referenced image exists.
inline std::vector<WordSample> load_index(const std::filesystem::path& root, Split split, bool check_images = true) {
  const auto index = root / (std::string(split_name(split)) + ".txt");
  std::ifstream in(index, std::ios::binary);
  if (!in) throw DataError("missing index file " + index.string());
  std::vector<WordSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (unicode::trim(line).empty()) continue;
    if (!unicode::is_valid_utf8(line)) throw ParseError(index.string(), line_no, "invalid UTF-8");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(index.string(), line_no, "missing tab separator");
    const std::string rel(unicode::trim(std::string_view(line).substr(0, tab)));
    const std::string text = unicode::nfc(unicode::trim(std::string_view(line).substr(tab + 1)));
    if (rel.empty()) throw ParseError(index.string(), line_no, "empty image path");
    if (text.empty()) throw ParseError(index.string(), line_no, "empty transcription");
    auto path = root / rel;
    if (check_images && !std::filesystem::is_regular_file(path)) {
      throw ParseError(index.string(), line_no, "image not found: " + path.string());
    }
    out.push_back({std::move(path), text, split});
  }
  return out;
}

/// All three splits in train, val, test order.
inline std::vector<WordSample> load_dataset(const std::filesystem::path& root, bool check_images = true) {
  std::vector<WordSample> all;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    auto part = load_index(root, s, check_images);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

inline std::vector<WordSample> filter_split(const std::vector<WordSample>& samples, Split split) {
  std::vector<WordSample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
               [split](const WordSample& s) { return s.split == split; });
  return out;
}

/// Unique code points of all transcriptions, sorted by code point.
inline Charset build_charset(const std::vector<WordSample>& samples) {
  if (samples.empty()) throw DataError("build_charset: no samples");
  std::set<char32_t> chars;
  for (const auto& s : samples)
    for (char32_t c : unicode::to_code_points(s.transcription)) chars.insert(c);
  return Charset(std::u32string(chars.begin(), chars.end()));
}

inline std::vector<int> encode_transcription(const std::string& word, const Charset& charset,
                                             UnknownPolicy policy = UnknownPolicy::kError) {
  return charset.encode(word, policy);
}

inline std::string decode_tokens(std::span<const int> ids, const Charset& charset) { return charset.decode(ids); }

/// One UTF-8 word per non-blank line, NFC-normalized; duplicates removed
/// keeping the first occurrence.
inline std::vector<std::string> read_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open lexicon " + path.string());
  std::vector<std::string> words;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!unicode::is_valid_utf8(line)) throw ParseError(path.string(), line_no, "invalid UTF-8");
    const std::string w = unicode::nfc(unicode::trim(line));
    if (w.empty()) continue;
    if (w.find_first_of(" \t") != std::string::npos) throw ParseError(path.string(), line_no, "lexicon entry contains whitespace");
    if (seen.insert(w).second) words.push_back(w);
  }
  if (words.empty()) throw DataError("lexicon " + path.string() + " is empty");
  return words;
}

}  // namespace semhtr
