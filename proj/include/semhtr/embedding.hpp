// SPDX-License-Identifier: Apache-2.0
//
// Subword word embeddings: character n-gram extraction, mean composition of
// word and n-gram vectors, a skip-gram trainer with negative sampling, and
// text word-vector file I/O.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "semhtr/unicode.hpp"

namespace semhtr {

struct SubwordConfig {
  int l_min = 3;
  int l_max = 6;
  bool use_boundaries = true;

  void validate() const {
    if (l_min < 1 || l_max < l_min) {
      throw ConfigError("subword lengths must satisfy 1 <= l_min <= l_max (got " + std::to_string(l_min) + ", " +
                        std::to_string(l_max) + ")");
    }
  }
};

/// Contiguous code-point n-grams of the (optionally "<word>"-wrapped) word,
/// shorter lengths first, left to right within a length; duplicates kept.
inline std::vector<std::string> extract_subwords(std::string_view word, const SubwordConfig& config) {
  config.validate();
  if (word.empty()) throw InvalidInputError("extract_subwords: empty word");
  std::u32string cps = unicode::to_code_points(word);
  if (config.use_boundaries) cps = U"<" + cps + U">";
  const int n = static_cast<int>(cps.size());
  std::vector<std::string> out;
  for (int k = config.l_min; k <= std::min(config.l_max, n); ++k) {
    for (int i = 0; i + k <= n; ++i) out.push_back(unicode::to_utf8(std::u32string_view(cps).substr(i, k)));
  }
  return out;
}

class EmbeddingTable {
 public:
  using Vector = std::vector<float>;

  EmbeddingTable() = default;
  EmbeddingTable(int dimension, SubwordConfig config) : dim_(dimension), config_(config) {
    if (dimension < 1) throw ConfigError("embedding dimension must be positive");
    config_.validate();
  }

  int dimension() const { return dim_; }
  const SubwordConfig& subword_config() const { return config_; }
  bool empty() const { return words_.empty() && subwords_.empty(); }
  std::size_t word_count() const { return words_.size(); }
  std::size_t subword_count() const { return subwords_.size(); }

  void set_word(const std::string& word, Vector v) { set(words_, word, std::move(v)); }
  void set_subword(const std::string& gram, Vector v) { set(subwords_, gram, std::move(v)); }

  const Vector* word(const std::string& w) const { return find(words_, w); }
  const Vector* subword(const std::string& g) const { return find(subwords_, g); }

  /// Entries sorted by key, for deterministic output.
  std::vector<std::pair<std::string, Vector>> sorted_words() const { return sorted(words_); }
  std::vector<std::pair<std::string, Vector>> sorted_subwords() const { return sorted(subwords_); }

 private:
  using Map = std::unordered_map<std::string, Vector>;

  void set(Map& m, const std::string& key, Vector v) {
    if (static_cast<int>(v.size()) != dim_) {
      throw ShapeError("embedding vector for '" + key + "' has dimension " + std::to_string(v.size()) +
                       ", table dimension is " + std::to_string(dim_));
    }
    for (float x : v)
      if (!std::isfinite(x)) throw NumericError("embedding vector for '" + key + "' is not finite");
    m[key] = std::move(v);
  }

  static const Vector* find(const Map& m, const std::string& key) {
    auto it = m.find(key);
    return it == m.end() ? nullptr : &it->second;
  }

  static std::vector<std::pair<std::string, Vector>> sorted(const Map& m) {
    std::vector<std::pair<std::string, Vector>> out(m.begin(), m.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

  int dim_ = 0;
  SubwordConfig config_;
  Map words_;
  Map subwords_;
};

/// Mean of the word's own vector (if any) and the vectors of its known subwords.
inline std::vector<float> embed_word(const std::string& word, const EmbeddingTable& table) {
  if (word.empty()) throw InvalidInputError("embed_word: empty word");
  if (table.empty()) throw InvalidInputError("embed_word: embedding table is empty");
  std::vector<double> acc(static_cast<std::size_t>(table.dimension()), 0.0);
  int count = 0;
  auto add = [&](const EmbeddingTable::Vector& v) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
    ++count;
  };
  if (const auto* v = table.word(word)) add(*v);
  for (const auto& g : extract_subwords(word, table.subword_config()))
    if (const auto* v = table.subword(g)) add(*v);
  if (count == 0) throw CoverageError("word '" + word + "' has no word vector and no known subwords");
  std::vector<float> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / count);
  return out;
}

// ---------------------------------------------------------------- skip-gram

struct SkipGramConfig {
  int dimension = 32;
  int window = 2;
  int epochs = 5;
  int negatives = 5;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;
};

/// Sentences of tokens; context window is taken from SkipGramConfig.
using Corpus = std::vector<std::vector<std::string>>;

/// Whitespace-tokenized sentences, one per non-blank line.
inline Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  Corpus corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!unicode::is_valid_utf8(line)) throw ParseError(path.string(), line_no, "invalid UTF-8");
    std::istringstream ss(line);
    std::vector<std::string> sentence;
    for (std::string tok; ss >> tok;) sentence.push_back(unicode::nfc(tok));
    if (!sentence.empty()) corpus.push_back(std::move(sentence));
  }
  return corpus;
}

/// Skip-gram with negative sampling; the centre word is represented by the
/// mean of its word and subword input vectors, so trained tables compose
/// through embed_word. Deterministic for a given seed (single-threaded).
inline EmbeddingTable train_skipgram(const Corpus& corpus, const SubwordConfig& subwords, const SkipGramConfig& cfg) {
  subwords.validate();
  if (cfg.window < 1) throw ConfigError("skip-gram window must be >= 1");
  if (cfg.dimension < 1 || cfg.epochs < 1 || cfg.negatives < 0) throw ConfigError("invalid skip-gram settings");

  std::map<std::string, long> counts;
  for (const auto& s : corpus)
    for (const auto& t : s) {
      if (t.empty()) throw DataError("corpus contains an empty token");
      ++counts[t];
    }
  if (counts.size() < 2) throw DataError("skip-gram corpus needs at least 2 distinct tokens, got " + std::to_string(counts.size()));

  // Deterministic ids: words sorted, then subwords sorted.
  std::vector<std::string> vocab;
  std::unordered_map<std::string, int> word_id;
  for (const auto& [w, c] : counts) {
    word_id[w] = static_cast<int>(vocab.size());
    vocab.push_back(w);
  }
  std::map<std::string, int> gram_id;
  for (const auto& w : vocab)
    for (const auto& g : extract_subwords(w, subwords)) gram_id.emplace(g, 0);
  {
    int next = static_cast<int>(vocab.size());
    for (auto& [g, id] : gram_id) id = next++;
  }
  const int rows = static_cast<int>(vocab.size() + gram_id.size());
  // Input rows composing each word.
  std::vector<std::vector<int>> parts(vocab.size());
  for (std::size_t w = 0; w < vocab.size(); ++w) {
    parts[w].push_back(static_cast<int>(w));
    for (const auto& g : extract_subwords(vocab[w], subwords)) parts[w].push_back(gram_id.at(g));
  }

  const int d = cfg.dimension;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<float> init(-0.5f / static_cast<float>(d), 0.5f / static_cast<float>(d));
  std::vector<float> in(static_cast<std::size_t>(rows) * d);
  for (auto& v : in) v = init(rng);
  std::vector<float> out(vocab.size() * static_cast<std::size_t>(d), 0.0f);

  // Noise distribution proportional to count^0.75.
  std::vector<double> noise;
  for (const auto& w : vocab) noise.push_back(std::pow(static_cast<double>(counts[w]), 0.75));
  std::discrete_distribution<int> sample_noise(noise.begin(), noise.end());

  long total_steps = 0;
  for (const auto& s : corpus) total_steps += static_cast<long>(s.size());
  total_steps *= cfg.epochs;
  long step = 0;

  std::vector<float> h(static_cast<std::size_t>(d)), grad_h(static_cast<std::size_t>(d));
  auto sigmoid = [](float x) { return x >= 0 ? 1.f / (1.f + std::exp(-x)) : std::exp(x) / (1.f + std::exp(x)); };
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& sentence : corpus) {
      const int len = static_cast<int>(sentence.size());
      for (int pos = 0; pos < len; ++pos, ++step) {
        const float lr = static_cast<float>(cfg.learning_rate * std::max(1e-4, 1.0 - static_cast<double>(step) / total_steps));
        const auto& rows_of = parts[static_cast<std::size_t>(word_id.at(sentence[pos]))];
        std::fill(h.begin(), h.end(), 0.f);
        for (int r : rows_of)
          for (int j = 0; j < d; ++j) h[j] += in[static_cast<std::size_t>(r) * d + j];
        const float inv = 1.f / static_cast<float>(rows_of.size());
        for (auto& v : h) v *= inv;
        for (int c = std::max(0, pos - cfg.window); c <= std::min(len - 1, pos + cfg.window); ++c) {
          if (c == pos) continue;
          std::fill(grad_h.begin(), grad_h.end(), 0.f);
          const int target = word_id.at(sentence[c]);
          for (int k = 0; k <= cfg.negatives; ++k) {
            const int o = k == 0 ? target : sample_noise(rng);
            if (k > 0 && o == target) continue;
            float* u = out.data() + static_cast<std::size_t>(o) * d;
            float dot = 0;
            for (int j = 0; j < d; ++j) dot += h[j] * u[j];
            const float g = lr * ((k == 0 ? 1.f : 0.f) - sigmoid(dot));
            for (int j = 0; j < d; ++j) {
              grad_h[j] += g * u[j];
              u[j] += g * h[j];
            }
          }
          for (int r : rows_of)
            for (int j = 0; j < d; ++j) in[static_cast<std::size_t>(r) * d + j] += grad_h[j] * inv;
        }
      }
    }
  }

  EmbeddingTable table(d, subwords);
  auto row = [&](int r) {
    return std::vector<float>(in.begin() + static_cast<std::ptrdiff_t>(r) * d, in.begin() + static_cast<std::ptrdiff_t>(r + 1) * d);
  };
  for (std::size_t w = 0; w < vocab.size(); ++w) table.set_word(vocab[w], row(static_cast<int>(w)));
  for (const auto& [g, id] : gram_id) table.set_subword(g, row(id));
  return table;
}

// ---------------------------------------------------------------- file I/O

namespace detail {

inline void write_vectors(std::ostream& os, const std::vector<std::pair<std::string, std::vector<float>>>& rows) {
  os << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (const auto& [key, v] : rows) {
    os << key;
    for (float x : v) os << ' ' << x;
    os << '\n';
  }
}

/// Reads "key v_1 .. v_dim" lines after the header.
template <typename Sink>
void read_vectors(std::istream& in, const std::string& source, int& line_no, long count, int dim, Sink&& sink) {
  std::string line;
  long read = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (unicode::trim(line).empty()) continue;
    if (!unicode::is_valid_utf8(line)) throw ParseError(source, line_no, "invalid UTF-8");
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    std::vector<float> v;
    for (std::string field; ss >> field;) {
      std::size_t used = 0;
      float x;
      try {
        x = std::stof(field, &used);
      } catch (const std::exception&) {
        throw ParseError(source, line_no, "non-numeric field '" + field + "'");
      }
      if (used != field.size()) throw ParseError(source, line_no, "non-numeric field '" + field + "'");
      v.push_back(x);
    }
    if (static_cast<int>(v.size()) != dim) {
      throw ParseError(source, line_no, "expected " + std::to_string(dim) + " values, got " + std::to_string(v.size()));
    }
    if (++read > count) throw ParseError(source, line_no, "more entries than the header count " + std::to_string(count));
    sink(key, std::move(v));
  }
  if (read != count) {
    throw ParseError(source, line_no, "header declares " + std::to_string(count) + " entries, found " + std::to_string(read));
  }
}

inline std::vector<long> parse_header(const std::string& line, const std::string& source, std::size_t fields) {
  std::istringstream ss(line);
  std::vector<long> out;
  for (std::string f; ss >> f;) {
    std::size_t used = 0;
    long v = -1;
    try {
      v = std::stol(f, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != f.size() || v < 0) throw ParseError(source, 1, "malformed header '" + line + "'");
    out.push_back(v);
  }
  if (out.size() != fields) throw ParseError(source, 1, "malformed header '" + line + "'");
  return out;
}

}  // namespace detail

/// Sibling file holding subword vectors; its header is
/// "count dim l_min l_max boundaries".
inline std::filesystem::path subword_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".subwords");
}

inline void save_embedding_file(const EmbeddingTable& table, const std::filesystem::path& path) {
  {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write embedding file " + path.string());
    os << table.word_count() << ' ' << table.dimension() << '\n';
    detail::write_vectors(os, table.sorted_words());
    if (!os) throw DataError("failed writing " + path.string());
  }
  const auto side = subword_path(path);
  if (table.subword_count() == 0) {
    std::filesystem::remove(side);
    return;
  }
  std::ofstream os(side);
  if (!os) throw DataError("cannot write embedding file " + side.string());
  const auto& c = table.subword_config();
  os << table.subword_count() << ' ' << table.dimension() << ' ' << c.l_min << ' ' << c.l_max << ' '
     << (c.use_boundaries ? 1 : 0) << '\n';
  detail::write_vectors(os, table.sorted_subwords());
  if (!os) throw DataError("failed writing " + side.string());
}

/// Loads a text word-vector file ("count dim" header, then "word v1 .. vdim"),
/// plus the subword sibling file when present.
inline EmbeddingTable load_embedding_file(const std::filesystem::path& path, const SubwordConfig& fallback = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path.string(), 1, "missing header");
  const auto h = detail::parse_header(header, path.string(), 2);
  if (h[1] < 1) throw ParseError(path.string(), 1, "dimension must be positive");
  SubwordConfig config = fallback;
  std::ifstream side(subword_path(path));
  std::vector<long> sh;
  std::string side_header;
  if (side) {
    if (!std::getline(side, side_header)) throw ParseError(subword_path(path).string(), 1, "missing header");
    sh = detail::parse_header(side_header, subword_path(path).string(), 5);
    if (sh[1] != h[1]) throw ParseError(subword_path(path).string(), 1, "dimension differs from the word file");
    config = {static_cast<int>(sh[2]), static_cast<int>(sh[3]), sh[4] != 0};
  }
  EmbeddingTable table(static_cast<int>(h[1]), config);
  int line_no = 1;
  detail::read_vectors(in, path.string(), line_no, h[0], static_cast<int>(h[1]),
                       [&](const std::string& k, std::vector<float> v) { table.set_word(k, std::move(v)); });
  if (side) {
    int side_line = 1;
    detail::read_vectors(side, subword_path(path).string(), side_line, sh[0], static_cast<int>(h[1]),
                         [&](const std::string& k, std::vector<float> v) { table.set_subword(k, std::move(v)); });
  }
  return table;
}

}  // namespace semhtr
