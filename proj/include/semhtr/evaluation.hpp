// SPDX-License-Identifier: Apache-2.0
//
// Test-set evaluation, the attention / WES / INIT ablation grid and the
// image-to-word-embedding similarity matrix.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "semhtr/training.hpp"

namespace semhtr {

/// Recognizes every sample and scores it against its transcription.
template <typename T>
MetricReport evaluate(Recognizer<T>& model, const Charset& charset, const ImageBank& bank, int beam_width) {
  if (bank.size() == 0) throw DataError("evaluate: no samples");
  const auto hyps = recognize_canvases(model, charset, bank.canvases, beam_width);
  std::vector<TextPair> pairs;
  for (std::size_t i = 0; i < hyps.size(); ++i) pairs.emplace_back(bank.words[i], hyps[i]);
  return make_report(bank.ids, pairs);
}

/// Characters of the references that the charset cannot produce.
inline std::u32string uncovered_characters(const Charset& charset, const std::vector<WordSample>& samples) {
  std::set<char32_t> missing;
  for (const auto& s : samples)
    for (char32_t c : unicode::to_code_points(s.transcription))
      if (!charset.id(c)) missing.insert(c);
  return {missing.begin(), missing.end()};
}

// ---------------------------------------------------------------- ablation

struct AblationVariant {
  std::string name;
  bool attention = true;
  bool wes = true;   // lambda > 0
  bool init = true;  // semantic decoder initialization
};

/// Baseline, +Att, +Att+WES, +Att+INIT, +Att+WES+INIT.
inline std::vector<AblationVariant> ablation_grid() {
  return {{"baseline", false, false, false},
          {"+Att", true, false, false},
          {"+Att+WES", true, true, false},
          {"+Att+INIT", true, false, true},
          {"+Att+WES+INIT", true, true, true}};
}

inline AblationVariant find_variant(const std::string& name) {
  for (const auto& v : ablation_grid())
    if (v.name == name) return v;
  throw ConfigError("unknown ablation variant '" + name + "'");
}

struct AblationRun {
  std::uint64_t seed = 0;
  double cer = 0;
  double wer = 0;
  int best_epoch = 0;
};

struct AblationRow {
  AblationVariant variant;
  std::vector<AblationRun> runs;

  double mean_wer() const {
    double s = 0;
    for (const auto& r : runs) s += r.wer;
    return runs.empty() ? 0 : s / static_cast<double>(runs.size());
  }
  double mean_cer() const {
    double s = 0;
    for (const auto& r : runs) s += r.cer;
    return runs.empty() ? 0 : s / static_cast<double>(runs.size());
  }

  nlohmann::json to_json() const {
    nlohmann::json runs_json = nlohmann::json::array();
    for (const auto& r : runs)
      runs_json.push_back({{"seed", r.seed}, {"cer", r.cer}, {"wer", r.wer}, {"best_epoch", r.best_epoch}});
    return {{"variant", variant.name},  {"attention", variant.attention}, {"wes", variant.wes},
            {"init", variant.init},     {"mean_wer", mean_wer()},         {"mean_cer", mean_cer()},
            {"runs", runs_json}};
  }
};

inline TrainConfig variant_config(TrainConfig base, const AblationVariant& v, double lambda, std::uint64_t seed) {
  base.model.decoder.use_attention = v.attention;
  base.model.decoder.semantic_init = v.init;
  base.lambda = v.wes ? lambda : 0.0;
  base.seed = seed;
  return base;
}

inline std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "variant" << std::setw(5) << "Att" << std::setw(5) << "WES" << std::setw(6)
     << "INIT" << std::right << std::setw(10) << "WER(%)" << std::setw(10) << "CER(%)" << "  seeds\n";
  for (const auto& r : rows) {
    auto mark = [](bool b) { return b ? "x" : "-"; };
    os << std::left << std::setw(16) << r.variant.name << std::setw(5) << mark(r.variant.attention) << std::setw(5)
       << mark(r.variant.wes) << std::setw(6) << mark(r.variant.init) << std::right << std::fixed
       << std::setprecision(2) << std::setw(10) << 100 * r.mean_wer() << std::setw(10) << 100 * r.mean_cer() << "  "
       << r.runs.size() << "\n";
  }
  return os.str();
}

/// Trains every variant for every seed on the same data and reports test
/// WER/CER of the best-by-validation checkpoint. Checkpoints and metrics go
/// to out_dir/<variant>/seed_<n>/.
inline std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<WordSample>& train_set,
                                             const std::vector<WordSample>& val_set,
                                             const std::vector<WordSample>& test_set, const EmbeddingTable& embeddings,
                                             const std::vector<AblationVariant>& variants,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::filesystem::path& out_dir,
                                             const std::function<void(const std::string&)>& progress = {}) {
  if (variants.empty() || seeds.empty()) throw ConfigError("ablation needs at least one variant and one seed");
  if (test_set.empty()) throw DataError("ablation: test split is empty");
  const ImageBank test = ImageBank::load(test_set);
  const double lambda = base.lambda > 0 ? base.lambda : 1.0;
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row{v, {}};
    for (std::uint64_t seed : seeds) {
      const auto cfg = variant_config(base, v, lambda, seed);
      std::string safe = v.name;
      for (char& c : safe)
        if (c == '+') c = '_';
      const auto dir = out_dir / safe / ("seed_" + std::to_string(seed));
      Trainer<float> trainer(train_set, val_set, embeddings, cfg);
      auto result = trainer.run(dir, [&](const EpochRecord& r) {
        if (progress) progress(v.name + " seed " + std::to_string(seed) + " " + r.to_json().dump());
      });
      auto best = load_checkpoint<float>(result.best_checkpoint);
      const auto report = evaluate(*best.model, best.charset, test, cfg.beam_width);
      std::ofstream(dir / "test_report.jsonl") << report.to_jsonl();
      row.runs.push_back({seed, report.cer, report.wer, result.best_epoch});
      if (progress) progress(v.name + " seed " + std::to_string(seed) + " test wer " + std::to_string(report.wer));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------- similarity

struct SimilarityMatrix {
  std::vector<std::string> row_labels;  // ground-truth word of each image
  std::vector<std::string> columns;     // lexicon
  std::vector<std::vector<double>> values;

  /// Fraction of rows whose ground-truth column holds the row maximum.
  double argmax_accuracy() const {
    if (values.empty()) return 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double best = *std::max_element(values[i].begin(), values[i].end());
      for (std::size_t j = 0; j < columns.size(); ++j) {
        if (columns[j] == row_labels[i] && values[i][j] >= best) {
          ++hits;
          break;
        }
      }
    }
    return static_cast<double>(hits) / static_cast<double>(values.size());
  }

  /// Tab-separated grid with a header row of column labels.
  std::string to_text() const {
    std::ostringstream os;
    os << "image";
    for (const auto& c : columns) os << '\t' << c;
    os << '\n' << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < values.size(); ++i) {
      os << row_labels[i];
      for (double v : values[i]) os << '\t' << v;
      os << '\n';
    }
    return os.str();
  }

  /// Color-mapped image, one `cell` x `cell` block per entry, -1 dark to +1 bright.
  void write_heatmap(const std::filesystem::path& path, int cell = 8) const {
    if (values.empty()) throw InvalidInputError("empty similarity matrix");
    cv::Mat gray(static_cast<int>(values.size()), static_cast<int>(columns.size()), CV_8U);
    for (int i = 0; i < gray.rows; ++i)
      for (int j = 0; j < gray.cols; ++j)
        gray.at<std::uint8_t>(i, j) = cv::saturate_cast<std::uint8_t>((values[i][j] + 1.0) * 127.5);
    cv::Mat big, color;
    cv::resize(gray, big, cv::Size(gray.cols * cell, gray.rows * cell), 0, 0, cv::INTER_NEAREST);
    cv::applyColorMap(big, color, cv::COLORMAP_VIRIDIS);
    if (!cv::imwrite(path.string(), color)) throw DataError("cannot write heatmap " + path.string());
  }
};

/// Entry (i, j) = cos(S_i, E_j) between the predicted semantic vector of
/// image i and the embedding of lexicon word j.
template <typename T>
SimilarityMatrix similarity_matrix(Recognizer<T>& model, const ImageBank& images,
                                   const std::vector<std::string>& lexicon, const EmbeddingTable& embeddings,
                                   int batch_size = 16) {
  if (lexicon.empty()) throw InvalidInputError("similarity: empty lexicon");
  if (embeddings.dimension() != model.config().embedding_dim) {
    throw ShapeError("similarity: embedding dimension " + std::to_string(embeddings.dimension()) +
                     " does not match the model's " + std::to_string(model.config().embedding_dim));
  }
  std::vector<std::vector<float>> cols;
  for (const auto& w : lexicon) cols.push_back(embed_word(w, embeddings));

  SimilarityMatrix m;
  m.columns = lexicon;
  m.row_labels = images.words;
  NoGradGuard guard;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<cv::Mat> chunk(images.canvases.begin() + static_cast<std::ptrdiff_t>(start),
                               images.canvases.begin() + static_cast<std::ptrdiff_t>(end));
    const auto s = model.forward(images_tensor<T>(chunk), false).semantics;
    const auto d = static_cast<std::size_t>(s.dim(1));
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      std::vector<float> row(s.values().begin() + static_cast<std::ptrdiff_t>(r * d),
                             s.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
      std::vector<double> out;
      for (const auto& c : cols) {
        try {
          out.push_back(cosine_similarity<float>(row, c));
        } catch (const DegenerateError&) {
          throw DegenerateError("similarity: zero-norm semantic vector for image " + images.ids[start + r]);
        }
      }
      m.values.push_back(std::move(out));
    }
  }
  return m;
}

}  // namespace semhtr
