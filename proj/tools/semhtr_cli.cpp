// SPDX-License-Identifier: Apache-2.0
//
// semhtr: synthesize | embed | train | evaluate | predict | ablate | similarity
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semhtr/evaluation.hpp"
#include "semhtr/synth.hpp"

namespace fs = std::filesystem;
using namespace semhtr;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config file)");
  cmd->add_option("--config", c.config, "Flat key = value config file")->check(CLI::ExistingFile);
}

/// Applies key = value entries through a per-command setter table.
template <typename Setter>
void apply_entries(const std::string& path, const std::map<std::string, Setter>& setters) {
  if (path.empty()) return;
  for (const auto& e : read_key_values(path)) {
    auto it = setters.find(e.key);
    if (it == setters.end()) {
      throw ConfigError(path + ":" + std::to_string(e.line) + ": unknown config key '" + e.key + "'");
    }
    it->second(e.key, e.value);
  }
}

TrainConfig train_config(const Common& c, const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> values;
  if (!c.config.empty()) values = read_config_file(c.config);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    const std::string key(unicode::trim(std::string_view(kv).substr(0, eq)));
    if (key != "model" && !config_detail::fields().count(key)) throw ConfigError("unknown config key '" + key + "'");
    values[key] = std::string(unicode::trim(std::string_view(kv).substr(eq + 1)));
  }
  if (c.seed) values["seed"] = std::to_string(*c.seed);
  return TrainConfig::from_map(values);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<WordSample> split_or_all(const fs::path& root, const std::string& split) {
  if (split == "all") return load_dataset(root);
  return load_index(root, parse_split(split));
}

// ---------------------------------------------------------------- commands

struct SynthFlags {
  std::vector<fs::path> fonts;
  std::optional<int> samples_per_word, occlusions_max, occlusion_width_max;
  std::optional<double> blur_max, ink_alpha_min;
};

int cmd_synthesize(const Common& common, const SynthFlags& flags, const std::string& lexicon, const std::string& out) {
  SynthConfig cfg;
  using config_detail::to_double;
  using config_detail::to_int;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"samples_per_word", [&](auto& k, auto& v) { cfg.samples_per_word = to_int(k, v); }},
      {"seed", [&](auto& k, auto& v) { cfg.seed = config_detail::to_u64(k, v); }},
      {"font_height_min", [&](auto& k, auto& v) { cfg.font_height.min = to_int(k, v); }},
      {"font_height_max", [&](auto& k, auto& v) { cfg.font_height.max = to_int(k, v); }},
      {"slant_min", [&](auto& k, auto& v) { cfg.slant.min = to_double(k, v); }},
      {"slant_max", [&](auto& k, auto& v) { cfg.slant.max = to_double(k, v); }},
      {"blur_min", [&](auto& k, auto& v) { cfg.blur_sigma.min = to_double(k, v); }},
      {"blur_max", [&](auto& k, auto& v) { cfg.blur_sigma.max = to_double(k, v); }},
      {"occlusion_count_min", [&](auto& k, auto& v) { cfg.occlusion_count.min = to_int(k, v); }},
      {"occlusion_count_max", [&](auto& k, auto& v) { cfg.occlusion_count.max = to_int(k, v); }},
      {"occlusion_width_min", [&](auto& k, auto& v) { cfg.occlusion_width.min = to_int(k, v); }},
      {"occlusion_width_max", [&](auto& k, auto& v) { cfg.occlusion_width.max = to_int(k, v); }},
      {"ink_alpha_min", [&](auto& k, auto& v) { cfg.ink_alpha.min = to_double(k, v); }},
      {"ink_alpha_max", [&](auto& k, auto& v) { cfg.ink_alpha.max = to_double(k, v); }},
  };
  // Flags given on the command line win over the config file.
  apply_entries(common.config, setters);
  cfg.fonts = flags.fonts;
  if (flags.samples_per_word) cfg.samples_per_word = *flags.samples_per_word;
  if (flags.occlusions_max) cfg.occlusion_count.max = *flags.occlusions_max;
  if (flags.occlusion_width_max) cfg.occlusion_width.max = *flags.occlusion_width_max;
  if (flags.blur_max) cfg.blur_sigma.max = *flags.blur_max;
  if (flags.ink_alpha_min) cfg.ink_alpha.min = *flags.ink_alpha_min;
  if (common.seed) cfg.seed = *common.seed;
  cfg.lexicon = read_lexicon(lexicon);
  const auto summary = synthesize_dataset(cfg, out);
  std::cout << summary.images << " images (train " << summary.train << ", val " << summary.val << ", test "
            << summary.test << ") written to " << out << "\n";
  return 0;
}

struct EmbedFlags {
  std::optional<int> dimension, epochs, window, negatives;
};

int cmd_embed(const Common& common, const EmbedFlags& flags, const std::string& corpus, const std::string& out) {
  SkipGramConfig sg;
  SubwordConfig sub;
  using config_detail::to_double;
  using config_detail::to_int;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"dimension", [&](auto& k, auto& v) { sg.dimension = to_int(k, v); }},
      {"window", [&](auto& k, auto& v) { sg.window = to_int(k, v); }},
      {"epochs", [&](auto& k, auto& v) { sg.epochs = to_int(k, v); }},
      {"negatives", [&](auto& k, auto& v) { sg.negatives = to_int(k, v); }},
      {"learning_rate", [&](auto& k, auto& v) { sg.learning_rate = to_double(k, v); }},
      {"seed", [&](auto& k, auto& v) { sg.seed = config_detail::to_u64(k, v); }},
      {"l_min", [&](auto& k, auto& v) { sub.l_min = to_int(k, v); }},
      {"l_max", [&](auto& k, auto& v) { sub.l_max = to_int(k, v); }},
      {"boundaries", [&](auto& k, auto& v) { sub.use_boundaries = config_detail::to_bool(k, v); }},
  };
  apply_entries(common.config, setters);
  if (flags.dimension) sg.dimension = *flags.dimension;
  if (flags.epochs) sg.epochs = *flags.epochs;
  if (flags.window) sg.window = *flags.window;
  if (flags.negatives) sg.negatives = *flags.negatives;
  if (common.seed) sg.seed = *common.seed;
  const auto table = train_skipgram(read_corpus(corpus), sub, sg);
  save_embedding_file(table, out);
  std::cout << table.word_count() << " words, " << table.subword_count() << " subwords, dimension "
            << table.dimension() << " written to " << out << "\n";
  return 0;
}

int cmd_train(const Common& common, const std::vector<std::string>& overrides, const std::string& data,
              const std::string& embeddings, const std::string& out) {
  const auto cfg = train_config(common, overrides);
  auto train_set = load_index(data, Split::kTrain);
  std::vector<WordSample> val_set;
  if (fs::exists(fs::path(data) / "val.txt")) val_set = load_index(data, Split::kVal);
  const auto table = load_embedding_file(embeddings);
  Trainer<float> trainer(train_set, val_set, table, cfg);
  write_text(fs::path(out) / "config.txt", format_config(cfg));
  std::cerr << "training on " << trainer.train_size() << " images, validating on " << trainer.val_size()
            << ", charset " << trainer.charset().size() << " tokens, " << trainer.model().store().parameter_count()
            << " parameters\n";
  auto result = trainer.run(out, [](const EpochRecord& r) { std::cout << r.to_json().dump() << std::endl; });
  std::cerr << "best epoch " << result.best_epoch << " (val WER " << result.best_val_wer << "), checkpoints in "
            << out << "\n";
  return 0;
}

int cmd_evaluate(const Common& common, const std::string& checkpoint, const std::string& data,
                 const std::string& split, std::optional<int> beam_width, const std::string& out) {
  auto loaded = load_checkpoint<float>(checkpoint);
  int width = loaded.config.beam_width;
  if (!common.config.empty()) width = load_train_config(common.config).beam_width;
  if (beam_width) width = *beam_width;
  if (width < 1) throw ConfigError("--beam-width must be >= 1");
  const auto samples = split_or_all(data, split);
  if (samples.empty()) throw DataError("no samples in split '" + split + "' of " + data);
  if (const auto missing = uncovered_characters(loaded.charset, samples); !missing.empty()) {
    std::cerr << "warning: " << missing.size() << " reference character(s) are outside the checkpoint charset ("
              << unicode::to_utf8(missing) << "); they can never be recognized\n";
  }
  const auto report = evaluate(*loaded.model, loaded.charset, ImageBank::load(samples), width);
  if (!out.empty()) write_text(out, report.to_jsonl());
  std::cout << report.summary_json().dump() << "\n";
  return 0;
}

int cmd_predict(const Common& common, const std::string& checkpoint, const std::vector<std::string>& images,
                std::optional<int> beam_width) {
  auto loaded = load_checkpoint<float>(checkpoint);
  int width = loaded.config.beam_width;
  if (!common.config.empty()) width = load_train_config(common.config).beam_width;
  if (beam_width) width = *beam_width;
  if (width < 1) throw ConfigError("--beam-width must be >= 1");
  std::vector<cv::Mat> canvases;
  for (const auto& p : images) canvases.push_back(resize_to_canvas(load_grayscale(p)));
  const auto hyps = recognize_canvases(*loaded.model, loaded.charset, canvases, width);
  for (std::size_t i = 0; i < images.size(); ++i) std::cout << images[i] << '\t' << hyps[i] << '\n';
  return 0;
}

int cmd_ablate(const Common& common, const std::vector<std::string>& overrides, const std::string& data,
               const std::string& embeddings, const std::vector<std::string>& variant_names, int runs,
               const std::string& out) {
  const auto cfg = train_config(common, overrides);
  std::vector<AblationVariant> variants;
  if (variant_names.empty()) {
    variants = ablation_grid();
  } else {
    for (const auto& n : variant_names) variants.push_back(find_variant(n));
  }
  if (runs < 1) throw ConfigError("--runs must be >= 1");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < runs; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
  const auto train_set = load_index(data, Split::kTrain);
  const auto val_set = load_index(data, Split::kVal);
  const auto test_set = load_index(data, Split::kTest);
  const auto table = load_embedding_file(embeddings);
  const auto rows = run_ablation(cfg, train_set, val_set, test_set, table, variants, seeds, out,
                                 [](const std::string& msg) { std::cerr << msg << "\n"; });
  std::string jsonl;
  for (const auto& r : rows) jsonl += r.to_json().dump() + "\n";
  write_text(fs::path(out) / "ablation.jsonl", jsonl);
  const auto text = format_ablation(rows);
  write_text(fs::path(out) / "ablation.txt", text);
  std::cout << text;
  return 0;
}

int cmd_similarity(const Common& common, const std::string& checkpoint, const std::string& data,
                   const std::string& split, const std::string& lexicon, const std::string& embeddings,
                   const std::string& out, const std::string& heatmap, int limit) {
  (void)common;
  auto loaded = load_checkpoint<float>(checkpoint);
  auto samples = split_or_all(data, split);
  if (limit > 0 && samples.size() > static_cast<std::size_t>(limit)) samples.resize(static_cast<std::size_t>(limit));
  if (samples.empty()) throw DataError("no samples in split '" + split + "' of " + data);
  std::vector<std::string> words;
  if (lexicon.empty()) {
    for (const auto& s : samples) words.push_back(s.transcription);
  } else {
    words = read_lexicon(lexicon);
  }
  const auto table = load_embedding_file(embeddings);
  const auto m = similarity_matrix(*loaded.model, ImageBank::load(samples), words, table);
  write_text(out, m.to_text());
  if (!heatmap.empty()) m.write_heatmap(heatmap);
  std::cout << m.values.size() << " x " << m.columns.size() << " matrix written to " << out
            << ", ground-truth argmax rate " << m.argmax_accuracy() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Word image recognizer with semantic supervision"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synthesize", "Render a synthetic word-image dataset");
  SynthFlags synth_flags;
  std::string synth_lexicon, synth_out;
  synth->add_option("--lexicon", synth_lexicon, "One word per line")->required()->check(CLI::ExistingFile);
  synth->add_option("--fonts", synth_flags.fonts, "TrueType font files")->required();
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--samples-per-word", synth_flags.samples_per_word, "Images per word (default 5)");
  synth->add_option("--blur-max", synth_flags.blur_max, "Largest Gaussian blur sigma");
  synth->add_option("--occlusions-max", synth_flags.occlusions_max, "Most erased strips per image");
  synth->add_option("--occlusion-width-max", synth_flags.occlusion_width_max, "Widest erased strip in pixels");
  synth->add_option("--ink-alpha-min", synth_flags.ink_alpha_min, "Faintest ink opacity");
  add_common(synth, common);

  auto* embed = app.add_subcommand("embed", "Train subword skip-gram word embeddings");
  EmbedFlags embed_flags;
  std::string corpus, embed_out;
  embed->add_option("--corpus", corpus, "Whitespace-tokenized text, one sentence per line")
      ->required()
      ->check(CLI::ExistingFile);
  embed->add_option("--out", embed_out, "Embedding file to write")->required();
  embed->add_option("--dim", embed_flags.dimension, "Vector dimension (default 32)");
  embed->add_option("--epochs", embed_flags.epochs, "Passes over the corpus (default 5)");
  embed->add_option("--window", embed_flags.window, "Context window radius (default 2)");
  embed->add_option("--negatives", embed_flags.negatives, "Negative samples per pair (default 5)");
  add_common(embed, common);

  std::string data, embeddings, out, checkpoint, split = "test";
  std::vector<std::string> overrides;
  std::optional<int> beam_width;

  auto* train = app.add_subcommand("train", "Train a recognizer");
  train->add_option("--data", data, "Dataset root with train.txt (and optionally val.txt)")
      ->required()
      ->check(CLI::ExistingDirectory);
  train->add_option("--embeddings", embeddings, "Embedding file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "Directory for checkpoints and metrics")->required();
  train->add_option("--set", overrides, "Config override key=value (repeatable)");
  add_common(train, common);

  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a dataset split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", split, "train, val, test or all");
  eval->add_option("--beam-width", beam_width, "Beam width (1 = greedy; default from the checkpoint, 5)");
  eval->add_option("--out", out, "Report file (JSON lines)");
  add_common(eval, common);

  auto* predict = app.add_subcommand("predict", "Transcribe images");
  std::vector<std::string> images;
  predict->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  predict->add_option("--beam-width", beam_width, "Beam width (1 = greedy)");
  predict->add_option("images", images, "Image files")->required();
  add_common(predict, common);

  auto* ablate = app.add_subcommand("ablate", "Train and score the attention / WES / INIT grid");
  std::vector<std::string> variant_names;
  int runs = 1;
  ablate->add_option("--data", data, "Dataset root with train, val and test splits")
      ->required()
      ->check(CLI::ExistingDirectory);
  ablate->add_option("--embeddings", embeddings, "Embedding file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", out, "Output directory")->required();
  ablate->add_option("--variants", variant_names, "Subset of: baseline +Att +Att+WES +Att+INIT +Att+WES+INIT");
  ablate->add_option("--runs", runs, "Seeds per variant (seed, seed+1, ...)");
  ablate->add_option("--set", overrides, "Config override key=value (repeatable)");
  add_common(ablate, common);

  auto* sim = app.add_subcommand("similarity", "Cosine similarity of predicted semantics and word embeddings");
  std::string lexicon, heatmap;
  int limit = 50;
  sim->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sim->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  sim->add_option("--split", split, "train, val, test or all");
  sim->add_option("--embeddings", embeddings, "Embedding file")->required()->check(CLI::ExistingFile);
  sim->add_option("--lexicon", lexicon, "Column words (default: the images' transcriptions)");
  sim->add_option("--limit", limit, "Use at most this many images (0 = all)");
  sim->add_option("--out", out, "Matrix file")->required();
  sim->add_option("--heatmap", heatmap, "Optional heatmap PNG");
  add_common(sim, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synthesize(common, synth_flags, synth_lexicon, synth_out);
    if (*embed) return cmd_embed(common, embed_flags, corpus, embed_out);
    if (*train) return cmd_train(common, overrides, data, embeddings, out);
    if (*eval) return cmd_evaluate(common, checkpoint, data, split, beam_width, out);
    if (*predict) return cmd_predict(common, checkpoint, images, beam_width);
    if (*ablate) return cmd_ablate(common, overrides, data, embeddings, variant_names, runs, out);
    if (*sim) return cmd_similarity(common, checkpoint, data, split, lexicon, embeddings, out, heatmap, limit);
  } catch (const semhtr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const cv::Exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::bad_alloc&) {
    std::cerr << "error: out of memory\n";
    return 2;
  }
  return 1;
}
