// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "semhtr/evaluation.hpp"
#include "semhtr/synth.hpp"

namespace fs = std::filesystem;
using namespace semhtr;

namespace {

const fs::path kData = SEMHTR_DATA_DIR;

struct Fixture {
  std::vector<WordSample> samples;
  EmbeddingTable embeddings;
  Charset charset;
  std::unique_ptr<Recognizer<float>> model;
};

Fixture& fixture() {
  static Fixture f = [] {
    Fixture x;
    const std::vector<std::string> words{"ink", "pen", "nib", "pine"};
    SynthConfig sc;
    sc.lexicon = words;
    sc.fonts = {kData / "fonts" / "DejaVuSans.ttf"};
    sc.samples_per_word = 2;
    sc.seed = 3;
    const auto dir = fs::temp_directory_path() / "semhtr_test_evaluation";
    fs::remove_all(dir);
    synthesize_dataset(sc, dir);
    x.samples = load_dataset(dir);
    x.embeddings = EmbeddingTable(32, SubwordConfig{});
    std::mt19937_64 rng(8);
    std::normal_distribution<float> n(0.f, 1.f);
    for (const auto& w : words) {
      std::vector<float> v(32);
      for (auto& e : v) e = n(rng);
      x.embeddings.set_word(w, v);
    }
    x.charset = charset_for(x.samples, {});
    x.model = std::make_unique<Recognizer<float>>(ModelConfig::toy(), x.charset.size(), 5);
    return x;
  }();
  return f;
}

}  // namespace

TEST(Ablation, GridOrderAndVariantConfig) {
  const auto grid = ablation_grid();
  ASSERT_EQ(grid.size(), 5u);
  EXPECT_EQ(grid.front().name, "baseline");
  EXPECT_EQ(grid.back().name, "+Att+WES+INIT");
  EXPECT_THROW(find_variant("+WES"), ConfigError);

  TrainConfig base;
  base.lambda = 0.5;
  const auto att = variant_config(base, find_variant("+Att"), 0.5, 7);
  EXPECT_TRUE(att.model.decoder.use_attention);
  EXPECT_FALSE(att.model.decoder.semantic_init);
  EXPECT_EQ(att.lambda, 0.0);
  EXPECT_EQ(att.seed, 7u);
  const auto full = variant_config(base, find_variant("+Att+WES+INIT"), 0.5, 1);
  EXPECT_TRUE(full.model.decoder.semantic_init);
  EXPECT_EQ(full.lambda, 0.5);
  const auto none = variant_config(base, find_variant("baseline"), 0.5, 1);
  EXPECT_FALSE(none.model.decoder.use_attention);
}

TEST(Ablation, RowMeansAndTable) {
  AblationRow row{find_variant("+Att+WES"), {{1, 0.1, 0.3, 4}, {2, 0.2, 0.5, 6}}};
  EXPECT_DOUBLE_EQ(row.mean_wer(), 0.4);
  EXPECT_NEAR(row.mean_cer(), 0.15, 1e-12);
  const auto j = row.to_json();
  EXPECT_EQ(j["runs"].size(), 2u);
  EXPECT_NE(format_ablation({row}).find("40.00"), std::string::npos);
}

TEST(Evaluate, ReportCoversEverySample) {
  auto& f = fixture();
  const auto bank = ImageBank::load(f.samples);
  const auto report = evaluate(*f.model, f.charset, bank, 2);
  EXPECT_EQ(report.samples, f.samples.size());
  EXPECT_EQ(report.records.size(), f.samples.size());
  EXPECT_DOUBLE_EQ(report.crr, 1.0 - report.cer);
  EXPECT_DOUBLE_EQ(report.wrr, 1.0 - report.wer);
  EXPECT_EQ(uncovered_characters(f.charset, f.samples), U"");
  std::vector<WordSample> odd{{"x.png", "pink", Split::kTest}, {"y.png", "zap", Split::kTest}};
  EXPECT_EQ(uncovered_characters(f.charset, odd), U"az");
}

TEST(Similarity, RangeDuplicatesAndShapes) {
  auto& f = fixture();
  const auto bank = ImageBank::load(f.samples);
  const std::vector<std::string> lexicon{"ink", "pen", "ink", "pine"};
  const auto m = similarity_matrix(*f.model, bank, lexicon, f.embeddings);
  ASSERT_EQ(m.values.size(), f.samples.size());
  for (const auto& row : m.values) {
    ASSERT_EQ(row.size(), 4u);
    for (double v : row) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(row[0], row[2]);
  }
  EXPECT_NE(m.to_text().find("image\tink\tpen"), std::string::npos);

  EmbeddingTable wrong(16, SubwordConfig{});
  wrong.set_word("ink", std::vector<float>(16, 1.f));
  EXPECT_THROW(similarity_matrix(*f.model, bank, {"ink"}, wrong), ShapeError);
  EXPECT_THROW(similarity_matrix(*f.model, bank, {}, f.embeddings), InvalidInputError);
}

TEST(Similarity, ArgmaxAccuracyCountsGroundTruthColumn) {
  SimilarityMatrix m;
  m.columns = {"a", "b"};
  m.row_labels = {"a", "b", "b"};
  m.values = {{0.9, 0.1}, {0.2, 0.3}, {0.5, -0.5}};
  EXPECT_NEAR(m.argmax_accuracy(), 2.0 / 3.0, 1e-12);
}
