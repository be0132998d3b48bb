#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "semhtr/synth.hpp"
#include "semhtr/training.hpp"

namespace fs = std::filesystem;
using namespace semhtr;
using gradtest::random_tensor;

namespace {

const fs::path kData = SEMHTR_DATA_DIR;

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("semhtr_test_training_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.set("model", "toy");
  c.epochs = 1;
  c.batch_size = 4;
  c.augment = false;
  c.val_fraction = 0;
  return c;
}

/// Embedding table where each word gets a fixed random vector.
EmbeddingTable word_table(const std::vector<std::string>& words, int dim) {
  EmbeddingTable t(dim, SubwordConfig{});
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(0.f, 1.f);
  for (const auto& w : words) {
    std::vector<float> v(static_cast<std::size_t>(dim));
    for (auto& x : v) x = n(rng);
    t.set_word(w, v);
  }
  return t;
}

struct TinySet {
  std::vector<WordSample> samples;
  EmbeddingTable embeddings;
};

TinySet tiny_set(const std::string& name) {
  const std::vector<std::string> words{"ab", "ba", "abc", "cab", "bca", "cc"};
  SynthConfig sc;
  sc.lexicon = words;
  sc.fonts = {kData / "fonts" / "DejaVuSans.ttf"};
  sc.samples_per_word = 1;
  sc.seed = 5;
  auto dir = scratch(name);
  synthesize_dataset(sc, dir);
  auto samples = load_dataset(dir);
  for (auto& s : samples) s.split = Split::kTrain;
  return {samples, word_table(words, 32)};
}

}  // namespace

TEST(Config, ParsesFlatFileWithPresetFirst) {
  auto dir = scratch("config");
  std::ofstream(dir / "a.cfg") << "# comment\nepochs = 7\ndecoder_hidden = 48\nmodel = toy\n\nlambda=0\nuse_attention = false\n";
  auto c = load_train_config(dir / "a.cfg");
  EXPECT_EQ(c.epochs, 7);
  EXPECT_EQ(c.lambda, 0.0);
  EXPECT_EQ(c.model.decoder.hidden, 48);
  EXPECT_EQ(c.model.encoder.stem_channels, ModelConfig::toy().encoder.stem_channels);
  EXPECT_FALSE(c.model.decoder.use_attention);
  auto again = TrainConfig::from_map(c.to_map());
  EXPECT_EQ(again.to_map(), c.to_map());
}

TEST(Config, UnknownKeyAndBadValuesAreConfigErrors) {
  auto dir = scratch("config_bad");
  std::ofstream(dir / "b.cfg") << "epochs = 3\nlearning_rat = 1.0\n";
  try {
    load_train_config(dir / "b.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rat"), std::string::npos);
    EXPECT_EQ(e.exit_code(), 1);
  }
  TrainConfig c;
  EXPECT_THROW(c.set("epochs", "many"), ConfigError);
  EXPECT_THROW(c.set("augment", "maybe"), ConfigError);
  EXPECT_THROW(c.set("model", "huge"), ConfigError);
  EXPECT_THROW(TrainConfig::from_map({{"lambda", "-1"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_map({{"stage_blocks", "1,1"}}), ConfigError);
}

TEST(Loss, LambdaZeroIsRecognitionOnly) {
  std::mt19937_64 rng(1);
  auto logits = random_tensor({6, 5}, rng);
  auto s = random_tensor({2, 4}, rng);
  auto e = random_tensor({2, 4}, rng, 1.0, false);
  std::vector<int> targets{4, 2, 3, 0, 2, 0};
  auto l0 = total_loss(logits, targets, s, e, 0.0);
  EXPECT_EQ(l0.value, l0.recognition);
  l0.total.backward();
  EXPECT_TRUE(s.grad().empty() || std::all_of(s.grad().begin(), s.grad().end(), [](double g) { return g == 0.0; }));

  auto l1 = total_loss(logits, targets, s, e, 1.0);
  EXPECT_DOUBLE_EQ(l1.value, l1.recognition + l1.embedding);
}

TEST(Loss, ConfidentCorrectPredictionIsNearZero) {
  const int v = 6;
  std::vector<int> targets{4, 5, 2};
  std::vector<double> z(targets.size() * v, 0.0);
  for (std::size_t r = 0; r < targets.size(); ++r) z[r * v + static_cast<std::size_t>(targets[r])] = 20.0;
  auto logits = Tensor<double>::from({3, v}, z);
  auto s = Tensor<double>::from({1, 3}, {0.2, -1.0, 0.5});
  auto loss = total_loss(logits, targets, s, s, 1.0);
  EXPECT_LT(loss.value, 1e-6);
}

TEST(Loss, PadStepsDoNotChangeRecognitionLoss) {
  std::mt19937_64 rng(2);
  auto logits = random_tensor({4, 7}, rng);
  auto pad_rows = random_tensor({3, 7}, rng);
  auto s = random_tensor({1, 3}, rng);
  std::vector<int> targets{4, 5, 6, 2};
  auto a = total_loss(logits, targets, s, s, 1.0);
  std::vector<int> padded = targets;
  padded.insert(padded.end(), 3, Charset::kPad);
  auto b = total_loss(ops::concat_rows(std::vector<Tensor<double>>{logits, pad_rows}), padded, s, s, 1.0);
  EXPECT_NEAR(a.recognition, b.recognition, 1e-12);
}

TEST(Loss, NonFiniteLossIsNumericError) {
  auto logits = Tensor<double>::from({1, 5}, {0, 0, std::nan(""), 0, 0});
  auto s = Tensor<double>::from({1, 2}, {1, 0});
  EXPECT_THROW(total_loss(logits, {4}, s, s, 1.0), NumericError);
}

TEST(Training, EveryParameterGroupReceivesGradient) {
  auto set = tiny_set("groups");
  Trainer<float> trainer(set.samples, set.samples, set.embeddings, tiny_config());
  auto loss = trainer.batch_loss({0, 1, 2, 3}, 1);
  loss.total.backward();
  for (const char* group : {"rectifier", "encoder", "semantic", "decoder"}) {
    double norm = optim::gradient_norm(trainer.model().store().group(group));
    EXPECT_GT(norm, 0.0) << group;
  }
}

TEST(Training, CoverageErrorsBeforeTraining) {
  auto set = tiny_set("coverage");
  EmbeddingTable partial = word_table({"ab", "ba"}, 32);
  EXPECT_THROW(Trainer<float>(set.samples, set.samples, partial, tiny_config()), CoverageError);
}

TEST(Training, HoldoutIsDeterministicAndDisjoint) {
  std::vector<WordSample> s;
  for (int i = 0; i < 40; ++i) s.push_back({"x" + std::to_string(i) + ".png", "w", Split::kTrain});
  auto [a_train, a_val] = holdout_split(s, 0.1, 3);
  auto [b_train, b_val] = holdout_split(s, 0.1, 3);
  ASSERT_EQ(a_val.size(), 4u);
  EXPECT_EQ(a_train.size(), 36u);
  for (std::size_t i = 0; i < a_val.size(); ++i) EXPECT_EQ(a_val[i].image_path, b_val[i].image_path);
}

TEST(Training, RunsAreReproducibleAndCheckpointsRoundTrip) {
  auto set = tiny_set("repro");
  auto cfg = tiny_config();
  cfg.epochs = 2;
  cfg.augment = true;
  auto dir_a = scratch("repro_a"), dir_b = scratch("repro_b");
  Trainer<float> a(set.samples, set.samples, set.embeddings, cfg);
  auto ra = a.run(dir_a);
  Trainer<float> b(set.samples, set.samples, set.embeddings, cfg);
  auto rb = b.run(dir_b);
  ASSERT_EQ(ra.history.size(), 2u);
  EXPECT_NEAR(ra.history[0].total, rb.history[0].total, 1e-6);
  EXPECT_EQ(ra.history[1].total, rb.history[1].total);

  std::ifstream log(dir_a / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    for (const char* k : {"epoch", "L_r", "L_e", "total", "val_cer", "val_wer"}) EXPECT_TRUE(j.contains(k)) << k;
    ++lines;
  }
  EXPECT_EQ(lines, 2);

  auto loaded = load_checkpoint<float>(ra.last_checkpoint);
  EXPECT_EQ(loaded.epoch, 2);
  EXPECT_EQ(loaded.charset, ra.charset);
  EXPECT_EQ(loaded.history.size(), 2u);
  const auto& original = a.model().store().entries();
  const auto& restored = loaded.model->store().entries();
  ASSERT_EQ(original.size(), restored.size());
  for (std::size_t i = 0; i < original.size(); ++i) {
    EXPECT_EQ(original[i].name, restored[i].name);
    EXPECT_EQ(original[i].tensor.values(), restored[i].tensor.values()) << original[i].name;
  }
  std::vector<cv::Mat> canvases;
  for (const auto& s : set.samples) canvases.push_back(resize_to_canvas(load_grayscale(s.image_path)));
  EXPECT_EQ(recognize_canvases(a.model(), ra.charset, canvases, 3),
            recognize_canvases(*loaded.model, loaded.charset, canvases, 3));
}

TEST(Checkpoint, RejectsCorruptFiles) {
  auto dir = scratch("corrupt");
  std::ofstream(dir / "bad.ckpt") << "NOT-A-CHECKPOINT\n12\n{}\n";
  EXPECT_THROW(load_checkpoint<float>(dir / "bad.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint<float>(dir / "missing.ckpt"), DataError);
}
