#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "semhtr/dataset.hpp"
#include "semhtr/font.hpp"
#include "semhtr/image.hpp"
#include "semhtr/synth.hpp"

namespace fs = std::filesystem;
using namespace semhtr;

namespace {

const fs::path kData = SEMHTR_DATA_DIR;

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("semhtr_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SynthConfig small_synth(std::vector<std::string> words, std::uint64_t seed = 3) {
  SynthConfig cfg;
  cfg.lexicon = std::move(words);
  cfg.fonts = {kData / "fonts" / "DejaVuSans.ttf"};
  cfg.samples_per_word = 2;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(Charset, BuiltFromSamplesIsSortedAndRoundTrips) {
  std::vector<WordSample> samples{{"a.png", "cab", Split::kTrain}, {"b.png", "bad", Split::kVal}};
  Charset cs = build_charset(samples);
  EXPECT_EQ(cs.symbols(), U"abcd");
  EXPECT_EQ(cs.size(), 8);
  auto ids = encode_transcription("dab", cs);
  ASSERT_EQ(ids.size(), 4u);
  EXPECT_EQ(ids.back(), Charset::kEos);
  EXPECT_EQ(decode_tokens(ids, cs), "dab");
  EXPECT_THROW(encode_transcription("abz", cs), CoverageError);
  EXPECT_EQ(encode_transcription("abz", cs, UnknownPolicy::kMapToUnk)[2], Charset::kUnk);
}

TEST(Dataset, LoadsIndexAndNormalizes) {
  auto dir = scratch("index");
  cv::Mat img(10, 20, CV_8U, cv::Scalar(200));
  fs::create_directories(dir / "img");
  write_png(img, dir / "img" / "1.png");
  write_png(img, dir / "img" / "2.png");
  // "e" + combining acute composes to U+00E9 under NFC.
  write_file(dir / "train.txt", "img/1.png\tcafe\xCC\x81  \r\n\nimg/2.png\tword\n");
  write_file(dir / "val.txt", "");
  write_file(dir / "test.txt", "");
  auto all = load_dataset(dir);
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].transcription, "caf\xC3\xA9");
  EXPECT_EQ(all[1].transcription, "word");
  EXPECT_EQ(filter_split(all, Split::kTrain).size(), 2u);
}

TEST(Dataset, ReportsMalformedLinesWithLineNumbers) {
  auto dir = scratch("bad_index");
  write_png(cv::Mat(4, 4, CV_8U, cv::Scalar(0)), dir / "x.png");
  auto expect_error = [&](const std::string& body, const std::string& fragment) {
    write_file(dir / "train.txt", body);
    try {
      load_index(dir, Split::kTrain);
      FAIL() << "expected ParseError for " << body;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_error("x.png\tok\nno-tab-here\n", ":2");
  expect_error("x.png\t   \n", "empty transcription");
  expect_error("missing.png\tword\n", "image not found");
  expect_error("x.png\tbad\xFF\n", "invalid UTF-8");
  EXPECT_THROW(load_index(dir, Split::kVal), DataError);
}

TEST(Dataset, LexiconRejectsInnerWhitespace) {
  auto dir = scratch("lexicon");
  write_file(dir / "ok.txt", "alpha\n beta \nalpha\n\n");
  EXPECT_EQ(read_lexicon(dir / "ok.txt"), (std::vector<std::string>{"alpha", "beta"}));
  write_file(dir / "bad.txt", "alpha\ntwo words\n");
  EXPECT_THROW(read_lexicon(dir / "bad.txt"), ParseError);
  EXPECT_GE(read_lexicon(kData / "lexicon_en.txt").size(), 500u);
}

TEST(Image, PreprocessResizesAndNormalizes) {
  cv::Mat odd(31, 417, CV_8U, cv::Scalar(255));
  auto v = preprocess(odd);
  ASSERT_EQ(v.size(), static_cast<std::size_t>(kInputHeight * kInputWidth));
  for (float x : v) ASSERT_NEAR(x, 1.0f, 1e-6f);
  cv::Mat grey(64, 256, CV_8U, cv::Scalar(0));
  for (float x : preprocess(grey)) ASSERT_NEAR(x, -1.0f, 1e-6f);
  cv::Mat mid(20, 30, CV_8UC3, cv::Scalar(51, 51, 51));
  for (float x : preprocess(mid)) ASSERT_NEAR(x, 51.0f / 127.5f - 1.0f, 1e-5f);
}

TEST(Image, UndecodableFileIsDataError) {
  auto dir = scratch("decode");
  write_file(dir / "junk.png", "not an image");
  EXPECT_THROW(load_grayscale(dir / "junk.png"), DataError);
}

TEST(Augment, DeterministicPerSeedAndIdentityWhenDisabled) {
  cv::Mat canvas(kInputHeight, kInputWidth, CV_32F);
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (int i = 0; i < canvas.rows; ++i)
    for (int j = 0; j < canvas.cols; ++j) canvas.at<float>(i, j) = u(rng);

  AugmentSettings all;
  all.p_affine = all.p_elastic = all.p_brightness = all.p_contrast = 1.0;
  cv::Mat a = augment(canvas, all, 17), b = augment(canvas, all, 17), c = augment(canvas, all, 18);
  EXPECT_EQ(cv::norm(a, b, cv::NORM_INF), 0.0);
  EXPECT_GT(cv::norm(a, c, cv::NORM_INF), 0.0);
  double lo, hi;
  cv::minMaxLoc(a, &lo, &hi);
  EXPECT_GE(lo, 0.0);
  EXPECT_LE(hi, 1.0);
  EXPECT_EQ(cv::norm(augment(canvas, AugmentSettings::none(), 17), canvas, cv::NORM_INF), 0.0);
}

TEST(Font, CoverageMatchesScripts) {
  FontCoverage latin(kData / "fonts" / "DejaVuSans.ttf");
  FontCoverage deva(kData / "fonts" / "NotoSansDevanagari-Regular.ttf");
  EXPECT_TRUE(latin.covers(U"abcXYZ"));
  EXPECT_FALSE(latin.covers(U'क'));
  EXPECT_TRUE(deva.covers(U"किताब"));
  EXPECT_GT(latin.size(), 1000u);
  auto dir = scratch("font");
  write_file(dir / "fake.ttf", "nope");
  EXPECT_THROW(FontCoverage(dir / "fake.ttf"), DataError);
}

TEST(Synth, SplitsByWordEightyTenTen) {
  std::vector<std::string> words;
  for (int i = 0; i < 100; ++i) words.push_back("w" + std::to_string(i));
  auto dir = scratch("synth_counts");
  auto cfg = small_synth(words);
  cfg.samples_per_word = 5;
  cfg.font_height = {16, 18};
  auto summary = synthesize_dataset(cfg, dir);
  EXPECT_EQ(summary.images, 500u);
  EXPECT_EQ(summary.train, 400u);
  EXPECT_EQ(summary.val, 50u);
  EXPECT_EQ(summary.test, 50u);

  auto all = load_dataset(dir);
  ASSERT_EQ(all.size(), 500u);
  std::map<std::string, std::set<Split>> seen;
  for (const auto& s : all) seen[s.transcription].insert(s.split);
  EXPECT_EQ(seen.size(), 100u);
  for (const auto& [w, splits] : seen) EXPECT_EQ(splits.size(), 1u) << w;

  std::ifstream prov(dir / "provenance.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(prov, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("font") && j.contains("blur_sigma") && j.contains("occlusions"));
    ++n;
  }
  EXPECT_EQ(n, 500u);
}

TEST(Synth, SameSeedGivesIdenticalBytes) {
  auto cfg = small_synth({"alpha", "beta", "gamma", "delta"}, 11);
  auto a = scratch("synth_a"), b = scratch("synth_b"), c = scratch("synth_c");
  synthesize_dataset(cfg, a);
  synthesize_dataset(cfg, b);
  cfg.seed = 12;
  synthesize_dataset(cfg, c);
  bool any_diff = false;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(read_file(e.path()), read_file(b / rel)) << rel;
    if (fs::exists(c / rel) && read_file(e.path()) != read_file(c / rel)) any_diff = true;
  }
  EXPECT_TRUE(any_diff);
}

TEST(Synth, OcclusionStripsAreBlank) {
  auto cfg = small_synth({"occluded"});
  cfg.occlusion_count = {1, 1};
  cfg.occlusion_width = {3, 3};
  cfg.blur_sigma = {0, 0};
  auto dir = scratch("synth_occ");
  auto summary = synthesize_dataset(cfg, dir);
  for (const auto& p : summary.records) {
    ASSERT_EQ(p.occlusions.size(), 1u);
    EXPECT_EQ(p.occlusions[0].width, 3);
    cv::Mat img = load_grayscale(dir / p.path);
    cv::Mat strip = img.colRange(p.occlusions[0].x, p.occlusions[0].x + 3);
    double lo;
    cv::minMaxLoc(strip, &lo);
    EXPECT_EQ(lo, 255.0);
  }
}

TEST(Synth, MultiScriptLexiconUsesCoveringFonts) {
  auto cfg = small_synth(read_lexicon(kData / "lexicon_multiscript.txt"));
  cfg.fonts.push_back(kData / "fonts" / "NotoSansDevanagari-Regular.ttf");
  cfg.samples_per_word = 1;
  auto summary = synthesize_dataset(cfg, scratch("synth_multi"));
  EXPECT_EQ(summary.images, 40u);
  for (const auto& p : summary.records) {
    const bool deva = unicode::to_code_points(p.word)[0] >= 0x0900;
    if (deva) {
      EXPECT_EQ(p.font, "NotoSansDevanagari-Regular.ttf") << p.word;
    }
  }
}

TEST(Synth, ReportsUncoveredCharactersAndMissingFonts) {
  auto cfg = small_synth({"ok", "कम"});
  try {
    synthesize_dataset(cfg, scratch("synth_cov"));
    FAIL() << "expected CoverageError";
  } catch (const CoverageError& e) {
    EXPECT_NE(std::string(e.what()).find("U+0915"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("U+092E"), std::string::npos) << e.what();
  }
  cfg.fonts = {kData / "fonts" / "NoSuchFont.ttf"};
  EXPECT_THROW(synthesize_dataset(cfg, scratch("synth_nofont")), DataError);
}
