// SPDX-License-Identifier: Apache-2.0
//
// Synthetic degraded word images: render lexicon words with TrueType fonts,
// then blur, erase vertical strips and lighten the ink. Output follows the
// dataset index layout plus a provenance.jsonl sidecar.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/freetype.hpp>

#include "semhtr/dataset.hpp"
#include "semhtr/font.hpp"
#include "semhtr/image.hpp"

namespace semhtr {

template <typename V>
struct Range {
  V min{};
  V max{};
};

struct SynthConfig {
  std::vector<std::string> lexicon;
  std::vector<std::filesystem::path> fonts;
  int samples_per_word = 5;
  Range<int> font_height{30, 42};
  Range<double> slant{-0.2, 0.2};
  Range<double> blur_sigma{0.0, 1.2};
  Range<int> occlusion_count{0, 2};
  Range<int> occlusion_width{2, 5};
  Range<double> ink_alpha{0.6, 1.0};
  std::uint64_t seed = 1;

  void validate() const {
    if (lexicon.empty()) throw ConfigError("synthesize: lexicon is empty");
    if (fonts.empty()) throw ConfigError("synthesize: at least one font is required");
    if (samples_per_word < 1) throw ConfigError("synthesize: samples per word must be >= 1");
    auto ordered = [](auto r, const char* name, double lo) {
      if (r.min < lo || r.max < r.min) throw ConfigError(std::string("synthesize: invalid ") + name + " range");
    };
    ordered(font_height, "font height", 8);
    ordered(blur_sigma, "blur", 0);
    ordered(occlusion_count, "occlusion count", 0);
    ordered(occlusion_width, "occlusion width", 0);
    ordered(ink_alpha, "ink alpha", 0);
    if (ink_alpha.max > 1.0) throw ConfigError("synthesize: ink alpha must be <= 1");
    if (slant.max < slant.min) throw ConfigError("synthesize: invalid slant range");
  }
};

struct Occlusion {
  int x = 0;
  int width = 0;
};

/// Everything needed to reproduce one image.
struct Provenance {
  std::string path;  // relative to the dataset root
  std::string word;
  Split split = Split::kTrain;
  std::string font;
  int font_height = 0;
  double slant = 0;
  double blur_sigma = 0;
  double ink_alpha = 1;
  std::vector<Occlusion> occlusions;

  nlohmann::json to_json() const {
    nlohmann::json occ = nlohmann::json::array();
    for (const auto& o : occlusions) occ.push_back({{"x", o.x}, {"width", o.width}});
    return {{"path", path},           {"word", word},   {"split", split_name(split)}, {"font", font},
            {"font_height", font_height}, {"slant", slant}, {"blur_sigma", blur_sigma}, {"ink_alpha", ink_alpha},
            {"occlusions", occ}};
  }
};

struct SynthSummary {
  std::size_t images = 0;
  std::size_t train = 0, val = 0, test = 0;
  std::vector<Provenance> records;
};

/// Word-level 80/10/10 split of the unique words, shuffled by seed.
inline std::map<std::string, Split> split_words(const std::vector<std::string>& words, std::uint64_t seed) {
  std::vector<std::string> order = words;
  std::mt19937_64 rng(derive_seed(seed, 0x5711));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = order.size();
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
  std::map<std::string, Split> out;
  for (std::size_t i = 0; i < n; ++i) out[order[i]] = i < n_train ? Split::kTrain : (i < n_train + n_val ? Split::kVal : Split::kTest);
  return out;
}

namespace detail {

/// Black-on-white 8-bit rendering cropped to the ink with a margin.
inline cv::Mat render_word(cv::freetype::FreeType2& face, const std::string& word, int height, double slant,
                           double alpha, std::mt19937_64& rng) {
  int baseline = 0;
  const cv::Size size = face.getTextSize(word, height, -1, &baseline);
  const int pad = height;
  cv::Mat canvas(size.height + 2 * pad + height, size.width + 2 * pad + height, CV_8UC3, cv::Scalar(255, 255, 255));
  const int ink = static_cast<int>(std::lround(255.0 * (1.0 - alpha)));
  face.putText(canvas, word, cv::Point(pad, pad + height), height, cv::Scalar(ink, ink, ink), -1, cv::LINE_AA, true);
  cv::Mat gray;
  cv::cvtColor(canvas, gray, cv::COLOR_BGR2GRAY);
  if (std::abs(slant) > 1e-6) {
    const double cy = gray.rows / 2.0;
    cv::Mat m = (cv::Mat_<double>(2, 3) << 1, slant, -slant * cy, 0, 1, 0);
    cv::warpAffine(gray, gray, m, gray.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar(255));
  }
  cv::Mat mask = gray < 250;
  cv::Rect box = cv::boundingRect(mask);
  if (box.empty()) throw DataError("font rendered no ink for word '" + word + "'");
  std::uniform_int_distribution<int> margin(2, std::max(3, height / 4));
  const int left = margin(rng), right = margin(rng), top = margin(rng), bottom = margin(rng);
  cv::Rect crop(box.x - left, box.y - top, box.width + left + right, box.height + top + bottom);
  crop &= cv::Rect(0, 0, gray.cols, gray.rows);
  return gray(crop).clone();
}

}  // namespace detail

/// Renders every lexicon word `samples_per_word` times into out_dir.
inline SynthSummary synthesize_dataset(const SynthConfig& config, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  config.validate();

  std::vector<std::string> words;
  {
    std::set<std::string> seen;
    for (const auto& w : config.lexicon) {
      const std::string n = unicode::nfc(unicode::trim(w));
      if (n.empty()) throw DataError("synthesize: lexicon contains an empty word");
      if (seen.insert(n).second) words.push_back(n);
    }
  }

  std::vector<FontCoverage> coverage;
  for (const auto& f : config.fonts) {
    if (!fs::is_regular_file(f)) throw DataError("font file not found: " + f.string());
    coverage.emplace_back(f);
  }
  // Fonts able to render each word; report every character no font covers.
  std::map<std::string, std::vector<std::size_t>> usable;
  std::set<char32_t> missing;
  for (const auto& w : words) {
    const auto cps = unicode::to_code_points(w);
    for (std::size_t i = 0; i < coverage.size(); ++i)
      if (coverage[i].covers(cps)) usable[w].push_back(i);
    if (usable[w].empty()) {
      for (char32_t c : cps) {
        bool any = false;
        for (const auto& cov : coverage) any = any || cov.covers(c);
        if (!any) missing.insert(c);
      }
      if (missing.empty()) {
        throw CoverageError("no single font covers every character of '" + w + "'");
      }
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (char32_t c : missing) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "U+%04X", static_cast<unsigned>(c));
      list += (list.empty() ? "" : ", ") + unicode::to_utf8(c) + " (" + buf + ")";
    }
    throw CoverageError("no font can render: " + list);
  }

  std::vector<cv::Ptr<cv::freetype::FreeType2>> faces;
  for (const auto& f : config.fonts) {
    auto face = cv::freetype::createFreeType2();
    face->loadFontData(f.string(), 0);
    faces.push_back(face);
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) fs::create_directories(out_dir / "images" / split_name(s));

  const auto splits = split_words(words, config.seed);
  std::map<Split, std::ofstream> index;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    index[s].open(out_dir / (std::string(split_name(s)) + ".txt"), std::ios::binary | std::ios::trunc);
    if (!index[s]) throw DataError("cannot write index in " + out_dir.string());
  }
  std::ofstream prov(out_dir / "provenance.jsonl", std::ios::binary | std::ios::trunc);

  SynthSummary summary;
  std::size_t counter = 0;
  for (const auto& w : words) {
    const Split split = splits.at(w);
    for (int k = 0; k < config.samples_per_word; ++k, ++counter) {
      std::mt19937_64 rng(derive_seed(config.seed, counter + 1));
      auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
      auto uni_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
      const auto& fonts = usable.at(w);
      const std::size_t font = fonts[static_cast<std::size_t>(uni_int(0, static_cast<int>(fonts.size()) - 1))];

      Provenance p;
      p.word = w;
      p.split = split;
      p.font = config.fonts[font].filename().string();
      p.font_height = uni_int(config.font_height.min, config.font_height.max);
      p.slant = uni(config.slant.min, config.slant.max);
      p.blur_sigma = uni(config.blur_sigma.min, config.blur_sigma.max);
      p.ink_alpha = uni(config.ink_alpha.min, config.ink_alpha.max);
      cv::Mat img = detail::render_word(*faces[font], w, p.font_height, p.slant, p.ink_alpha, rng);
      if (p.blur_sigma > 0.05) cv::GaussianBlur(img, img, cv::Size(0, 0), p.blur_sigma);
      const int strips = uni_int(config.occlusion_count.min, config.occlusion_count.max);
      for (int s = 0; s < strips; ++s) {
        Occlusion o;
        o.width = std::min(img.cols, uni_int(config.occlusion_width.min, config.occlusion_width.max));
        o.x = uni_int(0, img.cols - o.width);
        if (o.width > 0) img.colRange(o.x, o.x + o.width).setTo(cv::Scalar(255));
        p.occlusions.push_back(o);
      }
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.png", counter);
      p.path = (fs::path("images") / split_name(split) / name).generic_string();
      write_png(img, out_dir / p.path);
      index[split] << p.path << '\t' << w << '\n';
      prov << p.to_json().dump() << '\n';
      ++summary.images;
      ++(split == Split::kTrain ? summary.train : split == Split::kVal ? summary.val : summary.test);
      summary.records.push_back(std::move(p));
    }
  }
  for (auto& [s, f] : index) {
    f.flush();
    if (!f) throw DataError("failed writing index files in " + out_dir.string());
  }
  return summary;
}

}  // namespace semhtr
