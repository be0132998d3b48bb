// SPDX-License-Identifier: Apache-2.0
//
// Image loading, resizing, augmentation and normalization. Augmentation
// works on a float canvas with ink dark on a light background, values in
// [0, 1]; normalization maps 8-bit v to v / 127.5 - 1.
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "semhtr/errors.hpp"

namespace semhtr {

constexpr int kInputHeight = 64;
constexpr int kInputWidth = 256;

/// splitmix64 finalizer; used to derive independent per-sample seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b);
}

/// 8-bit single-channel image.
inline cv::Mat load_grayscale(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw DataError("cannot decode image " + path.string());
  return img;
}

/// Bilinear resize to h x w ignoring the aspect ratio; result is CV_32F in [0, 1].
inline cv::Mat resize_to_canvas(const cv::Mat& gray, int h = kInputHeight, int w = kInputWidth) {
  if (gray.empty() || gray.rows < 1 || gray.cols < 1) throw InvalidInputError("cannot resize an empty image");
  cv::Mat g = gray;
  if (g.channels() == 3) cv::cvtColor(gray, g, cv::COLOR_BGR2GRAY);
  if (g.channels() == 4) cv::cvtColor(gray, g, cv::COLOR_BGRA2GRAY);
  cv::Mat f;
  g.convertTo(f, CV_32F, 1.0 / 255.0);
  if (f.rows == h && f.cols == w) return f;
  cv::Mat out;
  cv::resize(f, out, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
  return out;
}

/// [0, 1] canvas -> [-1, 1], i.e. (255 v) / 127.5 - 1.
inline std::vector<float> normalize_canvas(const cv::Mat& canvas) {
  std::vector<float> out(static_cast<std::size_t>(canvas.rows) * canvas.cols);
  for (int i = 0; i < canvas.rows; ++i) {
    const float* row = canvas.ptr<float>(i);
    for (int j = 0; j < canvas.cols; ++j) out[static_cast<std::size_t>(i) * canvas.cols + j] = row[j] * 2.0f - 1.0f;
  }
  return out;
}

/// Load, grayscale, resize to 64x256 and normalize to [-1, 1].
inline std::vector<float> preprocess(const cv::Mat& image) { return normalize_canvas(resize_to_canvas(image)); }

inline std::vector<float> preprocess(const std::filesystem::path& path) { return preprocess(load_grayscale(path)); }

struct AugmentSettings {
  double p_affine = 0.5;
  double max_rotation_deg = 5.0;
  double max_shear = 0.3;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double p_elastic = 0.5;
  double elastic_alpha = 34.0;
  double elastic_sigma = 4.0;
  double p_brightness = 0.5;
  double max_brightness = 0.2;
  double p_contrast = 0.5;
  double min_contrast = 0.8;
  double max_contrast = 1.2;

  static AugmentSettings none() {
    AugmentSettings s;
    s.p_affine = s.p_elastic = s.p_brightness = s.p_contrast = 0.0;
    return s;
  }
};

/// Random affine, elastic, brightness and contrast changes on a [0, 1] canvas,
/// each applied with its own probability. Deterministic for a given seed.
inline cv::Mat augment(const cv::Mat& canvas, const AugmentSettings& s, std::uint64_t seed) {
  CV_Assert(canvas.type() == CV_32F);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  // Draw every decision up front so the stream does not depend on which ops fire.
  const bool do_affine = unit(rng) < s.p_affine;
  const bool do_elastic = unit(rng) < s.p_elastic;
  const bool do_brightness = unit(rng) < s.p_brightness;
  const bool do_contrast = unit(rng) < s.p_contrast;
  const double angle = uniform(-s.max_rotation_deg, s.max_rotation_deg);
  const double shear = uniform(-s.max_shear, s.max_shear);
  const double scale = uniform(s.min_scale, s.max_scale);
  const double brightness = uniform(-s.max_brightness, s.max_brightness);
  const double contrast = uniform(s.min_contrast, s.max_contrast);
  const std::uint64_t field_seed = rng();

  cv::Mat img = canvas.clone();
  const cv::Point2f centre(static_cast<float>(img.cols - 1) / 2.f, static_cast<float>(img.rows - 1) / 2.f);
  if (do_affine) {
    cv::Mat rot = cv::getRotationMatrix2D(centre, angle, scale);  // 2x3, CV_64F
    // Horizontal shear about the centre row, applied after rotation/scale.
    cv::Mat sh = (cv::Mat_<double>(3, 3) << 1, shear, -shear * centre.y, 0, 1, 0, 0, 0, 1);
    cv::Mat r3 = cv::Mat::eye(3, 3, CV_64F);
    rot.copyTo(r3.rowRange(0, 2));
    cv::Mat full = sh * r3;
    cv::Mat m = full.rowRange(0, 2);
    cv::Mat out;
    cv::warpAffine(img, out, m, img.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    img = out;
  }
  if (do_elastic) {
    std::mt19937_64 frng(field_seed);
    std::uniform_real_distribution<float> d(-1.f, 1.f);
    cv::Mat dx(img.size(), CV_32F), dy(img.size(), CV_32F);
    for (int i = 0; i < img.rows; ++i)
      for (int j = 0; j < img.cols; ++j) dx.at<float>(i, j) = d(frng);
    for (int i = 0; i < img.rows; ++i)
      for (int j = 0; j < img.cols; ++j) dy.at<float>(i, j) = d(frng);
    cv::GaussianBlur(dx, dx, cv::Size(0, 0), s.elastic_sigma, s.elastic_sigma, cv::BORDER_REFLECT);
    cv::GaussianBlur(dy, dy, cv::Size(0, 0), s.elastic_sigma, s.elastic_sigma, cv::BORDER_REFLECT);
    cv::Mat mx(img.size(), CV_32F), my(img.size(), CV_32F);
    for (int i = 0; i < img.rows; ++i)
      for (int j = 0; j < img.cols; ++j) {
        mx.at<float>(i, j) = static_cast<float>(j + s.elastic_alpha * dx.at<float>(i, j));
        my.at<float>(i, j) = static_cast<float>(i + s.elastic_alpha * dy.at<float>(i, j));
      }
    cv::Mat out;
    cv::remap(img, out, mx, my, cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    img = out;
  }
  if (do_contrast) {
    const double mean = cv::mean(img)[0];
    img = (img - mean) * contrast + mean;
  }
  if (do_brightness) img += brightness;
  if (do_contrast || do_brightness) cv::min(cv::max(img, 0.0), 1.0, img);
  return img;
}

inline void write_png(const cv::Mat& gray8, const std::filesystem::path& path) {
  std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imwrite(path.string(), gray8, params)) throw DataError("cannot write image " + path.string());
}

}  // namespace semhtr
