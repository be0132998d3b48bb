// SPDX-License-Identifier: Apache-2.0
//
// Batched recognition over preprocessed canvases.
#pragma once

#include <string>
#include <vector>

#include "semhtr/charset.hpp"
#include "semhtr/dataset.hpp"
#include "semhtr/image.hpp"
#include "semhtr/model.hpp"

namespace semhtr {

/// [0, 1] canvases of every sample, resized to the network input.
struct ImageBank {
  std::vector<cv::Mat> canvases;
  std::vector<std::string> words;
  std::vector<std::string> ids;

  std::size_t size() const { return canvases.size(); }

  static ImageBank load(const std::vector<WordSample>& samples) {
    ImageBank bank;
    for (const auto& s : samples) {
      bank.canvases.push_back(resize_to_canvas(load_grayscale(s.image_path)));
      bank.words.push_back(s.transcription);
      bank.ids.push_back(s.image_path.string());
    }
    return bank;
  }
};

/// Stacks normalized canvases into [N, 1, H, W].
template <typename T>
Tensor<T> images_tensor(const std::vector<cv::Mat>& canvases) {
  if (canvases.empty()) throw InvalidInputError("images_tensor: empty batch");
  const int h = canvases[0].rows, w = canvases[0].cols;
  std::vector<T> data;
  data.reserve(canvases.size() * static_cast<std::size_t>(h) * w);
  for (const auto& c : canvases) {
    if (c.rows != h || c.cols != w) throw ShapeError("images_tensor: canvases differ in size");
    for (float v : normalize_canvas(c)) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>::from({static_cast<int>(canvases.size()), 1, h, w}, std::move(data));
}

/// Decoded hypotheses in input order.
template <typename T>
std::vector<std::string> recognize_canvases(Recognizer<T>& model, const Charset& charset,
                                            const std::vector<cv::Mat>& canvases, int beam_width,
                                            int batch_size = 16) {
  std::vector<std::string> out;
  out.reserve(canvases.size());
  for (std::size_t start = 0; start < canvases.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(canvases.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<cv::Mat> chunk(canvases.begin() + static_cast<std::ptrdiff_t>(start),
                               canvases.begin() + static_cast<std::ptrdiff_t>(end));
    for (const auto& hyp : model.recognize(images_tensor<T>(chunk), beam_width)) out.push_back(charset.decode(hyp.token_ids));
  }
  return out;
}

}  // namespace semhtr
