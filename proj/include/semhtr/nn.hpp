// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "semhtr/ops.hpp"

namespace semhtr::nn {

/// Named registry of trainable parameters and non-trainable buffers
/// (batch-norm running statistics). Registration order is the checkpoint order.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable;
  };

  Tensor<T> parameter(const std::string& name, const Shape& shape, std::vector<T> init) {
    auto t = Tensor<T>::from(shape, std::move(init), true);
    entries_.push_back({name, t, true});
    return t;
  }

  Tensor<T> buffer(const std::string& name, const Shape& shape, T fill) {
    auto t = Tensor<T>::filled(shape, fill);
    entries_.push_back({name, t, false});
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_)
      if (e.trainable) out.push_back(e.tensor);
    return out;
  }

  /// Trainable tensors whose name starts with `prefix`.
  std::vector<Tensor<T>> group(const std::string& prefix) const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_)
      if (e.trainable && e.name.rfind(prefix, 0) == 0) out.push_back(e.tensor);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor.values().size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.node().grad.clear();
  }

 private:
  std::vector<Entry> entries_;
};

template <typename T>
std::vector<T> uniform_init(std::size_t n, T bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return v;
}

template <typename T>
std::vector<T> normal_init(std::size_t n, T stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return v;
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, int in, int out, std::mt19937_64& rng,
         bool with_bias = true) {
    const T bound = T(1) / std::sqrt(static_cast<T>(in));
    weight = store.parameter(name + ".weight", {in, out}, uniform_init<T>(static_cast<std::size_t>(in) * out, bound, rng));
    if (with_bias) bias = store.parameter(name + ".bias", {out}, uniform_init<T>(static_cast<std::size_t>(out), bound, rng));
  }

  int in_features() const { return weight.dim(0); }
  int out_features() const { return weight.dim(1); }

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [out, in, kh, kw]
  Tensor<T> bias;
  int stride_h = 1, stride_w = 1, pad_h = 0, pad_w = 0;

  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, const std::string& name, int in, int out, int kernel, int sh, int sw,
         std::mt19937_64& rng, bool with_bias = false)
      : stride_h(sh), stride_w(sw), pad_h(kernel / 2), pad_w(kernel / 2) {
    const int fan_in = in * kernel * kernel;
    weight = store.parameter(name + ".weight", {out, in, kernel, kernel},
                             normal_init<T>(static_cast<std::size_t>(out) * fan_in, std::sqrt(T(2) / fan_in), rng));
    if (with_bias) bias = store.parameter(name + ".bias", {out}, std::vector<T>(static_cast<std::size_t>(out), T(0)));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return ops::conv2d(x, weight, bias, stride_h, stride_w, pad_h, pad_w);
  }
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta, running_mean, running_var;

  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore<T>& store, const std::string& name, int channels) {
    gamma = store.parameter(name + ".gamma", {channels}, std::vector<T>(static_cast<std::size_t>(channels), T(1)));
    beta = store.parameter(name + ".beta", {channels}, std::vector<T>(static_cast<std::size_t>(channels), T(0)));
    running_mean = store.buffer(name + ".running_mean", {channels}, T(0));
    running_var = store.buffer(name + ".running_var", {channels}, T(1));
  }

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    return ops::batch_norm2d(x, gamma, beta, running_mean, running_var, training);
  }
};

/// Unidirectional LSTM over a time-major sequence [L*N, D]; gate order i, f, g, o.
template <typename T>
struct LstmLayer {
  Tensor<T> w_ih, w_hh, bias;
  int hidden = 0;
  bool reverse = false;

  LstmLayer() = default;
  LstmLayer(ParameterStore<T>& store, const std::string& name, int in, int hidden_size, bool reversed,
            std::mt19937_64& rng)
      : hidden(hidden_size), reverse(reversed) {
    const T bound = T(1) / std::sqrt(static_cast<T>(hidden));
    w_ih = store.parameter(name + ".w_ih", {in, 4 * hidden}, uniform_init<T>(static_cast<std::size_t>(in) * 4 * hidden, bound, rng));
    w_hh = store.parameter(name + ".w_hh", {hidden, 4 * hidden}, uniform_init<T>(static_cast<std::size_t>(hidden) * 4 * hidden, bound, rng));
    auto b = uniform_init<T>(static_cast<std::size_t>(4) * hidden, bound, rng);
    for (int j = hidden; j < 2 * hidden; ++j) b[j] += T(1);  // forget gate
    bias = store.parameter(name + ".bias", {4 * hidden}, std::move(b));
  }

  Tensor<T> operator()(const Tensor<T>& seq, int steps, int batch) const {
    auto xproj = ops::linear(seq, w_ih, bias);
    auto h = Tensor<T>::zeros({batch, hidden});
    auto c = Tensor<T>::zeros({batch, hidden});
    std::vector<Tensor<T>> outputs(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k) {
      const int t = reverse ? steps - 1 - k : k;
      auto gates = ops::add(ops::slice_rows(xproj, t * batch, batch), ops::matmul(h, w_hh));
      auto i = ops::sigmoid(ops::slice_cols(gates, 0, hidden));
      auto f = ops::sigmoid(ops::slice_cols(gates, hidden, hidden));
      auto g = ops::tanh(ops::slice_cols(gates, 2 * hidden, hidden));
      auto o = ops::sigmoid(ops::slice_cols(gates, 3 * hidden, hidden));
      c = ops::add(ops::mul(f, c), ops::mul(i, g));
      h = ops::mul(o, ops::tanh(c));
      outputs[static_cast<std::size_t>(t)] = h;
    }
    return ops::concat_rows(outputs);
  }
};

/// GRU cell; gate order r, z, n.
template <typename T>
struct GruCell {
  Tensor<T> w_ih, w_hh, b_ih, b_hh;
  int hidden = 0;

  GruCell() = default;
  GruCell(ParameterStore<T>& store, const std::string& name, int in, int hidden_size, std::mt19937_64& rng)
      : hidden(hidden_size) {
    const T bound = T(1) / std::sqrt(static_cast<T>(hidden));
    w_ih = store.parameter(name + ".w_ih", {in, 3 * hidden}, uniform_init<T>(static_cast<std::size_t>(in) * 3 * hidden, bound, rng));
    w_hh = store.parameter(name + ".w_hh", {hidden, 3 * hidden}, uniform_init<T>(static_cast<std::size_t>(hidden) * 3 * hidden, bound, rng));
    b_ih = store.parameter(name + ".b_ih", {3 * hidden}, uniform_init<T>(static_cast<std::size_t>(3) * hidden, bound, rng));
    b_hh = store.parameter(name + ".b_hh", {3 * hidden}, uniform_init<T>(static_cast<std::size_t>(3) * hidden, bound, rng));
  }

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& h) const {
    auto gi = ops::linear(x, w_ih, b_ih);
    auto gh = ops::linear(h, w_hh, b_hh);
    auto r = ops::sigmoid(ops::add(ops::slice_cols(gi, 0, hidden), ops::slice_cols(gh, 0, hidden)));
    auto z = ops::sigmoid(ops::add(ops::slice_cols(gi, hidden, hidden), ops::slice_cols(gh, hidden, hidden)));
    auto n = ops::tanh(ops::add(ops::slice_cols(gi, 2 * hidden, hidden),
                                ops::mul(r, ops::slice_cols(gh, 2 * hidden, hidden))));
    return ops::add(n, ops::mul(z, ops::sub(h, n)));
  }
};

}  // namespace semhtr::nn
