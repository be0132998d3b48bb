// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "semhtr/tensor.hpp"

namespace semhtr::optim {

/// Global L2 norm of the gradients; parameters without a gradient count as zero.
template <typename T>
double gradient_norm(const std::vector<Tensor<T>>& params) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (norm > max_norm) {
    const T scale = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (T& g : p.grad()) g *= scale;
    }
  }
  return norm;
}

/// Adadelta with per-element running averages of squared gradients and
/// squared updates.
template <typename T>
class Adadelta {
 public:
  Adadelta(std::vector<Tensor<T>> params, double lr = 1.0, double rho = 0.95, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), rho_(rho), eps_(eps) {
    for (const auto& p : params_) {
      sq_grad_.emplace_back(p.values().size(), 0.0);
      sq_delta_.emplace_back(p.values().size(), 0.0);
    }
  }

  void step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      auto value = p.data();
      auto grad = p.grad();
      auto& acc_g = sq_grad_[k];
      auto& acc_d = sq_delta_[k];
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        acc_g[i] = rho_ * acc_g[i] + (1.0 - rho_) * g * g;
        const double delta = std::sqrt(acc_d[i] + eps_) / std::sqrt(acc_g[i] + eps_) * g;
        acc_d[i] = rho_ * acc_d[i] + (1.0 - rho_) * delta * delta;
        value[i] -= static_cast<T>(lr_ * delta);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.node().grad.clear();
  }

  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  double lr_, rho_, eps_;
  std::vector<std::vector<double>> sq_grad_, sq_delta_;
};

}  // namespace semhtr::optim
