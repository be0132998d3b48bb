// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor ops. Matrices are row-major; sequences are stored
// time-major as [L*N, D] so that the rows of step t are contiguous.
#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "semhtr/tensor.hpp"

namespace semhtr::ops {

namespace detail {

template <typename T>
inline T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv_from_output) {
  std::vector<T> out(x.values().size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [deriv_from_output](Node<T>& self) {
    T* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& in = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      gx[i] += self.grad[i] * deriv_from_output(in[i], self.value[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b, a.shape(), "add");
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (T* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b, a.shape(), "sub");
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (T* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (T* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b, a.shape(), "mul");
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (T* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (T* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

/// alpha * x + beta
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T alpha, T beta = T(0)) {
  std::vector<T> out(x.values());
  for (auto& v : out) v = alpha * v + beta;
  return make_result<T>(x.shape(), std::move(out), {x}, [alpha](Node<T>& self) {
    if (T* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += alpha * self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return detail::sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  return make_result<T>({1}, {s}, {x}, [](Node<T>& self) {
    if (T* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return affine(sum(x), T(1) / static_cast<T>(x.size()));
}

// ---------------------------------------------------------------- shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  return make_result<T>(shape, x.values(), {x}, [](Node<T>& self) {
    if (T* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// Concatenates 2-D tensors with equal row counts along columns.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  const int rows = parts.at(0).dim(0);
  int cols = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.dim(1);
  }
  std::vector<T> out(static_cast<std::size_t>(rows) * cols);
  int offset = 0;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    const int c = p.dim(1);
    for (int r = 0; r < rows; ++r) {
      std::copy_n(p.values().begin() + static_cast<std::ptrdiff_t>(r) * c, c,
                  out.begin() + static_cast<std::ptrdiff_t>(r) * cols + offset);
    }
    offsets.push_back(offset);
    offset += c;
  }
  return make_result<T>({rows, cols}, std::move(out), parts, [rows, cols, offsets](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      T* g = input_grad(self, k);
      if (!g) continue;
      const int c = self.inputs[k]->shape[1];
      for (int r = 0; r < rows; ++r) {
        const T* src = self.grad.data() + static_cast<std::ptrdiff_t>(r) * cols + offsets[k];
        for (int j = 0; j < c; ++j) g[static_cast<std::ptrdiff_t>(r) * c + j] += src[j];
      }
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int start, int len) {
  require_rank(x, 2, "slice_cols");
  const int rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || len < 0 || start + len > cols) throw ShapeError("slice_cols: out of range");
  std::vector<T> out(static_cast<std::size_t>(rows) * len);
  for (int r = 0; r < rows; ++r) {
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(r) * cols + start, len,
                out.begin() + static_cast<std::ptrdiff_t>(r) * len);
  }
  return make_result<T>({rows, len}, std::move(out), {x}, [rows, cols, start, len](Node<T>& self) {
    T* g = input_grad(self, 0);
    if (!g) return;
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < len; ++j) {
        g[static_cast<std::ptrdiff_t>(r) * cols + start + j] +=
            self.grad[static_cast<std::size_t>(r) * len + j];
      }
    }
  });
}

/// Concatenates tensors along the leading dimension.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  Shape shape = parts.at(0).shape();
  std::int64_t inner = parts[0].size() / std::max(1, shape[0]);
  int rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(shape.size()) || p.size() != p.dim(0) * inner) {
      throw ShapeError("concat_rows: trailing shape mismatch");
    }
    rows += p.dim(0);
  }
  shape[0] = rows;
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(rows * inner));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result<T>(shape, std::move(out), parts, [](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      const std::size_t n = self.inputs[k]->value.size();
      if (T* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int start, int len) {
  const std::int64_t inner = x.size() / std::max(1, x.dim(0));
  if (start < 0 || len < 0 || start + len > x.dim(0)) throw ShapeError("slice_rows: out of range");
  Shape shape = x.shape();
  shape[0] = len;
  std::vector<T> out(x.values().begin() + start * inner, x.values().begin() + (start + len) * inner);
  return make_result<T>(shape, std::move(out), {x}, [start, inner](Node<T>& self) {
    if (T* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * inner + static_cast<std::int64_t>(i)] += self.grad[i];
    }
  });
}

/// Reorders a [A*B, D] block matrix indexed (a, b) into (b, a) order.
/// Converts time-major sequences [L*N, D] to batch-major [N*L, D] and back.
template <typename T>
Tensor<T> swap_leading(const Tensor<T>& x, int a, int b) {
  require_rank(x, 2, "swap_leading");
  if (x.dim(0) != a * b) throw ShapeError("swap_leading: leading dimension mismatch");
  const int d = x.dim(1);
  std::vector<T> out(x.values().size());
  for (int i = 0; i < a; ++i) {
    for (int j = 0; j < b; ++j) {
      std::copy_n(x.values().begin() + (static_cast<std::ptrdiff_t>(i) * b + j) * d, d,
                  out.begin() + (static_cast<std::ptrdiff_t>(j) * a + i) * d);
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [a, b, d](Node<T>& self) {
    T* g = input_grad(self, 0);
    if (!g) return;
    for (int i = 0; i < a; ++i) {
      for (int j = 0; j < b; ++j) {
        const T* src = self.grad.data() + (static_cast<std::ptrdiff_t>(j) * a + i) * d;
        T* dst = g + (static_cast<std::ptrdiff_t>(i) * b + j) * d;
        for (int k = 0; k < d; ++k) dst[k] += src[k];
      }
    }
  });
}

/// [N, C, 1, W] feature map -> time-major sequence [W*N, C].
template <typename T>
Tensor<T> map_to_sequence(const Tensor<T>& x) {
  require_rank(x, 4, "map_to_sequence");
  if (x.dim(2) != 1) throw ShapeError("map_to_sequence: feature map height must be 1, got " + to_string(x.shape()));
  const int n = x.dim(0), c = x.dim(1), w = x.dim(3);
  std::vector<T> out(x.values().size());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int t = 0; t < w; ++t)
        out[(static_cast<std::size_t>(t) * n + b) * c + ch] = x.values()[(static_cast<std::size_t>(b) * c + ch) * w + t];
  return make_result<T>({w * n, c}, std::move(out), {x}, [n, c, w](Node<T>& self) {
    T* g = input_grad(self, 0);
    if (!g) return;
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int t = 0; t < w; ++t)
          g[(static_cast<std::size_t>(b) * c + ch) * w + t] += self.grad[(static_cast<std::size_t>(t) * n + b) * c + ch];
  });
}

// ---------------------------------------------------------------- linear algebra

/// [m, k] x [k, n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.values().data(), m, k) * ConstMatMap<T>(b.values().data(), k, n);
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    ConstMatMap<T> go(self.grad.data(), m, n);
    if (T* ga = input_grad(self, 0)) {
      MatMap<T>(ga, m, k).noalias() += go * ConstMatMap<T>(self.inputs[1]->value.data(), k, n).transpose();
    }
    if (T* gb = input_grad(self, 1)) {
      MatMap<T>(gb, k, n).noalias() += ConstMatMap<T>(self.inputs[0]->value.data(), m, k).transpose() * go;
    }
  });
}

/// x[N, D] + bias[D] broadcast over rows.
template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x, 2, "add_rowwise");
  const int rows = x.dim(0), cols = x.dim(1);
  if (bias.size() != cols) throw ShapeError("add_rowwise: bias size mismatch");
  std::vector<T> out(x.values());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r) * cols + c] += bias.values()[c];
  return make_result<T>(x.shape(), std::move(out), {x, bias}, [rows, cols](Node<T>& self) {
    if (T* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (T* g = input_grad(self, 1)) {
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) g[c] += self.grad[static_cast<std::size_t>(r) * cols + c];
    }
  });
}

/// y = x W + b with W stored [in, out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  auto y = matmul(x, weight);
  return bias.defined() ? add_rowwise(y, bias) : y;
}

/// Row lookup into table[V, D].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
  require_rank(table, 2, "embedding");
  const int vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) throw VocabularyError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " + std::to_string(vocab));
    std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(ids[i]) * d, d, out.begin() + static_cast<std::ptrdiff_t>(i) * d);
  }
  return make_result<T>({static_cast<int>(ids.size()), d}, std::move(out), {table}, [ids, d](Node<T>& self) {
    T* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j) g[static_cast<std::ptrdiff_t>(ids[i]) * d + j] += self.grad[i * d + j];
  });
}

// ---------------------------------------------------------------- convolution

namespace detail {

struct ConvGeometry {
  int channels, height, width, kh, kw, sh, sw, ph, pw, out_h, out_w;
};

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const int plane = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        T* row = col + (static_cast<std::ptrdiff_t>(c) * g.kh * g.kw + ki * g.kw + kj) * plane;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.sh - g.ph + ki;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = img + (static_cast<std::ptrdiff_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.sw - g.pw + kj;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const int plane = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const T* row = col + (static_cast<std::ptrdiff_t>(c) * g.kh * g.kw + ki * g.kw + kj) * plane;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.sh - g.ph + ki;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = img + (static_cast<std::ptrdiff_t>(c) * g.height + iy) * g.width;
          const T* src = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.sw - g.pw + kj;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// x[N, C, H, W] * weight[O, C, kh, kw] + bias[O]; bias may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride_h,
                 int stride_w, int pad_h, int pad_w) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const int n = x.dim(0), o = weight.dim(0);
  detail::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3), stride_h, stride_w, pad_h, pad_w, 0, 0};
  if (weight.dim(1) != g.channels) {
    throw ShapeError("conv2d: input has " + std::to_string(g.channels) + " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  g.out_h = (g.height + 2 * pad_h - g.kh) / stride_h + 1;
  g.out_w = (g.width + 2 * pad_w - g.kw) / stride_w + 1;
  if (g.out_h < 1 || g.out_w < 1) throw ShapeError("conv2d: input " + to_string(x.shape()) + " too small");
  const int ckk = g.channels * g.kh * g.kw;
  const int plane = g.out_h * g.out_w;
  const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.height * g.width;
  std::vector<T> col(static_cast<std::size_t>(ckk) * plane);
  std::vector<T> out(static_cast<std::size_t>(n) * o * plane);
  ConstMatMap<T> w(weight.values().data(), o, ckk);
  for (int b = 0; b < n; ++b) {
    detail::im2col(x.values().data() + b * in_stride, g, col.data());
    MatMap<T> y(out.data() + static_cast<std::size_t>(b) * o * plane, o, plane);
    y.noalias() = w * ConstMatMap<T>(col.data(), ckk, plane);
    if (bias.defined()) {
      for (int c = 0; c < o; ++c) y.row(c).array() += bias.values()[c];
    }
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>({n, o, g.out_h, g.out_w}, std::move(out), inputs, [g, n, o, ckk, plane, in_stride](Node<T>& self) {
    T* gx = input_grad(self, 0);
    T* gw = input_grad(self, 1);
    T* gb = self.inputs.size() > 2 ? input_grad(self, 2) : nullptr;
    std::vector<T> col(static_cast<std::size_t>(ckk) * plane);
    ConstMatMap<T> w(self.inputs[1]->value.data(), o, ckk);
    for (int b = 0; b < n; ++b) {
      ConstMatMap<T> gy(self.grad.data() + static_cast<std::size_t>(b) * o * plane, o, plane);
      if (gb) {
        for (int c = 0; c < o; ++c) gb[c] += gy.row(c).sum();
      }
      if (gw) {
        detail::im2col(self.inputs[0]->value.data() + b * in_stride, g, col.data());
        MatMap<T>(gw, o, ckk).noalias() += gy * ConstMatMap<T>(col.data(), ckk, plane).transpose();
      }
      if (gx) {
        MatMap<T>(col.data(), ckk, plane).noalias() = w.transpose() * gy;
        detail::col2im(col.data(), g, gx + b * in_stride);
      }
    }
  });
}

/// Per-channel batch normalization over (N, H, W). In training mode uses batch
/// statistics and updates the running buffers in place.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                       T momentum = T(0.1), T eps = T(1e-5)) {
  require_rank(x, 4, "batch_norm2d");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const int count = n * hw;
  std::vector<T> mu(c), inv_std(c);
  const auto& xv = x.values();
  for (int ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0, s2 = 0;
      for (int b = 0; b < n; ++b) {
        const T* p = xv.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) {
          s += p[i];
          s2 += static_cast<double>(p[i]) * p[i];
        }
      }
      const double m = s / count;
      const double var = std::max(0.0, s2 / count - m * m);
      mu[ch] = static_cast<T>(m);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + eps));
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      running_mean.values()[ch] = (T(1) - momentum) * running_mean.values()[ch] + momentum * static_cast<T>(m);
      running_var.values()[ch] = (T(1) - momentum) * running_var.values()[ch] + momentum * static_cast<T>(unbiased);
    } else {
      mu[ch] = running_mean.values()[ch];
      inv_std[ch] = T(1) / std::sqrt(running_var.values()[ch] + eps);
    }
  }
  std::vector<T> xhat(xv.size()), out(xv.size());
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
      const T gm = gamma.values()[ch], bt = beta.values()[ch];
      for (int i = 0; i < hw; ++i) {
        xhat[base + i] = (xv[base + i] - mu[ch]) * inv_std[ch];
        out[base + i] = gm * xhat[base + i] + bt;
      }
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                        [n, c, hw, count, training, inv_std, xhat = std::move(xhat)](Node<T>& self) {
    T* gx = input_grad(self, 0);
    T* gg = input_grad(self, 1);
    T* gbeta = input_grad(self, 2);
    const auto& gamma_v = self.inputs[1]->value;
    for (int ch = 0; ch < c; ++ch) {
      T sum_g = 0, sum_gx = 0;
      for (int b = 0; b < n; ++b) {
        const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) {
          sum_g += self.grad[base + i];
          sum_gx += self.grad[base + i] * xhat[base + i];
        }
      }
      if (gg) gg[ch] += sum_gx;
      if (gbeta) gbeta[ch] += sum_g;
      if (!gx) continue;
      const T k = gamma_v[ch] * inv_std[ch];
      for (int b = 0; b < n; ++b) {
        const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) {
          if (training) {
            gx[base + i] += k * (self.grad[base + i] - sum_g / count - xhat[base + i] * sum_gx / count);
          } else {
            gx[base + i] += k * self.grad[base + i];
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------- spatial sampling

/// Bilinear sampling of image[N, 1, H, W] at grid[N, P, 2] normalized (x, y)
/// coordinates, where -1/+1 address the centres of the border pixels.
/// Coordinates outside the image are clamped to the border.
template <typename T>
Tensor<T> grid_sample(const Tensor<T>& image, const Tensor<T>& grid, int out_h, int out_w) {
  require_rank(image, 4, "grid_sample image");
  const int n = image.dim(0), h = image.dim(2), w = image.dim(3);
  if (image.dim(1) != 1) throw ShapeError("grid_sample: single-channel images only");
  const int points = out_h * out_w;
  require_shape(grid, {n, points, 2}, "grid_sample grid");
  std::vector<T> out(static_cast<std::size_t>(n) * points);
  const auto& img = image.values();
  const auto& gv = grid.values();
  auto locate = [h, w](T gx, T gy, int& x0, int& y0, T& fx, T& fy, bool& cx, bool& cy) {
    T px = (gx + T(1)) * T(0.5) * T(w - 1);
    T py = (gy + T(1)) * T(0.5) * T(h - 1);
    cx = px <= T(0) || px >= T(w - 1);
    cy = py <= T(0) || py >= T(h - 1);
    px = std::clamp(px, T(0), T(w - 1));
    py = std::clamp(py, T(0), T(h - 1));
    x0 = std::min(static_cast<int>(std::floor(px)), std::max(0, w - 2));
    y0 = std::min(static_cast<int>(std::floor(py)), std::max(0, h - 2));
    fx = px - T(x0);
    fy = py - T(y0);
  };
  auto at = [&](const std::vector<T>& v, int b, int y, int x) {
    return v[(static_cast<std::size_t>(b) * h + std::min(y, h - 1)) * w + std::min(x, w - 1)];
  };
  for (int b = 0; b < n; ++b) {
    for (int p = 0; p < points; ++p) {
      int x0, y0;
      T fx, fy;
      bool cx, cy;
      locate(gv[(static_cast<std::size_t>(b) * points + p) * 2], gv[(static_cast<std::size_t>(b) * points + p) * 2 + 1], x0, y0, fx, fy, cx, cy);
      out[static_cast<std::size_t>(b) * points + p] =
          (T(1) - fx) * (T(1) - fy) * at(img, b, y0, x0) + fx * (T(1) - fy) * at(img, b, y0, x0 + 1) +
          (T(1) - fx) * fy * at(img, b, y0 + 1, x0) + fx * fy * at(img, b, y0 + 1, x0 + 1);
    }
  }
  return make_result<T>({n, 1, out_h, out_w}, std::move(out), {image, grid}, [=](Node<T>& self) {
    T* gimg = input_grad(self, 0);
    T* ggrid = input_grad(self, 1);
    const auto& img_v = self.inputs[0]->value;
    const auto& grid_v = self.inputs[1]->value;
    auto idx = [h, w](int b, int y, int x) {
      return (static_cast<std::size_t>(b) * h + std::min(y, h - 1)) * w + std::min(x, w - 1);
    };
    for (int b = 0; b < n; ++b) {
      for (int p = 0; p < points; ++p) {
        const std::size_t gi = (static_cast<std::size_t>(b) * points + p) * 2;
        int x0, y0;
        T fx, fy;
        bool cx, cy;
        locate(grid_v[gi], grid_v[gi + 1], x0, y0, fx, fy, cx, cy);
        const T go = self.grad[static_cast<std::size_t>(b) * points + p];
        const std::size_t i00 = idx(b, y0, x0), i01 = idx(b, y0, x0 + 1), i10 = idx(b, y0 + 1, x0),
                          i11 = idx(b, y0 + 1, x0 + 1);
        if (gimg) {
          gimg[i00] += go * (T(1) - fx) * (T(1) - fy);
          gimg[i01] += go * fx * (T(1) - fy);
          gimg[i10] += go * (T(1) - fx) * fy;
          gimg[i11] += go * fx * fy;
        }
        if (ggrid) {
          const T v00 = img_v[i00], v01 = img_v[i01], v10 = img_v[i10], v11 = img_v[i11];
          const T dfx = (T(1) - fy) * (v01 - v00) + fy * (v11 - v10);
          const T dfy = (T(1) - fx) * (v10 - v00) + fx * (v11 - v01);
          if (!cx) ggrid[gi] += go * dfx * T(0.5) * T(w - 1);
          if (!cy) ggrid[gi + 1] += go * dfy * T(0.5) * T(h - 1);
        }
      }
    }
  });
}

// ---------------------------------------------------------------- attention

/// Additive attention over a batch-major sequence.
///   query_proj: [N, A]      (W_a * state)
///   key_proj:   [N*L, A]    (U_a * h_i, batch-major)
///   v:          [A]
///   values:     [N*L, C]    (h_i, batch-major)
/// Returns [N, C + L]: context followed by the attention weights.
template <typename T>
Tensor<T> additive_attention(const Tensor<T>& query_proj, const Tensor<T>& key_proj, const Tensor<T>& v,
                             const Tensor<T>& values, int seq_len) {
  const int n = query_proj.dim(0), a = query_proj.dim(1), c = values.dim(1), l = seq_len;
  require_shape(key_proj, {n * l, a}, "attention keys");
  require_shape(values, {n * l, c}, "attention values");
  if (v.size() != a) throw ShapeError("attention: score vector size mismatch");
  std::vector<T> act(static_cast<std::size_t>(n) * l * a);  // tanh(q + k_i)
  std::vector<T> out(static_cast<std::size_t>(n) * (c + l), T(0));
  const auto& q = query_proj.values();
  const auto& k = key_proj.values();
  const auto& vv = v.values();
  const auto& hv = values.values();
  std::vector<T> scores(l);
  for (int b = 0; b < n; ++b) {
    T best = -std::numeric_limits<T>::infinity();
    for (int i = 0; i < l; ++i) {
      T e = 0;
      const std::size_t base = (static_cast<std::size_t>(b) * l + i) * a;
      for (int j = 0; j < a; ++j) {
        const T t = std::tanh(q[static_cast<std::size_t>(b) * a + j] + k[base + j]);
        act[base + j] = t;
        e += vv[j] * t;
      }
      scores[i] = e;
      best = std::max(best, e);
    }
    T z = 0;
    for (int i = 0; i < l; ++i) z += (scores[i] = std::exp(scores[i] - best));
    T* row = out.data() + static_cast<std::size_t>(b) * (c + l);
    for (int i = 0; i < l; ++i) {
      const T wgt = scores[i] / z;
      row[c + i] = wgt;
      const T* h = hv.data() + (static_cast<std::size_t>(b) * l + i) * c;
      for (int j = 0; j < c; ++j) row[j] += wgt * h[j];
    }
  }
  return make_result<T>({n, c + l}, std::move(out), {query_proj, key_proj, v, values},
                        [n, a, c, l, act = std::move(act)](Node<T>& self) {
    T* gq = input_grad(self, 0);
    T* gk = input_grad(self, 1);
    T* gv = input_grad(self, 2);
    T* gh = input_grad(self, 3);
    const auto& vv = self.inputs[2]->value;
    const auto& hv = self.inputs[3]->value;
    std::vector<T> gw(l), ge(l);
    for (int b = 0; b < n; ++b) {
      const T* row = self.value.data() + static_cast<std::size_t>(b) * (c + l);
      const T* grow = self.grad.data() + static_cast<std::size_t>(b) * (c + l);
      // d/d weights: from context and from the directly exposed weights.
      for (int i = 0; i < l; ++i) {
        const T* h = hv.data() + (static_cast<std::size_t>(b) * l + i) * c;
        T s = grow[c + i];
        for (int j = 0; j < c; ++j) s += grow[j] * h[j];
        gw[i] = s;
        if (gh) {
          T* dh = gh + (static_cast<std::size_t>(b) * l + i) * c;
          for (int j = 0; j < c; ++j) dh[j] += row[c + i] * grow[j];
        }
      }
      T dot = 0;
      for (int i = 0; i < l; ++i) dot += row[c + i] * gw[i];
      for (int i = 0; i < l; ++i) ge[i] = row[c + i] * (gw[i] - dot);
      for (int i = 0; i < l; ++i) {
        const std::size_t base = (static_cast<std::size_t>(b) * l + i) * a;
        for (int j = 0; j < a; ++j) {
          const T t = act[base + j];
          const T dpre = ge[i] * vv[j] * (T(1) - t * t);
          if (gv) gv[j] += ge[i] * t;
          if (gq) gq[static_cast<std::size_t>(b) * a + j] += dpre;
          if (gk) gk[base + j] += dpre;
        }
      }
    }
  });
}

/// Uniform weights 1/L: context is the mean of the sequence rows.
/// Output layout matches additive_attention ([N, C + L]).
template <typename T>
Tensor<T> uniform_attention(const Tensor<T>& values, int batch, int seq_len) {
  const int c = values.dim(1), l = seq_len, n = batch;
  require_shape(values, {n * l, c}, "uniform attention values");
  std::vector<T> out(static_cast<std::size_t>(n) * (c + l), T(0));
  const T wgt = T(1) / static_cast<T>(l);
  for (int b = 0; b < n; ++b) {
    T* row = out.data() + static_cast<std::size_t>(b) * (c + l);
    for (int i = 0; i < l; ++i) {
      row[c + i] = wgt;
      const T* h = values.values().data() + (static_cast<std::size_t>(b) * l + i) * c;
      for (int j = 0; j < c; ++j) row[j] += wgt * h[j];
    }
  }
  return make_result<T>({n, c + l}, std::move(out), {values}, [n, c, l, wgt](Node<T>& self) {
    T* gh = input_grad(self, 0);
    if (!gh) return;
    for (int b = 0; b < n; ++b) {
      const T* grow = self.grad.data() + static_cast<std::size_t>(b) * (c + l);
      for (int i = 0; i < l; ++i) {
        T* dh = gh + (static_cast<std::size_t>(b) * l + i) * c;
        for (int j = 0; j < c; ++j) dh[j] += wgt * grow[j];
      }
    }
  });
}

// ---------------------------------------------------------------- losses

/// Mean token cross-entropy over rows whose target is not `ignore_id`.
/// logits: [M, V]; targets: M ids. Returns a zero loss when every row is ignored.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets, int ignore_id) {
  require_rank(logits, 2, "cross_entropy");
  const int m = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != m) throw ShapeError("cross_entropy: target count mismatch");
  std::vector<T> probs(logits.values().size());
  int counted = 0;
  double loss = 0;
  for (int r = 0; r < m; ++r) {
    const T* z = logits.values().data() + static_cast<std::size_t>(r) * v;
    T* p = probs.data() + static_cast<std::size_t>(r) * v;
    const T mx = *std::max_element(z, z + v);
    T s = 0;
    for (int j = 0; j < v; ++j) s += (p[j] = std::exp(z[j] - mx));
    for (int j = 0; j < v; ++j) p[j] /= s;
    if (targets[r] == ignore_id) continue;
    if (targets[r] < 0 || targets[r] >= v) throw VocabularyError("cross_entropy: target id out of range");
    loss += -(static_cast<double>(z[targets[r]] - mx) - std::log(static_cast<double>(s)));
    ++counted;
  }
  const T value = counted ? static_cast<T>(loss / counted) : T(0);
  return make_result<T>({1}, {value}, {logits}, [m, v, counted, targets, ignore_id, probs = std::move(probs)](Node<T>& self) {
    T* g = input_grad(self, 0);
    if (!g || counted == 0) return;
    const T scale = self.grad[0] / static_cast<T>(counted);
    for (int r = 0; r < m; ++r) {
      if (targets[r] == ignore_id) continue;
      for (int j = 0; j < v; ++j) {
        const std::size_t i = static_cast<std::size_t>(r) * v + j;
        g[i] += scale * (probs[i] - (j == targets[r] ? T(1) : T(0)));
      }
    }
  });
}

/// Mean over rows of 1 - cos(s_i, e_i). `e` is a constant target.
/// Rows with norm below 1e-12 raise DegenerateError.
template <typename T>
Tensor<T> cosine_embedding_loss(const Tensor<T>& s, const Tensor<T>& e) {
  require_rank(s, 2, "cosine_embedding_loss");
  require_shape(e, s.shape(), "cosine_embedding_loss target");
  const int n = s.dim(0), d = s.dim(1);
  std::vector<T> cosines(n), ns(n), ne(n);
  double total = 0;
  for (int r = 0; r < n; ++r) {
    const T* a = s.values().data() + static_cast<std::size_t>(r) * d;
    const T* b = e.values().data() + static_cast<std::size_t>(r) * d;
    double dot = 0, aa = 0, bb = 0;
    for (int j = 0; j < d; ++j) {
      dot += static_cast<double>(a[j]) * b[j];
      aa += static_cast<double>(a[j]) * a[j];
      bb += static_cast<double>(b[j]) * b[j];
    }
    if (std::sqrt(aa) < 1e-12 || std::sqrt(bb) < 1e-12) {
      throw DegenerateError("cosine_embedding_loss: zero-norm vector in row " + std::to_string(r));
    }
    ns[r] = static_cast<T>(std::sqrt(aa));
    ne[r] = static_cast<T>(std::sqrt(bb));
    cosines[r] = static_cast<T>(dot / (std::sqrt(aa) * std::sqrt(bb)));
    total += 1.0 - dot / (std::sqrt(aa) * std::sqrt(bb));
  }
  return make_result<T>({1}, {static_cast<T>(total / n)}, {s, e}, [n, d, cosines, ns, ne](Node<T>& self) {
    T* g = input_grad(self, 0);
    if (!g) return;
    const auto& sv = self.inputs[0]->value;
    const auto& ev = self.inputs[1]->value;
    const T scale = self.grad[0] / static_cast<T>(n);
    for (int r = 0; r < n; ++r) {
      // d(1 - cos)/ds = -(e / (|s||e|) - cos * s / |s|^2)
      for (int j = 0; j < d; ++j) {
        const std::size_t i = static_cast<std::size_t>(r) * d + j;
        g[i] -= scale * (ev[i] / (ns[r] * ne[r]) - cosines[r] * sv[i] / (ns[r] * ns[r]));
      }
    }
  });
}

// ---------------------------------------------------------------- non-differentiable helpers

template <typename T>
std::vector<T> log_softmax_row(std::span<const T> z) {
  const T mx = *std::max_element(z.begin(), z.end());
  T s = 0;
  for (T v : z) s += std::exp(v - mx);
  const T lse = mx + std::log(s);
  std::vector<T> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

}  // namespace semhtr::ops
