// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "semhtr/nn.hpp"

using semhtr::Tensor;
using semhtr::gradtest::gradcheck;
using semhtr::gradtest::random_tensor;
using semhtr::gradtest::weighted_sum;
namespace ops = semhtr::ops;

namespace {

constexpr double kTol = 1e-4;

TEST(Ops, ElementwiseGradients) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::mul(ops::add(a, b), ops::sub(a, b))); }, a).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::tanh(ops::affine(a, 0.5, 0.1))); }, a).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::sigmoid(a)); }, a).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::relu(a)); }, a).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return ops::mean(ops::mul(a, a)); }, a).max_rel_error, kTol);
}

TEST(Ops, ShapeOpGradients) {
  std::mt19937_64 rng(2);
  auto a = random_tensor({6, 4}, rng);
  auto b = random_tensor({6, 2}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::concat_cols<double>({a, b})); }, b).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::slice_cols(a, 1, 2)); }, a).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::concat_rows<double>({a, a})); }, a).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::slice_rows(a, 2, 3)); }, a).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::swap_leading(a, 2, 3)); }, a).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::reshape(a, {4, 6})); }, a).max_rel_error, kTol);
}

TEST(Ops, SwapLeadingReordersBlocks) {
  // rows (a, b) for a in [0,2), b in [0,3) -> rows (b, a)
  auto x = Tensor<double>::from({6, 1}, {0, 1, 2, 10, 11, 12});
  auto y = ops::swap_leading(x, 2, 3);
  EXPECT_EQ(y.values(), (std::vector<double>{0, 10, 1, 11, 2, 12}));
}

TEST(Ops, LinearAndEmbeddingGradients) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({5, 4}, rng);
  auto w = random_tensor({4, 3}, rng);
  auto bias = random_tensor({3}, rng);
  auto f = [&] { return weighted_sum(ops::linear(x, w, bias)); };
  EXPECT_LT(gradcheck(f, x).max_rel_error, kTol);
  EXPECT_LT(gradcheck(f, w).max_rel_error, kTol);
  EXPECT_LT(gradcheck(f, bias).max_rel_error, kTol);
  auto table = random_tensor({6, 3}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::embedding(table, {1, 4, 1})); }, table).max_rel_error, kTol);
  EXPECT_THROW(ops::embedding(table, {6}), semhtr::VocabularyError);
}

TEST(Ops, Conv2dMatchesDirectConvolution) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({2, 2, 5, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto bias = random_tensor({3}, rng);
  auto y = ops::conv2d(x, w, bias, 2, 1, 1, 1);
  ASSERT_EQ(y.shape(), (semhtr::Shape{2, 3, 3, 6}));
  auto at = [&](int n, int c, int i, int j) {
    if (i < 0 || j < 0 || i >= 5 || j >= 6) return 0.0;
    return x.values()[((static_cast<std::size_t>(n) * 2 + c) * 5 + i) * 6 + j];
  };
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 3; ++o)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 6; ++j) {
          double s = bias.values()[o];
          for (int c = 0; c < 2; ++c)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj)
                s += w.values()[((static_cast<std::size_t>(o) * 2 + c) * 3 + ki) * 3 + kj] *
                     at(n, c, 2 * i - 1 + ki, j - 1 + kj);
          EXPECT_NEAR(y.values()[((static_cast<std::size_t>(n) * 3 + o) * 3 + i) * 6 + j], s, 1e-12);
        }
}

TEST(Ops, Conv2dGradients) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 2, 5, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto bias = random_tensor({3}, rng);
  auto f = [&] { return weighted_sum(ops::conv2d(x, w, bias, 2, 2, 1, 1)); };
  EXPECT_LT(gradcheck(f, x).max_rel_error, kTol);
  EXPECT_LT(gradcheck(f, w).max_rel_error, kTol);
  EXPECT_LT(gradcheck(f, bias).max_rel_error, kTol);
}

TEST(Ops, BatchNormGradientsAndRunningStats) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({3, 2, 2, 3}, rng);
  auto gamma = random_tensor({2}, rng);
  auto beta = random_tensor({2}, rng);
  auto rm = Tensor<double>::zeros({2});
  auto rv = Tensor<double>::filled({2}, 1.0);
  auto f = [&] { return weighted_sum(ops::batch_norm2d(x, gamma, beta, rm, rv, true)); };
  EXPECT_LT(gradcheck(f, x).max_rel_error, kTol);
  EXPECT_LT(gradcheck(f, gamma).max_rel_error, kTol);
  EXPECT_LT(gradcheck(f, beta).max_rel_error, kTol);
  EXPECT_NE(rm.values()[0], 0.0);
  // Evaluation mode uses the running statistics and is per-sample.
  auto single = ops::slice_rows(ops::reshape(x, {3, 12}), 0, 1);
  auto y_all = ops::batch_norm2d(x, gamma, beta, rm, rv, false);
  auto y_one = ops::batch_norm2d(ops::reshape(single, {1, 2, 2, 3}), gamma, beta, rm, rv, false);
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(y_all.values()[i], y_one.values()[i], 1e-12);
}

TEST(Ops, GridSampleGradients) {
  std::mt19937_64 rng(7);
  auto img = random_tensor({2, 1, 4, 5}, rng);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  std::vector<double> g(2 * 6 * 2);
  for (auto& v : g) v = u(rng);
  auto grid = Tensor<double>::from({2, 6, 2}, g, true);
  auto f = [&] { return weighted_sum(ops::grid_sample(img, grid, 2, 3)); };
  EXPECT_LT(gradcheck(f, img).max_rel_error, kTol);
  EXPECT_LT(gradcheck(f, grid).max_rel_error, kTol);
}

TEST(Ops, AttentionGradients) {
  std::mt19937_64 rng(8);
  const int n = 2, l = 4, a = 3, c = 5;
  auto q = random_tensor({n, a}, rng);
  auto k = random_tensor({n * l, a}, rng);
  auto v = random_tensor({a}, rng);
  auto h = random_tensor({n * l, c}, rng);
  auto f = [&] { return weighted_sum(ops::additive_attention(q, k, v, h, l)); };
  EXPECT_LT(gradcheck(f, q).max_rel_error, kTol);
  EXPECT_LT(gradcheck(f, k).max_rel_error, kTol);
  EXPECT_LT(gradcheck(f, v).max_rel_error, kTol);
  EXPECT_LT(gradcheck(f, h).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return weighted_sum(ops::uniform_attention(h, n, l)); }, h).max_rel_error, kTol);
}

TEST(Ops, CrossEntropyIgnoresPadRows) {
  std::mt19937_64 rng(9);
  auto z = random_tensor({4, 5}, rng);
  std::vector<int> t{1, 3, 0, 2};
  EXPECT_LT(gradcheck([&] { return ops::cross_entropy(z, t, 0); }, z).max_rel_error, kTol);
  auto z3 = ops::slice_rows(z, 0, 2);
  auto full = ops::cross_entropy(z, {1, 3, 0, 0}, 0).item();
  auto part = ops::cross_entropy(z3, {1, 3}, 0).item();
  EXPECT_NEAR(full, part, 1e-12);
}

TEST(Ops, CosineLossGradientAndRange) {
  std::mt19937_64 rng(10);
  auto s = random_tensor({3, 6}, rng);
  auto e = random_tensor({3, 6}, rng, 1.0, false);
  EXPECT_LT(gradcheck([&] { return ops::cosine_embedding_loss(s, e); }, s).max_rel_error, kTol);
  auto zero = Tensor<double>::zeros({1, 6});
  EXPECT_THROW(ops::cosine_embedding_loss(zero, ops::slice_rows(e, 0, 1)), semhtr::DegenerateError);
}

TEST(Nn, RecurrentCellGradients) {
  std::mt19937_64 rng(11);
  semhtr::nn::ParameterStore<double> store;
  semhtr::nn::LstmLayer<double> lstm(store, "lstm", 3, 4, true, rng);
  semhtr::nn::GruCell<double> gru(store, "gru", 3, 4, rng);
  auto seq = random_tensor({3 * 2, 3}, rng);
  auto h = random_tensor({2, 4}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(lstm(seq, 3, 2)); }, seq).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return weighted_sum(lstm(seq, 3, 2)); }, lstm.w_hh).max_rel_error, kTol);
  auto x = ops::slice_rows(seq, 0, 2).detach();
  x.set_requires_grad(true);
  EXPECT_LT(gradcheck([&] { return weighted_sum(gru(x, h)); }, h).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return weighted_sum(gru(x, h)); }, gru.w_ih).max_rel_error, kTol);
}

TEST(Tensor, NoGradGuardSkipsGraph) {
  auto a = Tensor<double>::from({2}, {1, 2}, true);
  semhtr::NoGradGuard guard;
  auto b = ops::mul(a, a);
  EXPECT_TRUE(b.node().inputs.empty());
}

}  // namespace
