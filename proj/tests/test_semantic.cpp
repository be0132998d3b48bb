// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "gradcheck.hpp"
#include "semhtr/semantic.hpp"

using namespace semhtr;

namespace {

Eigen::MatrixXd as_matrix(const Tensor<double>& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (int i = 0; i < t.dim(0); ++i)
    for (int j = 0; j < t.dim(1); ++j) m(i, j) = t.values()[static_cast<std::size_t>(i) * t.dim(1) + j];
  return m;
}

Eigen::VectorXd as_vector(const Tensor<double>& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.values().data(), static_cast<Eigen::Index>(t.values().size()));
}

TEST(SemanticHead, ZeroInputClosedForm) {
  std::mt19937_64 rng(1);
  nn::ParameterStore<double> store;
  SemanticHead<double> head(store, "sem", 4, 3, 8, 5, rng);
  auto s = head.predict(Tensor<double>::zeros({1, 12}));
  Eigen::VectorXd expected =
      as_matrix(head.second().weight).transpose() * as_vector(head.first().bias).cwiseMax(0.0) + as_vector(head.second().bias);
  for (int j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(s.values()[j], expected(j));
}

TEST(SemanticHead, MatchesDenseOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    nn::ParameterStore<double> store;
    SemanticHead<double> head(store, "sem", 5, 4, 16, 7, rng);
    FeatureSequence<double> h{gradtest::random_tensor({3 * 5, 4}, rng, 1.0, false), 3, 5, 4};
    auto s = head(h);
    ASSERT_EQ(s.shape(), (Shape{3, 7}));
    const Eigen::MatrixXd w1 = as_matrix(head.first().weight), w2 = as_matrix(head.second().weight);
    const Eigen::VectorXd b1 = as_vector(head.first().bias), b2 = as_vector(head.second().bias);
    for (int n = 0; n < 3; ++n) {
      // X is the row-major (L, C) flattening of image n.
      Eigen::VectorXd x(20);
      for (int k = 0; k < 20; ++k) x(k) = h.values.values()[static_cast<std::size_t>(n) * 20 + k];
      const Eigen::VectorXd expected = w2.transpose() * (w1.transpose() * x + b1).cwiseMax(0.0) + b2;
      for (int j = 0; j < 7; ++j) EXPECT_NEAR(s.values()[static_cast<std::size_t>(n) * 7 + j], expected(j), 1e-6);
    }
  }
}

TEST(SemanticHead, ShapeChecks) {
  std::mt19937_64 rng(3);
  nn::ParameterStore<double> store;
  SemanticHead<double> head(store, "sem", 64, 512, 512, 300, rng);
  EXPECT_EQ(head.embedding_dim(), 300);
  FeatureSequence<double> wrong{Tensor<double>::zeros({2 * 10, 512}), 2, 10, 512};
  EXPECT_THROW(head(wrong), ShapeError);
}

TEST(SemanticHead, GradientCheck) {
  std::mt19937_64 rng(4);
  nn::ParameterStore<double> store;
  SemanticHead<double> head(store, "sem", 3, 4, 6, 5, rng);
  auto x = gradtest::random_tensor({2, 12}, rng);
  auto e = gradtest::random_tensor({2, 5}, rng, 1.0, false);
  auto loss = [&] { return ops::cosine_embedding_loss(head.predict(x), e); };
  EXPECT_LT(gradtest::gradcheck(loss, x).max_rel_error, 1e-4);
  for (const auto& p : store.entries()) EXPECT_LT(gradtest::gradcheck(loss, p.tensor).max_rel_error, 1e-4) << p.name;
}

TEST(CosineLoss, Examples) {
  std::vector<double> a{1, 2, 3}, neg{-1, -2, -3}, x{1, 0}, y{0, 1};
  EXPECT_NEAR(cosine_embedding_loss<double>(a, a), 0.0, 1e-15);
  EXPECT_NEAR(cosine_embedding_loss<double>(a, neg), 2.0, 1e-15);
  EXPECT_NEAR(cosine_embedding_loss<double>(x, y), 1.0, 1e-15);
  std::vector<double> zero{0, 0, 0};
  EXPECT_THROW(cosine_embedding_loss<double>(zero, a), DegenerateError);
  EXPECT_THROW(cosine_embedding_loss<double>(a, zero), DegenerateError);
}

TEST(CosineLoss, RangeScaleInvarianceAndGradient) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> alpha(0.01, 100.0);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = gradtest::random_tensor({1, 8}, rng);
    auto e = gradtest::random_tensor({1, 8}, rng, 1.0, false);
    const double l = cosine_embedding_loss<double>(s.data(), e.data());
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0);
    auto scaled = s.values();
    const double k = alpha(rng);
    for (auto& v : scaled) v *= k;
    EXPECT_NEAR(cosine_embedding_loss<double>(scaled, e.data()), l, 1e-7);
    EXPECT_NEAR(ops::cosine_embedding_loss(s, e).item(), l, 1e-12);
    EXPECT_LT(gradtest::gradcheck([&] { return ops::cosine_embedding_loss(s, e); }, s).max_rel_error, 1e-4);
  }
}

}  // namespace
