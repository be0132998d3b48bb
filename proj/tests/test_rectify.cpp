// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "semhtr/rectify.hpp"

using namespace semhtr;
using semhtr::gradtest::gradcheck;
using semhtr::gradtest::weighted_sum;

namespace {

ControlPoints random_points(std::mt19937_64& rng, int k, double jitter = 0.0, const ControlPoints* base = nullptr) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Point2> pts;
  for (int i = 0; i < k; ++i) {
    if (base) {
      pts.push_back({(*base)[i].x + jitter * u(rng), (*base)[i].y + jitter * u(rng)});
    } else {
      pts.push_back({u(rng), u(rng)});
    }
  }
  return ControlPoints(std::move(pts));
}

TEST(Tps, FiducialLayoutOrder) {
  auto cp = ControlPoints::fiducial_layout(20);
  ASSERT_EQ(cp.size(), 20u);
  EXPECT_TRUE(cp.in_unit_box());
  EXPECT_DOUBLE_EQ(cp[0].x, -0.9);
  EXPECT_DOUBLE_EQ(cp[0].y, -0.8);
  EXPECT_DOUBLE_EQ(cp[9].x, 0.9);
  EXPECT_DOUBLE_EQ(cp[10].y, 0.8);
  EXPECT_LT(cp[3].x, cp[4].x);
}

TEST(Tps, IdentitySolve) {
  auto cp = ControlPoints::fiducial_layout(20);
  auto t = solve_tps(cp, cp);
  Eigen::Matrix<double, 2, 3> id;
  id << 1, 0, 0, 0, 1, 0;
  EXPECT_LT((t.affine_part - id).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(t.nonlinear_weights.cwiseAbs().maxCoeff(), 1e-6);
  auto grid = generate_grid(t, 4, 4);
  auto lat = identity_grid(4, 4);
  for (std::size_t i = 0; i < grid.coords.size(); ++i) {
    EXPECT_NEAR(grid.coords[i].x, lat.coords[i].x, 1e-5);
    EXPECT_NEAR(grid.coords[i].y, lat.coords[i].y, 1e-5);
  }
}

TEST(Tps, TranslationIsAffine) {
  auto src = ControlPoints::fiducial_layout(20);
  std::vector<Point2> shifted;
  for (const auto& p : src.points()) shifted.push_back({p.x + 0.1, p.y});
  auto t = solve_tps(src, ControlPoints(shifted));
  for (double y = -1; y <= 1.0; y += 0.25)
    for (double x = -1; x <= 1.0; x += 0.25) {
      auto q = t.apply({x, y});
      EXPECT_NEAR(q.x, x + 0.1, 1e-6);
      EXPECT_NEAR(q.y, y, 1e-6);
    }
  auto grid = generate_grid(t, 3, 5);
  auto lat = identity_grid(3, 5);
  for (std::size_t i = 0; i < grid.coords.size(); ++i) EXPECT_NEAR(grid.coords[i].x, lat.coords[i].x + 0.1, 1e-6);
}

TEST(Tps, InterpolationExactnessAndSideConditions) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto src = random_points(rng, 20);
    auto dst = random_points(rng, 20);
    auto t = solve_tps(src, dst);
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto q = t.apply(src[i]);
      EXPECT_LT(std::hypot(q.x - dst[i].x, q.y - dst[i].y), 1e-4);
    }
    for (int d = 0; d < 2; ++d) {
      double s1 = 0, sx = 0, sy = 0;
      for (std::size_t i = 0; i < src.size(); ++i) {
        const double w = t.nonlinear_weights(static_cast<Eigen::Index>(i), d);
        s1 += w;
        sx += w * src[i].x;
        sy += w * src[i].y;
      }
      EXPECT_NEAR(s1, 0, 1e-6);
      EXPECT_NEAR(sx, 0, 1e-6);
      EXPECT_NEAR(sy, 0, 1e-6);
    }
  }
}

TEST(Tps, DegenerateSourcesRejected) {
  std::vector<Point2> line{{-1, 0}, {0, 0}, {1, 0}, {0.5, 0}};
  EXPECT_THROW(solve_tps(ControlPoints(line), ControlPoints(line)), DegenerateError);
  std::vector<Point2> dup{{-1, 0}, {0, 1}, {1, 0}, {1, 0}};
  EXPECT_THROW(solve_tps(ControlPoints(dup), ControlPoints(dup)), DegenerateError);
  std::vector<Point2> two{{-1, 0}, {0, 1}};
  EXPECT_THROW(solve_tps(ControlPoints(two), ControlPoints(two)), DegenerateError);
}

TEST(Grid, DegenerateAxisSitsAtCenter) {
  auto cp = ControlPoints::fiducial_layout(20);
  std::vector<Point2> shifted;
  for (const auto& p : cp.points()) shifted.push_back({p.x + 0.1, p.y - 0.2});
  auto t = solve_tps(cp, ControlPoints(shifted));
  auto g = generate_grid(t, 1, 1);
  ASSERT_EQ(g.coords.size(), 1u);
  auto c = t.apply({0, 0});
  EXPECT_DOUBLE_EQ(g.coords[0].x, c.x);
  EXPECT_DOUBLE_EQ(g.coords[0].y, c.y);
}

TEST(Sampler, ManualBilinearCenter) {
  auto img = Tensor<double>::from({1, 1, 2, 2}, {0, 1, 2, 3});
  SamplingGrid g{1, 1, {{0.0, 0.0}}};
  EXPECT_DOUBLE_EQ(sample_bilinear(img, g).item(), 1.5);
}

TEST(Sampler, IdentityAndConstant) {
  std::mt19937_64 rng(5);
  auto img = gradtest::random_tensor({1, 1, 6, 9}, rng, 1.0, false);
  auto out = sample_bilinear(img, identity_grid(6, 9));
  for (std::size_t i = 0; i < img.values().size(); ++i) EXPECT_NEAR(out.values()[i], img.values()[i], 1e-6);

  auto flat = Tensor<double>::filled({1, 1, 5, 7}, 0.37);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  SamplingGrid g{3, 4, {}};
  for (int i = 0; i < 12; ++i) g.coords.push_back({u(rng), u(rng)});
  auto sampled = sample_bilinear(flat, g);
  for (double v : sampled.values()) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Sampler, PartitionOfUnity) {
  // Sampling an all-ones image yields the sum of the four bilinear weights.
  std::mt19937_64 rng(6);
  auto ones = Tensor<double>::filled({1, 1, 7, 11}, 1.0);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  SamplingGrid g{10, 10, {}};
  for (int i = 0; i < 100; ++i) g.coords.push_back({u(rng), u(rng)});
  auto sampled = sample_bilinear(ones, g);
  for (double v : sampled.values()) EXPECT_NEAR(v, 1.0, 1e-7);
}

RectifierConfig tiny_config() {
  RectifierConfig cfg;
  cfg.loc_input_h = 8;
  cfg.loc_input_w = 16;
  cfg.loc_channels = {2, 3};
  cfg.loc_hidden = 6;
  return cfg;
}

TEST(Rectifier, FreshInitPredictsFiducialLayout) {
  std::mt19937_64 rng(7);
  nn::ParameterStore<double> store;
  Rectifier<double> rect(store, "rect", tiny_config(), 8, 16, rng);
  auto img = gradtest::random_tensor({2, 1, 8, 16}, rng, 0.5, false);
  auto pts = rect.control_points(img);
  auto fid = ControlPoints::fiducial_layout(20);
  ASSERT_EQ(pts.shape(), (Shape{2, 40}));
  for (int b = 0; b < 2; ++b) {
    auto cp = to_control_points(pts, b);
    EXPECT_TRUE(cp.in_unit_box());
    for (std::size_t i = 0; i < 20; ++i) {
      EXPECT_NEAR(cp[i].x, fid[i].x, 1e-12);
      EXPECT_NEAR(cp[i].y, fid[i].y, 1e-12);
    }
  }
  // Identity rectification at init.
  auto out = rect(img);
  for (std::size_t i = 0; i < img.values().size(); ++i) EXPECT_NEAR(out.values()[i], img.values()[i], 1e-9);
}

TEST(Rectifier, RejectsNonFiniteInput) {
  std::mt19937_64 rng(8);
  nn::ParameterStore<double> store;
  Rectifier<double> rect(store, "rect", tiny_config(), 8, 16, rng);
  auto img = Tensor<double>::zeros({1, 1, 8, 16});
  img.values()[3] = std::nan("");
  EXPECT_THROW(rect.control_points(img), InvalidInputError);
}

TEST(Rectifier, GradientThroughSamplerToLocalizationParams) {
  std::mt19937_64 rng(9);
  nn::ParameterStore<double> store;
  Rectifier<double> rect(store, "rect", tiny_config(), 8, 16, rng);
  // Move away from the zero-initialized head so every parameter gets signal.
  for (const auto& e : store.entries()) {
    auto t = e.tensor;
    std::normal_distribution<double> d(0.0, 0.3);
    for (auto& v : t.values()) v += d(rng);
  }
  auto img = gradtest::random_tensor({1, 1, 8, 16}, rng, 0.6, false);
  for (const auto& e : store.entries()) {
    auto r = gradcheck([&] { return weighted_sum(rect(img)); }, e.tensor);
    EXPECT_LT(r.max_rel_error, 1e-4) << e.name;
  }
}

}  // namespace
