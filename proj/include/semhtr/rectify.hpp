// SPDX-License-Identifier: Apache-2.0
//
// Thin-plate-spline rectification: a localization network predicts control
// points on the input image, a TPS fitted between the canonical points of the
// output frame and those predictions maps every output pixel to an input
// location, and a bilinear sampler resamples the image there.
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semhtr/nn.hpp"

namespace semhtr {

struct Point2 {
  double x = 0;
  double y = 0;
};

/// Ordered control points in normalized [-1, 1]^2 image space: the top row
/// left to right, then the bottom row left to right.
class ControlPoints {
 public:
  ControlPoints() = default;
  explicit ControlPoints(std::vector<Point2> points) : points_(std::move(points)) {}

  std::size_t size() const { return points_.size(); }
  const Point2& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<Point2>& points() const { return points_; }

  bool in_unit_box() const {
    for (const auto& p : points_)
      if (!(std::abs(p.x) <= 1.0 && std::abs(p.y) <= 1.0)) return false;
    return true;
  }

  /// Two horizontal rows of count/2 evenly spaced points at y = -0.8 and y = +0.8.
  static ControlPoints fiducial_layout(int count, double row_y = 0.8, double margin_x = 0.9) {
    if (count < 4 || count % 2 != 0) throw ConfigError("control point count must be even and >= 4");
    const int per_row = count / 2;
    std::vector<Point2> pts;
    for (double y : {-row_y, row_y}) {
      for (int i = 0; i < per_row; ++i) {
        pts.push_back({-margin_x + 2.0 * margin_x * i / (per_row - 1), y});
      }
    }
    return ControlPoints(std::move(pts));
  }

 private:
  std::vector<Point2> points_;
};

/// TPS radial kernel U(r) = r^2 log r^2 with U(0) = 0, taken on squared distance.
inline double tps_kernel(double r2) { return r2 <= 0.0 ? 0.0 : r2 * std::log(r2); }

/// T(p) = A [x, y, 1]^T + sum_i w_i U(|p - s_i|).
struct TpsTransform {
  Eigen::Matrix<double, 2, 3> affine_part;
  Eigen::MatrixX2d nonlinear_weights;
  ControlPoints source_points;

  Point2 apply(Point2 p) const {
    double x = affine_part(0, 0) * p.x + affine_part(0, 1) * p.y + affine_part(0, 2);
    double y = affine_part(1, 0) * p.x + affine_part(1, 1) * p.y + affine_part(1, 2);
    for (std::size_t i = 0; i < source_points.size(); ++i) {
      const double dx = p.x - source_points[i].x, dy = p.y - source_points[i].y;
      const double u = tps_kernel(dx * dx + dy * dy);
      x += nonlinear_weights(static_cast<Eigen::Index>(i), 0) * u;
      y += nonlinear_weights(static_cast<Eigen::Index>(i), 1) * u;
    }
    return {x, y};
  }
};

namespace detail {

inline Eigen::MatrixXd tps_system(const ControlPoints& source) {
  const auto k = static_cast<Eigen::Index>(source.size());
  Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(k + 3, k + 3);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& pi = source[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto& pj = source[static_cast<std::size_t>(j)];
      const double dx = pi.x - pj.x, dy = pi.y - pj.y;
      sys(i, j) = tps_kernel(dx * dx + dy * dy);
    }
    sys(i, k) = 1.0;
    sys(i, k + 1) = pi.x;
    sys(i, k + 2) = pi.y;
    sys(k, i) = 1.0;
    sys(k + 1, i) = pi.x;
    sys(k + 2, i) = pi.y;
  }
  return sys;
}

inline void check_non_degenerate(const ControlPoints& source) {
  const std::size_t k = source.size();
  if (k < 3) throw DegenerateError("TPS needs at least 3 control points, got " + std::to_string(k));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double dx = source[i].x - source[j].x, dy = source[i].y - source[j].y;
      if (dx * dx + dy * dy < 1e-20) {
        throw DegenerateError("TPS control points " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
      }
    }
  }
  Eigen::MatrixXd p(static_cast<Eigen::Index>(k), 3);
  for (std::size_t i = 0; i < k; ++i) p.row(static_cast<Eigen::Index>(i)) << 1.0, source[i].x, source[i].y;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(p);
  const auto& sv = svd.singularValues();
  if (sv(2) < 1e-10 * sv(0)) throw DegenerateError("TPS source control points are collinear");
}

/// Inverse of the augmented TPS system, solved in double precision.
inline Eigen::MatrixXd tps_system_inverse(const ControlPoints& source) {
  check_non_degenerate(source);
  const Eigen::MatrixXd sys = tps_system(source);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(sys);
  if (!lu.isInvertible() || lu.rcond() < 1e-14) throw DegenerateError("TPS system is singular");
  return lu.inverse();
}

inline std::vector<double> lattice(int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = n == 1 ? 0.0 : -1.0 + 2.0 * i / (n - 1);
  return v;
}

}  // namespace detail

/// Fits the TPS that maps source[i] to target[i].
inline TpsTransform solve_tps(const ControlPoints& source, const ControlPoints& target) {
  if (source.size() != target.size()) {
    throw ShapeError("solve_tps: " + std::to_string(source.size()) + " source vs " +
                     std::to_string(target.size()) + " target points");
  }
  const Eigen::MatrixXd inv = detail::tps_system_inverse(source);
  const auto k = static_cast<Eigen::Index>(source.size());
  Eigen::MatrixX2d rhs = Eigen::MatrixX2d::Zero(k + 3, 2);
  for (Eigen::Index i = 0; i < k; ++i) {
    rhs(i, 0) = target[static_cast<std::size_t>(i)].x;
    rhs(i, 1) = target[static_cast<std::size_t>(i)].y;
  }
  const Eigen::MatrixX2d sol = inv * rhs;
  TpsTransform t;
  t.nonlinear_weights = sol.topRows(k);
  // sol rows k.. are coefficients of (1, x, y); affine_part columns are (x, y, 1).
  for (int d = 0; d < 2; ++d) {
    t.affine_part(d, 0) = sol(k + 1, d);
    t.affine_part(d, 1) = sol(k + 2, d);
    t.affine_part(d, 2) = sol(k, d);
  }
  t.source_points = source;
  return t;
}

/// Row-major out_h x out_w grid of source coordinates.
struct SamplingGrid {
  int height = 0;
  int width = 0;
  std::vector<Point2> coords;

  const Point2& at(int i, int j) const { return coords[static_cast<std::size_t>(i) * width + j]; }
};

/// Uniform normalized lattice over the output rectangle; a size-1 axis sits at 0.
inline SamplingGrid identity_grid(int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("sampling grid size must be positive");
  SamplingGrid g{out_h, out_w, {}};
  const auto ys = detail::lattice(out_h), xs = detail::lattice(out_w);
  g.coords.reserve(static_cast<std::size_t>(out_h) * out_w);
  for (double y : ys)
    for (double x : xs) g.coords.push_back({x, y});
  return g;
}

inline SamplingGrid generate_grid(const TpsTransform& transform, int out_h, int out_w) {
  SamplingGrid g = identity_grid(out_h, out_w);
  for (auto& p : g.coords) p = transform.apply(p);
  return g;
}

/// Bilinear resampling of a batch of single-channel images [N, 1, H, W] at
/// the grid (shared by every image), clamped to the border.
template <typename T>
Tensor<T> sample_bilinear(const Tensor<T>& images, const SamplingGrid& grid) {
  require_rank(images, 4, "sample_bilinear");
  const int n = images.dim(0);
  std::vector<T> g;
  g.reserve(static_cast<std::size_t>(n) * grid.coords.size() * 2);
  for (int b = 0; b < n; ++b) {
    for (const auto& p : grid.coords) {
      g.push_back(static_cast<T>(p.x));
      g.push_back(static_cast<T>(p.y));
    }
  }
  auto gt = Tensor<T>::from({n, static_cast<int>(grid.coords.size()), 2}, std::move(g));
  return ops::grid_sample(images, gt, grid.height, grid.width);
}

/// Bilinear resize of each [H, W] plane of a [N, 1, H, W] batch (no gradient).
template <typename T>
Tensor<T> resize_planes(const Tensor<T>& images, int out_h, int out_w) {
  const int h = images.dim(2), w = images.dim(3);
  if (h == out_h && w == out_w) return images.detach();
  NoGradGuard guard;
  return sample_bilinear(images, identity_grid(out_h, out_w)).detach();
}

struct RectifierConfig {
  int control_points = 20;
  int loc_input_h = 32;
  int loc_input_w = 128;
  std::vector<int> loc_channels{32, 64, 128, 256};
  int loc_hidden = 256;
};

/// Localization network + TPS grid generator + sampler.
template <typename T>
class Rectifier {
 public:
  Rectifier() = default;
  Rectifier(nn::ParameterStore<T>& store, const std::string& name, const RectifierConfig& config, int out_h,
            int out_w, std::mt19937_64& rng)
      : config_(config), out_h_(out_h), out_w_(out_w),
        canonical_(ControlPoints::fiducial_layout(config.control_points)) {
    int channels = 1, h = config.loc_input_h, w = config.loc_input_w;
    for (std::size_t i = 0; i < config.loc_channels.size(); ++i) {
      convs_.emplace_back(store, name + ".loc.conv" + std::to_string(i), channels, config.loc_channels[i], 3, 2, 2, rng,
                          true);
      channels = config.loc_channels[i];
      h = (h - 1) / 2 + 1;
      w = (w - 1) / 2 + 1;
    }
    fc1_ = nn::Linear<T>(store, name + ".loc.fc1", channels * h * w, config.loc_hidden, rng);
    const int k = config.control_points;
    std::vector<T> bias;
    for (const auto& p : canonical_.points()) {
      bias.push_back(static_cast<T>(std::atanh(p.x)));
      bias.push_back(static_cast<T>(std::atanh(p.y)));
    }
    fc2_.weight = store.parameter(name + ".loc.fc2.weight", {config.loc_hidden, 2 * k},
                                  std::vector<T>(static_cast<std::size_t>(config.loc_hidden) * 2 * k, T(0)));
    fc2_.bias = store.parameter(name + ".loc.fc2.bias", {2 * k}, std::move(bias));
    grid_matrix_ = build_grid_matrix();
  }

  const RectifierConfig& config() const { return config_; }
  const ControlPoints& canonical_points() const { return canonical_; }

  /// [N, 2K] predicted points (x0, y0, x1, y1, ...) in [-1, 1].
  Tensor<T> control_points(const Tensor<T>& images) const {
    require_rank(images, 4, "predict_control_points");
    for (T v : images.values()) {
      if (!std::isfinite(static_cast<double>(v))) throw InvalidInputError("predict_control_points: non-finite pixel value");
    }
    auto x = resize_planes(images, config_.loc_input_h, config_.loc_input_w);
    for (const auto& conv : convs_) x = ops::relu(conv(x));
    x = ops::reshape(x, {x.dim(0), static_cast<int>(x.size() / x.dim(0))});
    x = ops::relu(fc1_(x));
    return ops::tanh(fc2_(x));
  }

  /// [N, out_h*out_w, 2] sampling coordinates for predicted points [N, 2K].
  Tensor<T> sampling_grid(const Tensor<T>& points) const {
    const int n = points.dim(0), k = config_.control_points;
    auto per_point = ops::reshape(points, {n * k, 2});
    std::vector<Tensor<T>> grids;
    for (int b = 0; b < n; ++b) grids.push_back(ops::matmul(grid_matrix_, ops::slice_rows(per_point, b * k, k)));
    return ops::reshape(ops::concat_rows(grids), {n, out_h_ * out_w_, 2});
  }

  Tensor<T> operator()(const Tensor<T>& images) const {
    auto grid = sampling_grid(control_points(images));
    return ops::grid_sample(images, grid, out_h_, out_w_);
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& c : convs_) {
      out.push_back(c.weight);
      out.push_back(c.bias);
    }
    for (const auto* l : {&fc1_, &fc2_}) {
      out.push_back(l->weight);
      out.push_back(l->bias);
    }
    return out;
  }

 private:
  /// G = R * inv(L)[:, :K] so that grid = G * predicted points, where R holds
  /// [U(|g - s_i|), 1, x, y] for every output lattice point g.
  Tensor<T> build_grid_matrix() const {
    const Eigen::MatrixXd inv = detail::tps_system_inverse(canonical_);
    const int k = static_cast<int>(canonical_.size());
    const SamplingGrid lattice = identity_grid(out_h_, out_w_);
    const int pts = out_h_ * out_w_;
    Eigen::MatrixXd r(pts, k + 3);
    for (int p = 0; p < pts; ++p) {
      const auto& g = lattice.coords[static_cast<std::size_t>(p)];
      for (int i = 0; i < k; ++i) {
        const double dx = g.x - canonical_[static_cast<std::size_t>(i)].x, dy = g.y - canonical_[static_cast<std::size_t>(i)].y;
        r(p, i) = tps_kernel(dx * dx + dy * dy);
      }
      r(p, k) = 1.0;
      r(p, k + 1) = g.x;
      r(p, k + 2) = g.y;
    }
    const Eigen::MatrixXd gm = r * inv.leftCols(k);
    std::vector<T> values(static_cast<std::size_t>(pts) * k);
    for (int p = 0; p < pts; ++p)
      for (int i = 0; i < k; ++i) values[static_cast<std::size_t>(p) * k + i] = static_cast<T>(gm(p, i));
    return Tensor<T>::from({pts, k}, std::move(values));
  }

  RectifierConfig config_;
  int out_h_ = 0, out_w_ = 0;
  ControlPoints canonical_;
  std::vector<nn::Conv2d<T>> convs_;
  nn::Linear<T> fc1_, fc2_;
  Tensor<T> grid_matrix_;
};

/// Converts a [1, 2K] or [2K] predicted-point tensor row into ControlPoints.
template <typename T>
ControlPoints to_control_points(const Tensor<T>& points, int row = 0) {
  const int k2 = points.dim(-1);
  std::vector<Point2> pts;
  for (int i = 0; i < k2 / 2; ++i) {
    pts.push_back({static_cast<double>(points[static_cast<std::size_t>(row) * k2 + 2 * i]),
                   static_cast<double>(points[static_cast<std::size_t>(row) * k2 + 2 * i + 1])});
  }
  return ControlPoints(std::move(pts));
}

}  // namespace semhtr
