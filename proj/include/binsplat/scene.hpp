#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "binsplat/layout.hpp"

namespace binsplat {

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Geometry and appearance of one 3D Gaussian. Feature logits live in the
/// owning GaussianScene so they can be optimized as one flat array.
struct Gaussian {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  double opacity_logit = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Constant(0.5);

  double opacity() const { return logistic(opacity_logit); }
  Eigen::Vector3d scale() const { return log_scale.array().exp(); }
};

class GaussianScene {
 public:
  GaussianScene() = default;
  explicit GaussianScene(LevelLayout layout) : layout_(std::move(layout)) {}

  const LevelLayout& layout() const { return layout_; }
  std::size_t size() const { return gaussians_.size(); }
  bool empty() const { return gaussians_.empty(); }
  int dims() const { return layout_.total_dims(); }

  // Appends a Gaussian. Missing logits are zero; the rotation is normalized.
  void add(const Gaussian& g, std::span<const double> logits = {});

  const Gaussian& operator[](std::size_t i) const { return gaussians_[i]; }
  Gaussian& operator[](std::size_t i) { return gaussians_[i]; }
  const std::vector<Gaussian>& gaussians() const { return gaussians_; }

  std::span<const double> features(std::size_t i) const {
    return {feature_logits_.data() + i * dims(), static_cast<std::size_t>(dims())};
  }
  std::span<double> features(std::size_t i) {
    return {feature_logits_.data() + i * dims(), static_cast<std::size_t>(dims())};
  }
  // Row-major N x D.
  std::span<const double> feature_logits() const { return feature_logits_; }
  std::span<double> feature_logits() { return feature_logits_; }

  // Bit-exact equality of every stored field.
  bool operator==(const GaussianScene& other) const;

 private:
  LevelLayout layout_;
  std::vector<Gaussian> gaussians_;
  std::vector<double> feature_logits_;
};

/// Fills feature logits with seeded N(0, stddev^2) draws. stddev 0 zeroes them.
void init_feature_logits(GaussianScene& scene, double stddev, uint64_t seed);

/// Pinhole camera. Camera space is x right, y down, z forward; pixel (x, y)
/// is sampled at its center (x + 0.5, y + 0.5).
struct Camera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int width = 1, height = 1;
  double near_clip = 0.01, far_clip = 100.0;

  void validate() const;
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }

  /// Camera at `eye` looking at `target`, vertical field of view in degrees.
  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                        double fov_y_deg, int width, int height);
};

}  // namespace binsplat
