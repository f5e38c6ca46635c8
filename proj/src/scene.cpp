#include "binsplat/scene.hpp"

#include <algorithm>
#include <cstring>

#include "binsplat/errors.hpp"
#include "binsplat/rng.hpp"

namespace binsplat {

void GaussianScene::add(const Gaussian& g, std::span<const double> logits) {
  require(logits.empty() || logits.size() == static_cast<std::size_t>(dims()),
          "GaussianScene::add: logit count != layout dims");
  Gaussian stored = g;
  // Already-unit quaternions are kept bit-for-bit so file round trips are stable.
  if (std::abs(stored.rotation.norm() - 1.0) > 1e-6) stored.rotation.normalize();
  gaussians_.push_back(stored);
  if (logits.empty()) {
    feature_logits_.resize(feature_logits_.size() + dims(), 0.0);
  } else {
    feature_logits_.insert(feature_logits_.end(), logits.begin(), logits.end());
  }
}

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

template <class V>
bool same_bits(const V& a, const V& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (!same_bits(a[i], b[i])) return false;
  return true;
}

}  // namespace

bool GaussianScene::operator==(const GaussianScene& other) const {
  if (layout_ != other.layout_ || size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    const Gaussian& a = gaussians_[i];
    const Gaussian& b = other.gaussians_[i];
    if (!same_bits(a.position, b.position) || !same_bits(a.log_scale, b.log_scale) ||
        !same_bits(a.rotation.coeffs(), b.rotation.coeffs()) || !same_bits(a.opacity_logit, b.opacity_logit) ||
        !same_bits(a.color, b.color))
      return false;
  }
  return std::equal(feature_logits_.begin(), feature_logits_.end(), other.feature_logits_.begin(),
                    [](double a, double b) { return same_bits(a, b); });
}

void init_feature_logits(GaussianScene& scene, double stddev, uint64_t seed) {
  CounterRng rng(seed, 0xFEA7u);
  for (double& v : scene.feature_logits()) v = stddev == 0.0 ? 0.0 : stddev * rng.normal();
}

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("camera focal lengths must be positive");
  if (!(near_clip < far_clip)) throw ValidationError("camera near clip must be below far clip");
  if (width < 1 || height < 1) throw ValidationError("camera image size must be at least 1x1");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                       double fov_y_deg, int width, int height) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Camera cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * eye;
  cam.width = width;
  cam.height = height;
  const double f = 0.5 * height / std::tan(0.5 * fov_y_deg * 3.14159265358979323846 / 180.0);
  cam.fx = cam.fy = f;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  return cam;
}

}  // namespace binsplat
