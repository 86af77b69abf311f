#pragma once

// Planar serial arm: forward kinematics, sampled IK training pairs and the
// position / orientation error of candidate solutions.

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "pflow/rng.hpp"
#include "pflow/tensor.hpp"

namespace pflow {

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  if (r > std::numbers::pi) r -= two_pi;
  return r;
}

struct Pose {
  double x = 0.0, y = 0.0, phi = 0.0;
};

struct PlanarArm {
  std::vector<double> lengths{1.0, 1.0, 1.0};
  std::vector<std::pair<double, double>> limits{3, {-std::numbers::pi, std::numbers::pi}};

  PlanarArm() = default;
  explicit PlanarArm(std::vector<double> l) : lengths(std::move(l)), limits(lengths.size(), {-std::numbers::pi, std::numbers::pi}) {
    validate();
  }
  PlanarArm(std::vector<double> l, std::vector<std::pair<double, double>> lim) : lengths(std::move(l)), limits(std::move(lim)) {
    validate();
  }

  std::size_t joints() const { return lengths.size(); }
  double reach() const {
    double s = 0.0;
    for (double l : lengths) s += l;
    return s;
  }

  void validate() const {
    if (lengths.size() < 2) throw UsageError("arm needs at least 2 links");
    if (limits.size() != lengths.size()) throw UsageError("one joint limit per link required");
    for (double l : lengths) {
      if (!(l > 0.0)) throw UsageError("link lengths must be positive");
    }
    for (const auto& [lo, hi] : limits) {
      if (!(lo < hi)) throw UsageError("joint limit needs lo < hi");
    }
  }
};

/// Kinematics without the joint-limit check.
inline Pose fk_unchecked(const PlanarArm& arm, std::span<const double> theta) {
  if (theta.size() != arm.joints()) throw DimensionError("fk: expected " + std::to_string(arm.joints()) + " joint angles");
  Pose p;
  double cum = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    cum += theta[i];
    p.x += arm.lengths[i] * std::cos(cum);
    p.y += arm.lengths[i] * std::sin(cum);
  }
  p.phi = wrap_angle(cum);
  return p;
}

inline Pose fk(const PlanarArm& arm, std::span<const double> theta) {
  if (theta.size() != arm.joints()) throw DimensionError("fk: expected " + std::to_string(arm.joints()) + " joint angles");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const auto [lo, hi] = arm.limits[i];
    if (!(theta[i] >= lo && theta[i] <= hi)) {
      throw DomainError("joint " + std::to_string(i) + " angle " + std::to_string(theta[i]) + " outside its limits");
    }
  }
  return fk_unchecked(arm, theta);
}

/// Flow condition for a pose: (x, y, cos phi, sin phi).
inline std::vector<double> pose_condition(const Pose& p) { return {p.x, p.y, std::cos(p.phi), std::sin(p.phi)}; }
inline constexpr std::size_t pose_condition_dim = 4;

struct IkSample {
  std::vector<double> theta;
  Pose pose;
};

struct IkDataset {
  Tensor joints;      // n x J
  Tensor conditions;  // n x 4
  std::vector<Pose> poses;
};

inline IkSample make_ik_sample(const PlanarArm& arm, std::vector<double> theta) {
  const Pose p = fk(arm, theta);
  return {std::move(theta), p};
}

inline IkDataset gen_ik_dataset(const PlanarArm& arm, std::size_t n, Rng& rng) {
  if (n == 0) throw UsageError("gen_ik_dataset needs n >= 1");
  arm.validate();
  const std::size_t J = arm.joints();
  IkDataset ds{Tensor({n, J}, Uninitialized{}), Tensor({n, pose_condition_dim}, Uninitialized{}), {}};
  ds.poses.reserve(n);
  std::vector<double> theta(J);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < J; ++j) theta[j] = rng.uniform(arm.limits[j].first, arm.limits[j].second);
    const Pose p = fk(arm, theta);
    for (std::size_t j = 0; j < J; ++j) ds.joints(i, j) = theta[j];
    const auto c = pose_condition(p);
    for (std::size_t j = 0; j < pose_condition_dim; ++j) ds.conditions(i, j) = c[j];
    ds.poses.push_back(p);
  }
  return ds;
}

struct IkErrors {
  double position = 0.0;       // arm length units
  double angular_deg = 0.0;    // degrees, each term in [0, 180]
};

/// Mean errors of candidate solutions (rows of `solutions`). Solutions are
/// scored geometrically, so out-of-limit samples from a learned sampler are
/// measured rather than rejected.
inline IkErrors ik_errors(const PlanarArm& arm, const Tensor& solutions, const Pose& target) {
  if (solutions.size() == 0 || solutions.rows() == 0) throw UsageError("ik_errors needs a nonempty solution set");
  if (solutions.cols() != arm.joints()) throw DimensionError("ik_errors: solution width differs from joint count");
  IkErrors e;
  for (std::size_t i = 0; i < solutions.rows(); ++i) {
    const Pose p = fk_unchecked(arm, std::span<const double>(solutions.data() + i * arm.joints(), arm.joints()));
    e.position += std::hypot(p.x - target.x, p.y - target.y);
    e.angular_deg += std::abs(wrap_angle(p.phi - target.phi));
  }
  const auto n = static_cast<double>(solutions.rows());
  e.position /= n;
  e.angular_deg = e.angular_deg / n * 180.0 / std::numbers::pi;
  return e;
}

}  // namespace pflow
