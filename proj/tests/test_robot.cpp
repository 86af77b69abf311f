#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "pflow/robot.hpp"

using namespace pflow;

namespace {
constexpr double kPi = std::numbers::pi;
}

TEST(WrapAngle, RangeIsHalfOpen) {
  EXPECT_EQ(wrap_angle(kPi), kPi);
  EXPECT_NEAR(wrap_angle(-kPi), kPi, 1e-15);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-15);
  EXPECT_NEAR(wrap_angle(-7.0), -7.0 + 2 * kPi, 1e-15);
  EXPECT_EQ(wrap_angle(0.3), 0.3);
}

TEST(ForwardKinematics, StretchedArm) {
  const Pose p = fk(PlanarArm({1, 1}), std::vector<double>{0, 0});
  EXPECT_EQ(p.x, 2.0);
  EXPECT_EQ(p.y, 0.0);
  EXPECT_EQ(p.phi, 0.0);
}

TEST(ForwardKinematics, QuarterTurn) {
  const Pose p = fk(PlanarArm({1, 1}), std::vector<double>{kPi / 2, 0});
  EXPECT_NEAR(p.x, 0.0, 1e-15);
  EXPECT_NEAR(p.y, 2.0, 1e-15);
  EXPECT_NEAR(p.phi, kPi / 2, 1e-15);
}

TEST(ForwardKinematics, MatchesComplexAccumulation) {
  Rng rng(1);
  for (std::size_t links : {2u, 3u, 5u}) {
    std::vector<double> lengths(links);
    for (auto& l : lengths) l = rng.uniform(0.2, 2.0);
    const PlanarArm arm(lengths);
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> theta(links);
      for (auto& v : theta) v = rng.uniform(-kPi, kPi);
      const Pose a = fk(arm, theta), b = oracle::fk_complex(lengths, theta);
      ASSERT_NEAR(a.x, b.x, 1e-12);
      ASSERT_NEAR(a.y, b.y, 1e-12);
      ASSERT_NEAR(wrap_angle(a.phi - b.phi), 0.0, 1e-12);
    }
  }
}

TEST(ForwardKinematics, LimitViolationIsDomainError) {
  const PlanarArm arm({1, 1}, {{-1.0, 1.0}, {-1.0, 1.0}});
  EXPECT_THROW(fk(arm, std::vector<double>{0.0, 1.5}), DomainError);
  EXPECT_NO_THROW(fk(arm, std::vector<double>{1.0, -1.0}));
  EXPECT_NO_THROW(fk_unchecked(arm, std::vector<double>{0.0, 1.5}));
}

TEST(ForwardKinematics, WrongJointCountIsDimensionError) {
  EXPECT_THROW(fk(PlanarArm(), std::vector<double>{0.0, 0.0}), DimensionError);
}

TEST(PlanarArmConfig, InvalidArmsAreRejected) {
  EXPECT_THROW(PlanarArm({1.0}), UsageError);
  EXPECT_THROW(PlanarArm({1.0, 0.0}), UsageError);
  EXPECT_THROW(PlanarArm({1.0, 1.0}, {{0.0, 0.0}, {-1.0, 1.0}}), UsageError);
  EXPECT_EQ(PlanarArm().joints(), 3u);
  EXPECT_EQ(PlanarArm().reach(), 3.0);
}

TEST(IkDataset, InjectedZeroPose) {
  const IkSample s = make_ik_sample(PlanarArm(), {0, 0, 0});
  EXPECT_EQ(s.pose.x, 3.0);
  EXPECT_EQ(s.pose.y, 0.0);
  EXPECT_EQ(s.pose.phi, 0.0);
}

TEST(IkDataset, ConditionEncodesAngleContinuously) {
  const auto c = pose_condition({0.5, -0.5, kPi / 2});
  ASSERT_EQ(c.size(), pose_condition_dim);
  EXPECT_EQ(c[0], 0.5);
  EXPECT_EQ(c[1], -0.5);
  EXPECT_NEAR(c[2], 0.0, 1e-15);
  EXPECT_EQ(c[3], 1.0);
}

TEST(IkDataset, EveryPoseIsFkOfItsJoints) {
  const PlanarArm arm;
  Rng rng(2);
  const IkDataset ds = gen_ik_dataset(arm, 5000, rng);
  for (std::size_t i = 0; i < 5000; ++i) {
    const Pose p = fk(arm, std::span<const double>(ds.joints.data() + 3 * i, 3));
    ASSERT_NEAR(p.x, ds.poses[i].x, 1e-12);
    ASSERT_NEAR(p.y, ds.poses[i].y, 1e-12);
    ASSERT_NEAR(std::abs(wrap_angle(p.phi - ds.poses[i].phi)), 0.0, 1e-12);
    const auto c = pose_condition(ds.poses[i]);
    for (std::size_t j = 0; j < 4; ++j) ASSERT_EQ(ds.conditions(i, j), c[j]);
  }
}

TEST(IkDataset, PosesCoverTheAnnulus) {
  const PlanarArm arm;
  Rng rng(3);
  const IkDataset ds = gen_ik_dataset(arm, 100000, rng);
  double rmax = 0.0;
  for (const auto& p : ds.poses) rmax = std::max(rmax, std::hypot(p.x, p.y));
  EXPECT_LE(rmax, arm.reach() + 1e-12);
  EXPECT_GT(rmax, 0.95 * arm.reach());
}

TEST(IkDataset, JointsStayWithinLimits) {
  const PlanarArm arm({1, 0.5, 0.25}, {{-0.5, 0.5}, {0.0, 1.0}, {-2.0, -1.0}});
  Rng rng(4);
  const IkDataset ds = gen_ik_dataset(arm, 2000, rng);
  for (std::size_t i = 0; i < 2000; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      ASSERT_GE(ds.joints(i, j), arm.limits[j].first);
      ASSERT_LE(ds.joints(i, j), arm.limits[j].second);
    }
  }
}

TEST(IkDataset, SeedDeterminismAndEmptyRequest) {
  Rng a(5), b(5);
  EXPECT_EQ(gen_ik_dataset(PlanarArm(), 100, a).joints, gen_ik_dataset(PlanarArm(), 100, b).joints);
  EXPECT_THROW(gen_ik_dataset(PlanarArm(), 0, a), UsageError);
}

TEST(IkErrors, ExactSolutionScoresZero) {
  const PlanarArm arm;
  const std::vector<double> theta{0.3, -1.1, 2.0};
  const Pose target = fk(arm, theta);
  const IkErrors e = ik_errors(arm, Tensor::row(theta), target);
  EXPECT_EQ(e.position, 0.0);
  EXPECT_EQ(e.angular_deg, 0.0);
}

TEST(IkErrors, ThreeFourFive) {
  const PlanarArm arm;
  const std::vector<double> theta{0.3, -1.1, 2.0};
  Pose target = fk(arm, theta);
  target.x -= 0.3;
  target.y -= 0.4;
  const IkErrors e = ik_errors(arm, Tensor::row(theta), target);
  EXPECT_NEAR(e.position, 0.5, 1e-12);
  EXPECT_EQ(e.angular_deg, 0.0);
}

TEST(IkErrors, AngularErrorWrapsAroundPi) {
  const PlanarArm arm({1, 1});
  const std::vector<double> theta{kPi - 0.1, 0.0};
  const Pose p = fk(arm, theta);
  const IkErrors e = ik_errors(arm, Tensor::row(theta), {p.x, p.y, -kPi + 0.1});
  EXPECT_NEAR(e.angular_deg, 0.2 * 180.0 / kPi, 1e-9);
  EXPECT_NEAR(e.angular_deg, 11.459, 1e-3);
}

TEST(IkErrors, MeanOverSolutions) {
  const PlanarArm arm({1, 1});
  const Tensor sols = Tensor::matrix({{0, 0}, {kPi / 2, 0}});
  const IkErrors e = ik_errors(arm, sols, {2, 0, 0});
  EXPECT_NEAR(e.position, (0.0 + std::sqrt(8.0)) / 2, 1e-12);
  EXPECT_NEAR(e.angular_deg, 45.0, 1e-12);
}

TEST(IkErrors, BadInputs) {
  EXPECT_THROW(ik_errors(PlanarArm(), Tensor::row({0.0, 0.0}), {}), DimensionError);
}

// Property: angular error is a wrapped distance, never beyond 180 degrees.
TEST(RobotProperty, AngularErrorInZeroToPi) {
  const PlanarArm arm;
  Rng rng(6);
  for (int t = 0; t < 2000; ++t) {
    const Tensor sol = rng.uniform(1, 3, -10.0, 10.0);
    const IkErrors e = ik_errors(arm, sol, {0, 0, rng.uniform(-kPi, kPi)});
    ASSERT_GE(e.angular_deg, 0.0);
    ASSERT_LE(e.angular_deg, 180.0);
  }
}

// Property: generated pairs are their own perfect solutions.
TEST(RobotProperty, GroundTruthHasZeroError) {
  const PlanarArm arm;
  Rng rng(7);
  const IkDataset ds = gen_ik_dataset(arm, 2000, rng);
  for (std::size_t i = 0; i < 2000; ++i) {
    const IkErrors e = ik_errors(arm, ds.joints.row_slice(i, i + 1), ds.poses[i]);
    ASSERT_LT(e.position, 1e-12);
    ASSERT_LT(e.angular_deg, 1e-12);
  }
}
