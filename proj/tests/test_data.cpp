#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "pflow/data.hpp"

using namespace pflow;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& contents) {
  const fs::path dir = fs::temp_directory_path() / "pflow_test_data";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p) << contents;
  return p;
}

}  // namespace

TEST(Toy2d, UnitCircleAtQuarterTurns) {
  const double pi = std::numbers::pi;
  const std::vector<double> angles{0, pi / 2, pi, 3 * pi / 2}, radii(4, 1.0);
  const Tensor pts = circle_points(angles, radii);
  const double want[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(pts(i, 0), want[i][0], 1e-15);
    EXPECT_NEAR(pts(i, 1), want[i][1], 1e-15);
  }
}

TEST(Toy2d, ConditionalSinePeak) {
  const std::vector<double> xs{0.25}, amps{0.6};
  EXPECT_EQ(sine_points(xs, amps).to_vector(), (std::vector<double>{0.25, 0.6}));
}

TEST(Toy2d, FixedConditionCirclesHaveRadiusC) {
  Rng rng(1);
  for (double c : {0.25, 0.5, 1.0}) {
    const ToyData d = gen_toy2d({Toy2dKind::cond_circles, 2000, 0, c}, rng);
    for (std::size_t i = 0; i < d.points.size(); ++i) {
      ASSERT_NEAR(std::hypot(d.points.points()(i, 0), d.points.points()(i, 1)), c, 1e-12);
      ASSERT_EQ((*d.conds)(i, 0), c);
    }
  }
}

TEST(Toy2d, InvalidConditionsAreUsageErrors) {
  Rng rng(0);
  EXPECT_THROW(gen_toy2d({Toy2dKind::cond_circles, 10, 0, 0.0}, rng), UsageError);
  EXPECT_THROW(gen_toy2d({Toy2dKind::cond_sines, 10, 0, 1.5}, rng), UsageError);
  EXPECT_THROW(gen_toy2d({Toy2dKind::circles, 10, 0, 0.5}, rng), UsageError);
  EXPECT_THROW(gen_toy2d({Toy2dKind::sines, 0, 0, std::nullopt}, rng), UsageError);
}

TEST(Toy2d, KindNamesRoundTrip) {
  for (auto k : {Toy2dKind::circles, Toy2dKind::cond_circles, Toy2dKind::sines, Toy2dKind::cond_sines}) {
    EXPECT_EQ(toy2d_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(toy2d_kind_from_string("moons"), UsageError);
  EXPECT_EQ(default_eval_conditions(Toy2dKind::cond_circles), (std::vector<double>{0.25, 0.5}));
  EXPECT_EQ(default_eval_conditions(Toy2dKind::cond_sines), (std::vector<double>{0.3, 0.6}));
}

TEST(Toy2d, CirclesUseBothRadiiAndUniformAngles) {
  Rng rng(2);
  const ToyData d = gen_toy2d({Toy2dKind::circles, 20000, 0, std::nullopt}, rng);
  std::size_t inner = 0;
  double mean_x = 0.0;
  for (std::size_t i = 0; i < d.points.size(); ++i) {
    const double r = std::hypot(d.points.points()(i, 0), d.points.points()(i, 1));
    inner += r < 0.75;
    mean_x += d.points.points()(i, 0) / 20000.0;
  }
  EXPECT_NEAR(static_cast<double>(inner) / 20000.0, 0.5, 0.02);
  EXPECT_NEAR(mean_x, 0.0, 0.02);
  EXPECT_FALSE(d.conds.has_value());
}

TEST(Toy2d, TrainingConditionsCoverTheirRange) {
  Rng rng(3);
  const ToyData d = gen_toy2d({Toy2dKind::cond_sines, 5000, 0, std::nullopt}, rng);
  double lo = 1e9, hi = -1e9;
  for (double c : d.conds->values()) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  EXPECT_GE(lo, 0.3);
  EXPECT_LT(hi, 1.0);
  EXPECT_LT(lo, 0.31);
  EXPECT_GT(hi, 0.99);
}

// Property: every unconditional toy point lies on its manifold.
TEST(DataProperty, ManifoldExactness) {
  Rng rng(4);
  for (auto k : {Toy2dKind::circles, Toy2dKind::sines}) {
    const ToyData d = gen_toy2d({k, 5000, 0, std::nullopt}, rng);
    for (std::size_t i = 0; i < d.points.size(); ++i) {
      ASSERT_LT(toy2d_residual(k, d.points.points()(i, 0), d.points.points()(i, 1), 0.0), 1e-12) << to_string(k);
    }
  }
}

// Property: stored conditions regenerate each training point's manifold.
TEST(DataProperty, ConditionConsistency) {
  Rng rng(5);
  for (auto k : {Toy2dKind::cond_circles, Toy2dKind::cond_sines}) {
    const ToyData d = gen_toy2d({k, 5000, 0, std::nullopt}, rng);
    for (std::size_t i = 0; i < d.points.size(); ++i) {
      const double c = (*d.conds)(i, 0);
      ASSERT_LT(toy2d_residual(k, d.points.points()(i, 0), d.points.points()(i, 1), c), 1e-12) << to_string(k);
    }
  }
}

TEST(DataProperty, SeededDeterminism) {
  for (auto k : {Toy2dKind::circles, Toy2dKind::cond_circles, Toy2dKind::sines, Toy2dKind::cond_sines}) {
    Rng a(9), b(9);
    const ToyData da = gen_toy2d({k, 300, 0, std::nullopt}, a), db = gen_toy2d({k, 300, 0, std::nullopt}, b);
    EXPECT_EQ(da.points.points(), db.points.points());
  }
}

TEST(Tabular, TwoRowColumnStandardizesToMinusOneOne) {
  const auto ds = standardize_split(Tensor::matrix({{0}, {2}}), {1.0, 0.0, 0.0}, 0);
  EXPECT_EQ(ds.train_idx.size(), 2u);
  EXPECT_EQ(ds.features(0, 0), -1.0);
  EXPECT_EQ(ds.features(1, 0), 1.0);
}

TEST(Tabular, ReloadWithSameSeedGivesSameSplit) {
  Rng rng(6);
  const Tensor raw = rng.normal(200, 3);
  const fs::path p = temp_file("same_seed.csv", "");
  write_csv_matrix(p.string(), raw);
  const auto a = load_csv_standardized(p.string(), {}, 42), b = load_csv_standardized(p.string(), {}, 42);
  EXPECT_EQ(a.train_idx, b.train_idx);
  EXPECT_EQ(a.val_idx, b.val_idx);
  EXPECT_EQ(a.test_idx, b.test_idx);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.train_idx.size(), 160u);
  EXPECT_EQ(a.val_idx.size(), 20u);
  EXPECT_EQ(a.test_idx.size(), 20u);
  const auto c = load_csv_standardized(p.string(), {}, 43);
  EXPECT_NE(a.train_idx, c.train_idx);
}

TEST(Tabular, CsvRoundTripIsExact) {
  Rng rng(7);
  const Tensor raw = rng.normal(50, 4, 1e3);
  const fs::path p = temp_file("roundtrip.csv", "");
  write_csv_matrix(p.string(), raw);
  EXPECT_EQ(read_csv_matrix(p.string()), raw);
}

TEST(Tabular, UnstandardizeRoundTrips) {
  Rng rng(8);
  Tensor raw = rng.normal(300, 3, 5.0);
  for (std::size_t i = 0; i < 300; ++i) raw(i, 1) += 100.0;
  const auto ds = standardize_split(raw, {}, 1);
  const Tensor back = ds.unstandardize(ds.features);
  EXPECT_LT((back.mat() - raw.mat()).cwiseAbs().maxCoeff(), 1e-12 * 100);
  double worst = 0.0;
  for (std::size_t i = 0; i < 300; ++i) {
    for (std::size_t j = 0; j < 3; ++j) worst = std::max(worst, std::abs(back(i, j) - raw(i, j)) / std::max(1.0, std::abs(raw(i, j))));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Tabular, TrainingColumnsHaveZeroMeanUnitStd) {
  Rng rng(9);
  Tensor raw = rng.uniform(1000, 4, -3.0, 10.0);
  const auto ds = standardize_split(raw, {}, 2);
  const Tensor tr = ds.train();
  for (std::size_t j = 0; j < 4; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < tr.rows(); ++i) m += tr(i, j);
    m /= static_cast<double>(tr.rows());
    for (std::size_t i = 0; i < tr.rows(); ++i) v += (tr(i, j) - m) * (tr(i, j) - m);
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(v / static_cast<double>(tr.rows())), 1.0, 1e-9);
  }
}

TEST(Tabular, ParseFailureNamesRowAndColumn) {
  const fs::path p = temp_file("bad.csv", "1,2,3\n4,oops,6\n");
  try {
    read_csv_matrix(p.string());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("col 2"), std::string::npos) << msg;
  }
}

TEST(Tabular, RaggedRowIsFormatError) {
  const fs::path p = temp_file("ragged.csv", "1,2\n3\n");
  EXPECT_THROW(read_csv_matrix(p.string()), FormatError);
}

TEST(Tabular, MissingFileIsIoError) {
  EXPECT_THROW(read_csv_matrix("/nonexistent/definitely/missing.csv"), IoError);
}

TEST(Tabular, ConstantColumnIsNamed) {
  const fs::path p = temp_file("const.csv", "1,5\n2,5\n3,5\n4,5\n");
  try {
    load_csv_standardized(p.string(), {1.0, 0.0, 0.0}, 0);
    FAIL() << "expected StandardizationError";
  } catch (const StandardizationError& e) {
    EXPECT_NE(std::string(e.what()).find("column 2"), std::string::npos) << e.what();
  }
}

TEST(Tabular, TooFewRowsIsUsageError) {
  EXPECT_THROW(standardize_split(Tensor::row({1.0, 2.0}), {}, 0), UsageError);
}
