#pragma once

// Toy 2-D distributions with zero-thickness support, and headerless numeric
// CSV ingestion with train-split standardization.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pflow/metrics.hpp"
#include "pflow/rng.hpp"
#include "pflow/tensor.hpp"

namespace pflow {

enum class Toy2dKind { circles, cond_circles, sines, cond_sines };

inline std::string to_string(Toy2dKind k) {
  switch (k) {
    case Toy2dKind::circles: return "circles";
    case Toy2dKind::cond_circles: return "cond_circles";
    case Toy2dKind::sines: return "sines";
    default: return "cond_sines";
  }
}

inline Toy2dKind toy2d_kind_from_string(const std::string& s) {
  if (s == "circles") return Toy2dKind::circles;
  if (s == "cond_circles") return Toy2dKind::cond_circles;
  if (s == "sines") return Toy2dKind::sines;
  if (s == "cond_sines") return Toy2dKind::cond_sines;
  throw UsageError("unknown toy2d kind '" + s + "'");
}

inline bool is_conditional(Toy2dKind k) { return k == Toy2dKind::cond_circles || k == Toy2dKind::cond_sines; }

/// Training range of the condition for conditional kinds.
inline std::pair<double, double> condition_range(Toy2dKind k) {
  return k == Toy2dKind::cond_circles ? std::pair{0.25, 1.0} : std::pair{0.3, 1.0};
}

/// Fixed evaluation conditions of the reference figure.
inline std::vector<double> default_eval_conditions(Toy2dKind k) {
  if (k == Toy2dKind::cond_circles) return {0.25, 0.5};
  if (k == Toy2dKind::cond_sines) return {0.3, 0.6};
  return {};
}

struct Toy2dSpec {
  Toy2dKind kind = Toy2dKind::circles;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  std::optional<double> c;  // fixed condition; absent means sampled (training)
};

struct ToyData {
  PointSet points;
  std::optional<Tensor> conds;  // (n x 1) for conditional kinds
};

inline Tensor circle_points(std::span<const double> angles, std::span<const double> radii) {
  if (angles.size() != radii.size() || angles.empty()) throw UsageError("circle_points needs matching nonempty inputs");
  Tensor out({angles.size(), 2}, Uninitialized{});
  for (std::size_t i = 0; i < angles.size(); ++i) {
    out(i, 0) = radii[i] * std::cos(angles[i]);
    out(i, 1) = radii[i] * std::sin(angles[i]);
  }
  return out;
}

inline Tensor sine_points(std::span<const double> xs, std::span<const double> amplitudes) {
  if (xs.size() != amplitudes.size() || xs.empty()) throw UsageError("sine_points needs matching nonempty inputs");
  Tensor out({xs.size(), 2}, Uninitialized{});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out(i, 0) = xs[i];
    out(i, 1) = amplitudes[i] * std::sin(2.0 * std::numbers::pi * xs[i]);
  }
  return out;
}

inline ToyData gen_toy2d(const Toy2dSpec& spec, Rng& rng) {
  if (spec.n == 0) throw UsageError("toy2d needs n >= 1");
  const bool cond = is_conditional(spec.kind);
  if (!cond && spec.c) throw UsageError(to_string(spec.kind) + " takes no condition");
  if (cond && spec.c && !(*spec.c > 0.0 && *spec.c <= 1.0)) {
    throw UsageError("condition c must lie in (0, 1], got " + std::to_string(*spec.c));
  }
  const auto [c_lo, c_hi] = condition_range(spec.kind);
  std::vector<double> first(spec.n), second(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    switch (spec.kind) {
      case Toy2dKind::circles:
        first[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        second[i] = rng.uniform() < 0.5 ? 0.5 : 1.0;
        break;
      case Toy2dKind::cond_circles:
        second[i] = spec.c ? *spec.c : rng.uniform(c_lo, c_hi);
        first[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        break;
      case Toy2dKind::sines:
        first[i] = rng.uniform(-1.0, 1.0);
        second[i] = 0.5;
        break;
      case Toy2dKind::cond_sines:
        second[i] = spec.c ? *spec.c : rng.uniform(c_lo, c_hi);
        first[i] = rng.uniform(-1.0, 1.0);
        break;
    }
  }
  const bool circular = spec.kind == Toy2dKind::circles || spec.kind == Toy2dKind::cond_circles;
  Tensor pts = circular ? circle_points(first, second) : sine_points(first, second);
  ToyData out{PointSet(std::move(pts)), std::nullopt};
  if (cond) out.conds = Tensor({spec.n, 1}, second);
  return out;
}

/// Distance of a point from the manifold its condition defines.
inline double toy2d_residual(Toy2dKind kind, double x, double y, double c) {
  switch (kind) {
    case Toy2dKind::circles: {
      const double r = std::hypot(x, y);
      return std::min(std::abs(r - 0.5), std::abs(r - 1.0));
    }
    case Toy2dKind::cond_circles: return std::abs(std::hypot(x, y) - c);
    case Toy2dKind::sines: return std::abs(y - 0.5 * std::sin(2.0 * std::numbers::pi * x));
    default: return std::abs(y - c * std::sin(2.0 * std::numbers::pi * x));
  }
}

// ---------------------------------------------------------------------------

class StandardizationError : public Error {
 public:
  using Error::Error;
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct TabularDataset {
  Tensor features;  // standardized, original row order
  std::vector<double> mean, std;
  std::vector<std::size_t> train_idx, val_idx, test_idx;

  Tensor split(const std::vector<std::size_t>& idx) const {
    if (idx.empty()) throw UsageError("requested split is empty");
    return features.gather_rows(idx);
  }
  Tensor train() const { return split(train_idx); }
  Tensor val() const { return split(val_idx); }
  Tensor test() const { return split(test_idx); }

  Tensor unstandardize(const Tensor& x) const {
    if (x.cols() != mean.size()) throw DimensionError("unstandardize width mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = out(i, j) * std[j] + mean[j];
    }
    return out;
  }
};

inline Tensor read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t col = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      ++col;
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || cell.find_first_not_of(" \t", used) != std::string::npos || !std::isfinite(v)) {
        throw FormatError(path + ": row " + std::to_string(line_no) + ", col " + std::to_string(col) +
                          ": not a finite number: '" + cell + "'");
      }
      values.push_back(v);
    }
    if (rows == 0) cols = col;
    if (col != cols) {
      throw FormatError(path + ": row " + std::to_string(line_no) + " has " + std::to_string(col) + " columns, expected " +
                        std::to_string(cols));
    }
    ++rows;
  }
  if (rows == 0) throw FormatError(path + ": no data rows");
  return Tensor({rows, cols}, values);
}

inline void write_csv_matrix(const std::string& path, const Tensor& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  char buf[32];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

/// Seeded shuffled split, columns standardized by the training rows
/// (population standard deviation).
inline TabularDataset standardize_split(const Tensor& raw, SplitFractions f, std::uint64_t seed) {
  const std::size_t n = raw.rows(), d = raw.cols();
  if (n < 2) throw UsageError("tabular data needs at least 2 rows");
  if (f.train <= 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw UsageError("split fractions must be non-negative, train > 0, and sum to 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
  const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f.train * n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(f.val * n)));

  TabularDataset ds{raw, std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), {}, {}, {}};
  ds.train_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.val_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                    order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  ds.test_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());

  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (auto i : ds.train_idx) m += raw(i, j);
    m /= static_cast<double>(n_train);
    double v = 0.0;
    for (auto i : ds.train_idx) v += (raw(i, j) - m) * (raw(i, j) - m);
    const double s = std::sqrt(v / static_cast<double>(n_train));
    if (!(s > 1e-12 * std::max(1.0, std::abs(m)))) {
      throw StandardizationError("column " + std::to_string(j + 1) + " is constant on the training split");
    }
    ds.mean[j] = m;
    ds.std[j] = s;
    for (std::size_t i = 0; i < n; ++i) ds.features(i, j) = (raw(i, j) - m) / s;
  }
  return ds;
}

inline TabularDataset load_csv_standardized(const std::string& path, SplitFractions f, std::uint64_t seed) {
  return standardize_split(read_csv_matrix(path), f, seed);
}

}  // namespace pflow
