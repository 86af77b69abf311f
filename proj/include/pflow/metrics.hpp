#pragma once

// Sample-based distances between point sets and the set-of-sets scores built
// on them. CD and EMD follow the point-cloud conventions:
//   chamfer  equal sizes: sum_x min_y |x - y|^2 (one-sided, not symmetric)
//            otherwise:   mean_x min_y |x - y|^2 + mean_y min_x |x - y|^2
//   emd      min over bijections of sum |x - f(x)|
//   mmd      mean over targets of the distance to the nearest prediction
//   cov      fraction of predictions that are some target's nearest one

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "pflow/rng.hpp"
#include "pflow/tensor.hpp"

namespace pflow {

class PointSet {
 public:
  PointSet(Tensor points, bool ordered = false) : points_(std::move(points)), ordered_(ordered) {
    if (points_.rank() != 2) throw UsageError("point set must be an n x dim matrix");
    if (!points_.all_finite()) throw UsageError("point set contains non-finite values");
  }

  const Tensor& points() const { return points_; }
  std::size_t size() const { return points_.rows(); }
  std::size_t dim() const { return points_.cols(); }
  bool ordered() const { return ordered_; }
  const double* row(std::size_t i) const { return points_.data() + i * dim(); }

 private:
  Tensor points_;
  bool ordered_;
};

using SetOfSets = std::vector<PointSet>;

enum class Measure { l2, cd, emd };

inline std::string to_string(Measure m) {
  switch (m) {
    case Measure::l2: return "L2";
    case Measure::cd: return "CD";
    default: return "EMD";
  }
}

namespace detail {

inline double squared_distance(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t k = 0; k < dim; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

inline void require_same_dim(const PointSet& x, const PointSet& y) {
  if (x.dim() != y.dim()) {
    throw UsageError("point sets differ in dimension: " + std::to_string(x.dim()) + " vs " + std::to_string(y.dim()));
  }
}

// min_y |x - y|^2 for each x, summed.
inline double nearest_sum(const PointSet& x, const PointSet& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < y.size(); ++j) best = std::min(best, squared_distance(x.row(i), y.row(j), x.dim()));
    total += best;
  }
  return total;
}

}  // namespace detail

inline double l2_ordered(const PointSet& x, const PointSet& y) {
  if (!x.ordered() || !y.ordered()) throw UsageError("l2_ordered needs ordered point sets");
  detail::require_same_dim(x, y);
  if (x.size() != y.size()) throw UsageError("l2_ordered needs equal set sizes");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += std::sqrt(detail::squared_distance(x.row(i), y.row(i), x.dim()));
  return total;
}

inline double chamfer(const PointSet& x, const PointSet& y) {
  detail::require_same_dim(x, y);
  if (x.size() == y.size()) return detail::nearest_sum(x, y);
  return detail::nearest_sum(x, y) / static_cast<double>(x.size()) +
         detail::nearest_sum(y, x) / static_cast<double>(y.size());
}

struct Assignment {
  std::vector<std::size_t> col_for_row;
  double cost = 0.0;
};

/// Minimum-cost perfect matching on a square matrix (shortest augmenting
/// paths with potentials, O(n^3)).
inline Assignment hungarian_assign(const Tensor& cost) {
  if (cost.rank() != 2 || cost.rows() != cost.cols()) throw UsageError("hungarian_assign needs a square matrix");
  if (!cost.all_finite()) throw UsageError("hungarian_assign needs finite costs");
  const std::size_t n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; index 0 is the virtual source column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment out;
  out.col_for_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) out.col_for_row[match[j] - 1] = j - 1;
  // Summing the chosen entries directly keeps the total exact for the oracle tests.
  for (std::size_t i = 0; i < n; ++i) out.cost += cost(i, out.col_for_row[i]);
  return out;
}

inline Tensor pairwise_l2(const PointSet& x, const PointSet& y) {
  detail::require_same_dim(x, y);
  Tensor c({x.size(), y.size()}, Uninitialized{});
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) c(i, j) = std::sqrt(detail::squared_distance(x.row(i), y.row(j), x.dim()));
  }
  return c;
}

inline double emd(const PointSet& x, const PointSet& y, bool mean_normalized = false) {
  detail::require_same_dim(x, y);
  if (x.size() != y.size()) throw UsageError("emd needs equal set sizes");
  const double total = hungarian_assign(pairwise_l2(x, y)).cost;
  return mean_normalized ? total / static_cast<double>(x.size()) : total;
}

inline double set_distance(const PointSet& x, const PointSet& y, Measure m) {
  switch (m) {
    case Measure::l2: return l2_ordered(x, y);
    case Measure::cd: return chamfer(x, y);
    default: return emd(x, y);
  }
}

namespace detail {

inline void require_sets(const SetOfSets& st, const SetOfSets& sp) {
  if (st.empty() || sp.empty()) throw UsageError("mmd/cov need nonempty set collections");
  const std::size_t dim = st.front().dim();
  for (const auto* group : {&st, &sp}) {
    for (const auto& s : *group) {
      if (s.dim() != dim) throw UsageError("all point sets must share one dimension");
    }
  }
}

// Index of the nearest prediction for each target, lowest index on ties.
inline std::vector<std::pair<std::size_t, double>> nearest_predictions(const SetOfSets& st, const SetOfSets& sp,
                                                                       Measure m) {
  require_sets(st, sp);
  std::vector<std::pair<std::size_t, double>> out;
  out.reserve(st.size());
  for (const auto& x : st) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < sp.size(); ++j) {
      const double d = set_distance(x, sp[j], m);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    out.emplace_back(best, best_d);
  }
  return out;
}

}  // namespace detail

inline double mmd(const SetOfSets& st, const SetOfSets& sp, Measure m) {
  double total = 0.0;
  for (const auto& [idx, d] : detail::nearest_predictions(st, sp, m)) total += d;
  return total / static_cast<double>(st.size());
}

inline double cov(const SetOfSets& st, const SetOfSets& sp, Measure m) {
  std::vector<char> hit(sp.size(), 0);
  for (const auto& [idx, d] : detail::nearest_predictions(st, sp, m)) hit[idx] = 1;
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(sp.size());
}

/// Sets larger than `max_points` are thinned to a seeded random subset.
inline PointSet subsample(const PointSet& s, std::size_t max_points, Rng& rng) {
  if (s.size() <= max_points) return s;
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < max_points; ++i) std::swap(idx[i], idx[i + rng.index(s.size() - i)]);
  idx.resize(max_points);
  std::sort(idx.begin(), idx.end());
  return PointSet(s.points().gather_rows(idx), s.ordered());
}

}  // namespace pflow
