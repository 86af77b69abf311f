#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pflow/errors.hpp"

namespace pflow {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Allocator that leaves doubles uninitialized on resize; Tensor always
// writes its storage explicitly. Buffers are 64-byte aligned: Eigen peels
// vectorized reductions by runtime alignment, so a heap-dependent alignment
// would change summation order and break bitwise reproducibility.
template <typename T>
struct default_init_allocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = default_init_allocator<U>;
  };
  using std::allocator<T>::allocator;
  static constexpr std::align_val_t kAlign{64};
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

struct Uninitialized {};

/// Dense row-major array of doubles.
///
/// Rank-1 tensors behave as a single row when viewed as a matrix, so a
/// point in R^D and a batch of one point are interchangeable.
class Tensor {
 public:
  Tensor() : shape_{1, 1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_size(shape_), fill);
  }

  /// Storage left uninitialized; the caller must overwrite every entry.
  Tensor(Shape shape, Uninitialized) : shape_(std::move(shape)) {
    validate_shape();
    data_.resize(shape_size(shape_));
  }

  Tensor(Shape shape, const std::vector<double>& values)
      : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    validate_shape();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor values (" + std::to_string(data_.size()) + ") do not fill shape " +
                           shape_string(shape_));
    }
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }
  static Tensor row(const std::vector<double>& v) { return Tensor({1, v.size()}, v); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, v);
  }
  static Tensor from_matrix(const RowMatrix& m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, Uninitialized{});
    t.mat() = m;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }

  std::size_t rows() const {
    require_matrix();
    return shape_.size() == 1 ? 1 : shape_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return shape_.back();
  }

  std::span<double> values() { return {data_.data(), data_.size()}; }
  std::span<const double> values() const { return {data_.data(), data_.size()}; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  MatrixMap mat() {
    return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }
  ConstMatrixMap mat() const {
    return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }

  // x * 0 is NaN exactly for non-finite x, so one vectorized sum decides.
  bool all_finite() const {
    Eigen::Map<const Eigen::ArrayXd> a(data_.data(), static_cast<Eigen::Index>(data_.size()));
    return std::isfinite((a * 0.0).sum());
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

  /// Rows [begin, end) as a new tensor.
  Tensor row_slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows()) throw DimensionError("row slice out of range");
    const std::size_t c = cols();
    Tensor out({end - begin, c}, Uninitialized{});
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
              data_.begin() + static_cast<std::ptrdiff_t>(end * c), out.data_.begin());
    return out;
  }

  /// Columns [begin, end) as a new tensor.
  Tensor col_slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > cols()) throw DimensionError("column slice out of range");
    Tensor out({rows(), end - begin}, Uninitialized{});
    out.mat() = mat().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
    return out;
  }

  Tensor gather_rows(std::span<const std::size_t> idx) const {
    const std::size_t c = cols();
    Tensor out({idx.size(), c}, Uninitialized{});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(idx[i] * c), c,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return out;
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (auto e : shape_) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
    }
  }
  void require_matrix() const {
    if (shape_.size() > 2) throw DimensionError("matrix view needs rank <= 2, got " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double, default_init_allocator<double>> data_;
};

inline Tensor hcat(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw DimensionError("hcat row mismatch");
  Tensor out({a.rows(), a.cols() + b.cols()}, Uninitialized{});
  out.mat() << a.mat(), b.mat();
  return out;
}

inline Tensor vcat(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw DimensionError("vcat column mismatch");
  Tensor out({a.rows() + b.rows(), a.cols()}, Uninitialized{});
  out.mat() << a.mat(), b.mat();
  return out;
}

}  // namespace pflow
