#pragma once

// Dequantization strategies applied to training batches:
//   none         data used as-is
//   uniform      x + u,   u ~ U[lo, hi)^d
//   softflow     x + c*e, c ~ U(0, c_max), e ~ N(0, I); c joins the condition
//   paddingflow  (x + e_d, e_p), e_d ~ N(0, a^2 I_d), e_p ~ N(0, b^2 I_p)

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <variant>

#include "pflow/rng.hpp"
#include "pflow/tensor.hpp"

namespace pflow {

struct PaddingNoiseConfig {
  std::size_t p = 1;
  double a = 0.01;
  double b = 2.0;

  void validate() const {
    if (!(a >= 0.0) || !std::isfinite(a)) throw UsageError("paddingflow data-noise scale a must be >= 0");
    if (p > 0 && (!(b > 0.0) || !std::isfinite(b))) {
      throw UsageError("paddingflow padding-noise scale b must be > 0 when p > 0");
    }
  }
  bool is_noop() const { return p == 0 && a == 0.0; }
};

struct NoDequant {};

struct UniformDequant {
  double lo = -0.5;
  double hi = 0.5;
  static UniformDequant symmetric(double half_width) {
    if (!(half_width > 0.0)) throw UsageError("uniform half width must be > 0");
    return {-half_width, half_width};
  }
};

struct SoftFlowDequant {
  double c_max = 0.1;
};

struct PaddingFlowDequant {
  PaddingNoiseConfig noise;
};

using DequantStrategy = std::variant<NoDequant, UniformDequant, SoftFlowDequant, PaddingFlowDequant>;

inline std::string strategy_kind(const DequantStrategy& s) {
  switch (s.index()) {
    case 0: return "none";
    case 1: return "uniform";
    case 2: return "softflow";
    default: return "paddingflow";
  }
}

inline void validate(const DequantStrategy& s) {
  if (const auto* u = std::get_if<UniformDequant>(&s); u && !(u->lo < u->hi)) {
    throw UsageError("uniform dequantization needs lo < hi");
  }
  if (const auto* sf = std::get_if<SoftFlowDequant>(&s); sf && !(sf->c_max > 0.0)) {
    throw UsageError("softflow c_max must be > 0");
  }
  if (const auto* pf = std::get_if<PaddingFlowDequant>(&s)) pf->noise.validate();
}

/// Padding dimensions a strategy adds to the flow.
inline std::size_t padding_dims(const DequantStrategy& s) {
  const auto* pf = std::get_if<PaddingFlowDequant>(&s);
  return pf ? pf->noise.p : 0;
}

/// Extra condition columns a strategy adds to the flow.
inline std::size_t extra_cond_dims(const DequantStrategy& s) {
  return std::holds_alternative<SoftFlowDequant>(s) ? 1 : 0;
}

/// x' = (x + eps_d, eps_p) with caller-provided noise. With a zero data-noise
/// scale pass an empty eps_d: data columns are then copied bit for bit.
inline Tensor paddingflow_augment(const Tensor& x, const Tensor* eps_d, const Tensor* eps_p) {
  const std::size_t n = x.rows(), d = x.cols();
  const std::size_t p = eps_p ? eps_p->cols() : 0;
  if (eps_d && !eps_d->same_shape(x)) throw DimensionError("data noise shape differs from data");
  if (eps_p && eps_p->rows() != n) throw DimensionError("padding noise row count differs from data");
  Tensor out({n, d + p}, Uninitialized{});
  auto m = out.mat();
  m.leftCols(static_cast<Eigen::Index>(d)) = x.mat();
  if (eps_d) m.leftCols(static_cast<Eigen::Index>(d)) += eps_d->mat();
  if (p > 0) m.rightCols(static_cast<Eigen::Index>(p)) = eps_p->mat();
  return out;
}

inline Tensor paddingflow_augment(const Tensor& x, const PaddingNoiseConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!x.all_finite()) throw NumericError("paddingflow_augment input is not finite");
  std::optional<Tensor> eps_d, eps_p;
  if (cfg.a > 0.0) eps_d = rng.normal(x.rows(), x.cols(), cfg.a);
  if (cfg.p > 0) eps_p = rng.normal(x.rows(), cfg.p, cfg.b);
  return paddingflow_augment(x, eps_d ? &*eps_d : nullptr, eps_p ? &*eps_p : nullptr);
}

/// First `d` columns. Used in both directions: on normalized points it
/// recovers the d-dimensional base sample, on generated points the data.
inline Tensor strip_padding(const Tensor& padded, std::size_t d) {
  if (d == 0 || d > padded.cols()) {
    throw DimensionError("cannot keep " + std::to_string(d) + " of " + std::to_string(padded.cols()) + " columns");
  }
  if (d == padded.cols()) return padded;
  return padded.col_slice(0, d);
}

inline Tensor strip_padding_norm(const Tensor& z, std::size_t d) { return strip_padding(z, d); }
inline Tensor strip_padding_gen(const Tensor& x, std::size_t d) { return strip_padding(x, d); }

inline Tensor uniform_augment(const Tensor& x, double lo, double hi, Rng& rng) {
  if (!(lo < hi)) throw UsageError("uniform_augment needs lo < hi");
  Tensor out = x;
  for (auto& v : out.values()) v += rng.uniform(lo, hi);
  return out;
}

struct SoftFlowSample {
  Tensor x;  // noisy data
  Tensor c;  // (n x 1) noise scales, appended to the condition
};

/// x + c * eps with caller-provided c (n x 1) and eps (n x d).
inline SoftFlowSample softflow_apply(const Tensor& x, const Tensor& c, const Tensor& eps) {
  if (c.rows() != x.rows() || c.cols() != 1 || !eps.same_shape(x)) throw DimensionError("softflow noise shapes");
  SoftFlowSample s{x, c};
  s.x.mat() += eps.mat().cwiseProduct(c.mat().replicate(1, static_cast<Eigen::Index>(x.cols())));
  return s;
}

inline SoftFlowSample softflow_augment(const Tensor& x, double c_max, Rng& rng) {
  if (!(c_max > 0.0)) throw UsageError("softflow c_max must be > 0");
  Tensor c = rng.uniform(x.rows(), 1, 0.0, c_max);
  Tensor eps = rng.normal(x.rows(), x.cols());
  return softflow_apply(x, c, eps);
}

/// Condition used when sampling a softflow-trained model: task_cond || 0.
inline Tensor softflow_generate_cond(const DequantStrategy& s, const Tensor* task_cond, std::size_t rows = 1) {
  if (!std::holds_alternative<SoftFlowDequant>(s)) {
    throw UsageError("softflow_generate_cond called for a " + strategy_kind(s) + " model");
  }
  if (!task_cond) return Tensor({rows, 1});
  return hcat(*task_cond, Tensor({task_cond->rows(), 1}));
}

struct TrainingBatch {
  Tensor x;
  std::optional<Tensor> cond;
};

/// Applies fresh dequantization noise to one training batch.
inline TrainingBatch dequantize(const DequantStrategy& s, const Tensor& x, const Tensor* cond, Rng& rng) {
  return std::visit(
      [&](const auto& st) -> TrainingBatch {
        using S = std::decay_t<decltype(st)>;
        std::optional<Tensor> c;
        if (cond) c = *cond;
        if constexpr (std::is_same_v<S, NoDequant>) {
          return {x, c};
        } else if constexpr (std::is_same_v<S, UniformDequant>) {
          return {uniform_augment(x, st.lo, st.hi, rng), c};
        } else if constexpr (std::is_same_v<S, SoftFlowDequant>) {
          SoftFlowSample sf = softflow_augment(x, st.c_max, rng);
          return {std::move(sf.x), c ? hcat(*c, sf.c) : sf.c};
        } else {
          return {paddingflow_augment(x, st.noise, rng), c};
        }
      },
      s);
}

/// Condition to feed a model trained with `s` at generation time.
inline std::optional<Tensor> generation_cond(const DequantStrategy& s, const Tensor* task_cond) {
  if (std::holds_alternative<SoftFlowDequant>(s)) return softflow_generate_cond(s, task_cond);
  if (task_cond) return *task_cond;
  return std::nullopt;
}

struct MeanEstimate {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

/// Monte Carlo estimate of E[X + U], X from `base`, U ~ U[lo, hi).
inline MeanEstimate dequant_bias_estimate(const std::function<double(Rng&)>& base, double lo, double hi,
                                          std::size_t n, Rng& rng) {
  if (n < 10000) throw UsageError("dequant_bias_estimate needs n >= 1e4");
  if (!(lo < hi)) throw UsageError("dequant_bias_estimate needs lo < hi");
  // Welford keeps the variance accurate for large n.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = base(rng) + rng.uniform(lo, hi);
    const double delta = y - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (y - mean);
  }
  const double var = m2 / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n)), n};
}

/// The closed form 1 - e^{-1/2} published for E[X + U], X ~ N(0,1),
/// U ~ U(0,1). Linearity of expectation gives 1/2 instead; the constant is
/// kept for side-by-side display only.
inline double published_uniform_bias_constant() { return 1.0 - std::exp(-0.5); }

}  // namespace pflow
