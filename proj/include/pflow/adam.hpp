#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "pflow/autodiff.hpp"

namespace pflow {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update over `params` using their current grads.
/// Moment buffers are created on the first call and must keep matching the
/// parameter shapes afterwards.
inline void adam_step(AdamState& s, std::span<Parameter* const> params) {
  if (s.step < 0) throw UsageError("adam step count must be non-negative");
  if (s.m.empty() && s.step == 0) {
    for (const Parameter* p : params) {
      s.m.emplace_back(p->value.shape());
      s.v.emplace_back(p->value.shape());
    }
  }
  if (s.m.size() != params.size()) throw DimensionError("adam state tracks a different number of parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (!s.m[i].same_shape(p.value) || !p.grad.same_shape(p.value)) {
      throw DimensionError("adam: shape mismatch for parameter '" + p.name + "'");
    }
  }
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    auto m = s.m[i].mat().array();
    auto v = s.v[i].mat().array();
    auto g = p.grad.mat().array();
    m = s.beta1 * m + (1.0 - s.beta1) * g;
    v = s.beta2 * v + (1.0 - s.beta2) * g.square();
    p.value.mat().array() -= s.lr * (m / bc1) / ((v / bc2).sqrt() + s.eps);
  }
}

inline void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace pflow
