#pragma once

// Randomized models shared by the unit and acceptance tests.

#include "oracles.hpp"
#include "pflow/autodiff.hpp"
#include "pflow/flow.hpp"
#include "pflow/mlp.hpp"

namespace fixture {

using namespace pflow;

/// Small MLP with random widths (1..4 in, 1..3 hidden layers, 1..3 out) and
/// nonzero biases.
inline Mlp random_mlp(Rng& rng, Activation act) {
  std::vector<std::size_t> widths{1 + rng.index(4)};
  const std::size_t depth = 1 + rng.index(3);
  for (std::size_t i = 0; i < depth; ++i) widths.push_back(1 + rng.index(8));
  widths.push_back(1 + rng.index(3));
  Mlp net(widths, act, rng);
  for (auto& b : net.biases()) {
    for (auto& v : b.value.values()) v = rng.uniform(-0.5, 0.5);
  }
  return net;
}

/// Scalar loss touching square, log, sigmoid and both reductions.
inline Var mixed_loss(Tape& tape, Mlp& net, const Tensor& x) {
  Var y = net.forward(tape, tape.constant(x));
  return mean(square(y)) + scale(sum(log(add_scalar(square(y), 1.0))), 0.1) + sum(sigmoid(y));
}

/// Flow with every coupling and ActNorm parameter randomized.
inline FlowModel random_flow(std::size_t d, std::size_t p, std::size_t c, std::size_t steps, std::uint64_t seed,
                             double scale = 0.4) {
  FlowConfig cfg;
  cfg.data_dim = d;
  cfg.pad_dim = p;
  cfg.cond_dim = c;
  cfg.steps = steps;
  cfg.hidden = 16;
  cfg.seed = seed;
  FlowModel m(cfg);
  Rng rng(seed + 100);
  oracle::randomize_flow(m, rng, scale);
  return m;
}

}  // namespace fixture
