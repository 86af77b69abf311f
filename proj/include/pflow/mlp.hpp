#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pflow/autodiff.hpp"
#include "pflow/rng.hpp"

namespace pflow {

enum class Activation { softplus, tanh, relu };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::softplus: return "softplus";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "softplus") return Activation::softplus;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw UsageError("unknown activation '" + s + "'");
}

inline Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::softplus: return softplus(x);
    case Activation::tanh: return tanh(x);
    case Activation::relu: return relu(x);
  }
  throw UsageError("bad activation");
}

/// Fully connected network. Hidden layers apply the activation; the output
/// layer is linear.
class Mlp {
 public:
  Mlp() = default;

  /// Glorot-uniform weights, zero biases. With `zero_last` the output layer
  /// starts at exactly zero.
  Mlp(std::vector<std::size_t> widths, Activation act, Rng& rng, bool zero_last = false, std::string name = "mlp")
      : widths_(std::move(widths)), act_(act) {
    if (widths_.size() < 2) throw UsageError("mlp needs at least input and output widths");
    for (auto w : widths_) {
      if (w == 0) throw UsageError("mlp widths must be positive");
    }
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
      const std::size_t fan_in = widths_[i], fan_out = widths_[i + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      Tensor w({fan_in, fan_out});
      const bool last = i + 2 == widths_.size();
      if (!(last && zero_last)) {
        for (auto& v : w.values()) v = rng.uniform(-limit, limit);
      }
      weights_.emplace_back(name + ".w" + std::to_string(i), std::move(w));
      biases_.emplace_back(name + ".b" + std::to_string(i), Tensor({1, fan_out}));
    }
  }

  /// Builds a network from explicit parameter tensors (checkpoint loading, tests).
  Mlp(std::vector<std::size_t> widths, Activation act, std::vector<Tensor> weights, std::vector<Tensor> biases,
      std::string name = "mlp")
      : widths_(std::move(widths)), act_(act) {
    if (widths_.size() < 2 || weights.size() + 1 != widths_.size() || biases.size() != weights.size()) {
      throw DimensionError("mlp parameter count does not match widths");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i].shape() != Shape{widths_[i], widths_[i + 1]} || biases[i].shape() != Shape{1, widths_[i + 1]}) {
        throw DimensionError("mlp layer " + std::to_string(i) + " has inconsistent parameter shapes");
      }
      weights_.emplace_back(name + ".w" + std::to_string(i), std::move(weights[i]));
      biases_.emplace_back(name + ".b" + std::to_string(i), std::move(biases[i]));
    }
  }

  Var forward(Tape& tape, Var x) {
    if (x.cols() != widths_.front()) {
      throw DimensionError("mlp input width " + std::to_string(x.cols()) + ", expected " +
                           std::to_string(widths_.front()));
    }
    if (!x.value().all_finite()) throw NumericError("mlp input is not finite");
    Var h = x;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      h = affine(h, tape.param(weights_[i]), tape.param(biases_[i]));
      if (i + 1 < weights_.size()) h = activate(h, act_);
    }
    return h;
  }

  /// Convenience forward pass on a scratch tape.
  Tensor operator()(const Tensor& x) {
    Tape tape;
    return forward(tape, tape.constant(x)).value();
  }

  const std::vector<std::size_t>& widths() const { return widths_; }
  Activation activation() const { return act_; }
  std::size_t in_width() const { return widths_.front(); }
  std::size_t out_width() const { return widths_.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) n += widths_[i] * widths_[i + 1] + widths_[i + 1];
    return n;
  }

  std::vector<Parameter>& weights() { return weights_; }
  std::vector<Parameter>& biases() { return biases_; }
  const std::vector<Parameter>& weights() const { return weights_; }
  const std::vector<Parameter>& biases() const { return biases_; }

  void collect(std::vector<Parameter*>& out) {
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      out.push_back(&weights_[i]);
      out.push_back(&biases_[i]);
    }
  }

 private:
  std::vector<std::size_t> widths_;
  Activation act_ = Activation::softplus;
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;
};

}  // namespace pflow
