#pragma once

// GLOW-style discrete normalizing flow: ActNorm, fixed permutation and
// (optionally conditional) affine coupling, stacked over the padded space of
// dimension D = data_dim + pad_dim.
//
// Direction convention: "normalize" maps data x' to latent z' (F^-1, used by
// the likelihood), "generate" maps z' to x' (F, used for sampling). Every
// layer reports log|det J| of the direction it was run in as an (n x 1) column.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pflow/autodiff.hpp"
#include "pflow/binary_io.hpp"
#include "pflow/mlp.hpp"
#include "pflow/rng.hpp"

namespace pflow {

enum class PermutationKind { shuffle, reverse, identity };

struct FlowConfig {
  std::size_t data_dim = 2;
  std::size_t pad_dim = 0;
  std::size_t cond_dim = 0;
  std::size_t steps = 8;
  std::size_t hidden = 64;
  std::size_t depth = 2;  // hidden layers per coupling network
  Activation activation = Activation::softplus;
  double clamp = 2.0;
  bool actnorm = true;
  bool actnorm_data_init = true;  // false: ActNorm starts as an initialized identity
  PermutationKind permutation = PermutationKind::shuffle;
  std::uint64_t seed = 0;

  std::size_t dim() const { return data_dim + pad_dim; }
};

/// Per-dimension affine normalization with data-dependent initialization.
class ActNorm {
 public:
  ActNorm() = default;
  explicit ActNorm(std::size_t dim, bool initialized)
      : log_scale_("actnorm.log_scale", Tensor({1, dim})), bias_("actnorm.bias", Tensor({1, dim})),
        initialized_(initialized) {}

  bool initialized() const { return initialized_; }

  /// Sets bias/scale so that `batch` maps to zero mean, unit variance.
  void initialize(const Tensor& batch) {
    const auto m = batch.mat();
    const Eigen::RowVectorXd mean = m.colwise().mean();
    const Eigen::RowVectorXd var = (m.rowwise() - mean).array().square().colwise().mean();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      bias_.value[static_cast<std::size_t>(j)] = mean(j);
      log_scale_.value[static_cast<std::size_t>(j)] = std::log(std::max(std::sqrt(var(j)), 1e-6));
    }
    initialized_ = true;
  }

  // z = (x - bias) * exp(-log_scale)
  std::pair<Var, Var> normalize(Tape& tape, Var x, bool allow_init) {
    if (!initialized_) {
      if (!allow_init) throw StateError("ActNorm used for inference before initialization");
      initialize(x.value());
    }
    Var s = tape.param(log_scale_);
    Var y = (x - tape.param(bias_)) * exp(-s);
    return {y, -sum(s)};
  }

  std::pair<Var, Var> generate(Tape& tape, Var z) {
    if (!initialized_) throw StateError("ActNorm used for inference before initialization");
    Var s = tape.param(log_scale_);
    Var x = z * exp(s) + tape.param(bias_);
    return {x, sum(s)};
  }

  Parameter& log_scale() { return log_scale_; }
  Parameter& bias() { return bias_; }
  const Parameter& log_scale() const { return log_scale_; }
  const Parameter& bias() const { return bias_; }
  void set_initialized(bool v) { initialized_ = v; }

 private:
  Parameter log_scale_;
  Parameter bias_;
  bool initialized_ = false;
};

/// Fixed column permutation; zero log-determinant.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<std::size_t> perm) : perm_(std::move(perm)), inverse_(perm_.size()) {
    std::vector<bool> seen(perm_.size(), false);
    for (std::size_t j = 0; j < perm_.size(); ++j) {
      if (perm_[j] >= perm_.size() || seen[perm_[j]]) throw UsageError("not a permutation");
      seen[perm_[j]] = true;
      inverse_[perm_[j]] = j;
    }
  }

  static Permutation make(std::size_t dim, PermutationKind kind, Rng& rng) {
    std::vector<std::size_t> p(dim);
    for (std::size_t i = 0; i < dim; ++i) p[i] = i;
    if (kind == PermutationKind::reverse) std::reverse(p.begin(), p.end());
    if (kind == PermutationKind::shuffle) {
      for (std::size_t i = dim; i > 1; --i) std::swap(p[i - 1], p[rng.index(i)]);
    }
    return Permutation(std::move(p));
  }

  Var normalize(Var x) const { return permute_cols(x, perm_); }
  Var generate(Var z) const { return permute_cols(z, inverse_); }
  const std::vector<std::size_t>& indices() const { return perm_; }

 private:
  std::vector<std::size_t> perm_;
  std::vector<std::size_t> inverse_;
};

/// Affine coupling. One block of coordinates passes through unchanged and,
/// together with the condition, parameterizes an elementwise affine map of
/// the other block. Log-scales are squashed into (-clamp, clamp).
class CouplingLayer {
 public:
  CouplingLayer() = default;

  /// `split` = k: the identity part is dims [0, k) when `transform_back`,
  /// otherwise dims [k, D).
  CouplingLayer(std::size_t dim, std::size_t split, bool transform_back, std::size_t cond_dim, std::size_t hidden,
                std::size_t depth, Activation act, double clamp, Rng& rng)
      : dim_(dim), split_(split), transform_back_(transform_back), cond_dim_(cond_dim), clamp_(clamp) {
    if (split == 0 || split >= dim) throw UsageError("coupling split index must satisfy 1 <= k < D");
    if (!(clamp > 0.0)) throw UsageError("coupling clamp must be positive");
    std::vector<std::size_t> widths{identity_width() + cond_dim};
    for (std::size_t i = 0; i < depth; ++i) widths.push_back(hidden);
    widths.push_back(transformed_width());
    scale_net_ = Mlp(widths, act, rng, true, "scale");
    shift_net_ = Mlp(widths, act, rng, true, "shift");
  }

  CouplingLayer(std::size_t dim, std::size_t split, bool transform_back, std::size_t cond_dim, double clamp,
                Mlp scale_net, Mlp shift_net)
      : dim_(dim), split_(split), transform_back_(transform_back), cond_dim_(cond_dim), clamp_(clamp),
        scale_net_(std::move(scale_net)), shift_net_(std::move(shift_net)) {
    if (split == 0 || split >= dim) throw UsageError("coupling split index must satisfy 1 <= k < D");
    if (scale_net_.in_width() != identity_width() + cond_dim || shift_net_.in_width() != identity_width() + cond_dim ||
        scale_net_.out_width() != transformed_width() || shift_net_.out_width() != transformed_width()) {
      throw DimensionError("coupling networks do not match the split");
    }
  }

  std::size_t identity_width() const { return transform_back_ ? split_ : dim_ - split_; }
  std::size_t transformed_width() const { return dim_ - identity_width(); }

  std::pair<Var, Var> normalize(Tape& tape, Var x, std::optional<Var> cond) {
    auto [xa, xb] = split(x);
    auto [s, t] = affine_params(tape, xa, cond);
    Var zb = (xb - t) * exp(-s);
    return {join(xa, zb), -row_sum(s)};
  }

  std::pair<Var, Var> generate(Tape& tape, Var z, std::optional<Var> cond) {
    auto [za, zb] = split(z);
    auto [s, t] = affine_params(tape, za, cond);
    Var xb = zb * exp(s) + t;
    return {join(za, xb), row_sum(s)};
  }

  std::size_t split_index() const { return split_; }
  bool transform_back() const { return transform_back_; }
  double clamp() const { return clamp_; }
  Mlp& scale_net() { return scale_net_; }
  Mlp& shift_net() { return shift_net_; }
  const Mlp& scale_net() const { return scale_net_; }
  const Mlp& shift_net() const { return shift_net_; }

 private:
  std::pair<Var, Var> split(Var x) const {
    if (transform_back_) return {slice_cols(x, 0, split_), slice_cols(x, split_, dim_)};
    return {slice_cols(x, split_, dim_), slice_cols(x, 0, split_)};
  }

  Var join(Var identity_part, Var transformed_part) const {
    return transform_back_ ? concat_cols({identity_part, transformed_part})
                           : concat_cols({transformed_part, identity_part});
  }

  std::pair<Var, Var> affine_params(Tape& tape, Var identity_part, std::optional<Var> cond) {
    Var in = identity_part;
    if (cond_dim_ > 0) {
      if (!cond) throw UsageError("conditional coupling layer needs a condition");
      in = concat_cols({identity_part, *cond});
    }
    Var s = soft_clamp(scale_net_.forward(tape, in), clamp_);
    Var t = shift_net_.forward(tape, in);
    return {s, t};
  }

  std::size_t dim_ = 0;
  std::size_t split_ = 0;
  bool transform_back_ = true;
  std::size_t cond_dim_ = 0;
  double clamp_ = 2.0;
  Mlp scale_net_;
  Mlp shift_net_;
};

using FlowLayer = std::variant<ActNorm, Permutation, CouplingLayer>;

struct InverseResult {
  Tensor z;
  std::vector<double> logdet;
};

struct ForwardResult {
  Tensor x;
  std::vector<double> logdet;
};

inline double standard_normal_log_density(std::span<const double> z) {
  double sq = 0.0;
  for (double v : z) sq += v * v;
  return -0.5 * sq - 0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi);
}

class FlowModel {
 public:
  FlowModel() = default;

  explicit FlowModel(const FlowConfig& cfg) : data_dim_(cfg.data_dim), pad_dim_(cfg.pad_dim), cond_dim_(cfg.cond_dim) {
    const std::size_t d = dim();
    if (d == 0) throw UsageError("flow dimension must be positive");
    Rng rng(cfg.seed);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      if (cfg.actnorm) layers_.emplace_back(ActNorm(d, !cfg.actnorm_data_init));
      layers_.emplace_back(Permutation::make(d, cfg.permutation, rng));
      if (d >= 2) {
        const std::size_t k = (d + 1) / 2;
        layers_.emplace_back(CouplingLayer(d, k, step % 2 == 0, cfg.cond_dim, cfg.hidden, cfg.depth, cfg.activation,
                                           cfg.clamp, rng));
      }
    }
  }

  FlowModel(std::size_t data_dim, std::size_t pad_dim, std::size_t cond_dim, std::vector<FlowLayer> layers)
      : data_dim_(data_dim), pad_dim_(pad_dim), cond_dim_(cond_dim), layers_(std::move(layers)) {}

  std::size_t data_dim() const { return data_dim_; }
  std::size_t pad_dim() const { return pad_dim_; }
  std::size_t cond_dim() const { return cond_dim_; }
  std::size_t dim() const { return data_dim_ + pad_dim_; }
  std::vector<FlowLayer>& layers() { return layers_; }
  const std::vector<FlowLayer>& layers() const { return layers_; }

  bool initialized() const {
    for (const auto& l : layers_) {
      if (const auto* a = std::get_if<ActNorm>(&l); a && !a->initialized()) return false;
    }
    return true;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) {
      if (auto* a = std::get_if<ActNorm>(&l)) {
        out.push_back(&a->log_scale());
        out.push_back(&a->bias());
      } else if (auto* c = std::get_if<CouplingLayer>(&l)) {
        c->scale_net().collect(out);
        c->shift_net().collect(out);
      }
    }
    return out;
  }

  /// x' -> z' on a tape. Returns z' and the per-row log|det J_{F^-1}|.
  std::pair<Var, Var> normalize(Tape& tape, Var x, std::optional<Var> cond, bool allow_init = false) {
    check_input(x.value(), cond ? &cond->value() : nullptr);
    if (cond) cond = broadcast_cond(tape, *cond, x.rows());
    Var logdet = tape.constant(Tensor({x.rows(), 1}));
    Var h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        auto [y, ld] = std::visit(
            [&](auto& layer) -> std::pair<Var, Var> {
              using L = std::decay_t<decltype(layer)>;
              if constexpr (std::is_same_v<L, ActNorm>) {
                return layer.normalize(tape, h, allow_init);
              } else if constexpr (std::is_same_v<L, Permutation>) {
                return {layer.normalize(h), Var{}};
              } else {
                return layer.normalize(tape, h, cond);
              }
            },
            layers_[i]);
        h = y;
        if (ld.valid()) logdet = logdet + ld;
      } catch (const NumericError& e) {
        throw NumericError("flow layer " + std::to_string(i) + ": " + e.what());
      }
    }
    return {h, logdet};
  }

  /// z' -> x' on a tape. Returns x' and the per-row log|det J_F|.
  std::pair<Var, Var> generate(Tape& tape, Var z, std::optional<Var> cond) {
    check_input(z.value(), cond ? &cond->value() : nullptr);
    if (cond) cond = broadcast_cond(tape, *cond, z.rows());
    Var logdet = tape.constant(Tensor({z.rows(), 1}));
    Var h = z;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      try {
        auto [y, ld] = std::visit(
            [&](auto& layer) -> std::pair<Var, Var> {
              using L = std::decay_t<decltype(layer)>;
              if constexpr (std::is_same_v<L, ActNorm>) {
                return layer.generate(tape, h);
              } else if constexpr (std::is_same_v<L, Permutation>) {
                return {layer.generate(h), Var{}};
              } else {
                return layer.generate(tape, h, cond);
              }
            },
            layers_[i]);
        h = y;
        if (ld.valid()) logdet = logdet + ld;
      } catch (const NumericError& e) {
        throw NumericError("flow layer " + std::to_string(i) + ": " + e.what());
      }
    }
    return {h, logdet};
  }

  /// F_theta(z) for a batch of latent rows (no gradients).
  Tensor forward_gen(const Tensor& z, const Tensor* cond = nullptr) { return forward_gen_logdet(z, cond).x; }

  ForwardResult forward_gen_logdet(const Tensor& z, const Tensor* cond = nullptr) {
    ForwardResult out{Tensor({z.rows(), dim()}), std::vector<double>(z.rows())};
    chunked(z, cond, [&](std::size_t begin, const Tensor& zc, const Tensor* cc) {
      Tape tape;
      std::optional<Var> cv;
      if (cc) cv = tape.constant(*cc);
      auto [x, ld] = generate(tape, tape.constant(zc), cv);
      out.x.mat().middleRows(static_cast<Eigen::Index>(begin), x.value().mat().rows()) = x.value().mat();
      for (std::size_t i = 0; i < zc.rows(); ++i) out.logdet[begin + i] = ld.value()[i];
    });
    return out;
  }

  /// F_theta^-1(x') together with log|det J_{F^-1}(x')| per row.
  InverseResult inverse_norm(const Tensor& x, const Tensor* cond = nullptr) {
    InverseResult out{Tensor({x.rows(), dim()}), std::vector<double>(x.rows())};
    chunked(x, cond, [&](std::size_t begin, const Tensor& xc, const Tensor* cc) {
      Tape tape;
      std::optional<Var> cv;
      if (cc) cv = tape.constant(*cc);
      auto [z, ld] = normalize(tape, tape.constant(xc), cv, false);
      out.z.mat().middleRows(static_cast<Eigen::Index>(begin), z.value().mat().rows()) = z.value().mat();
      for (std::size_t i = 0; i < xc.rows(); ++i) out.logdet[begin + i] = ld.value()[i];
    });
    return out;
  }

  /// log p(x') = log N(F^-1(x'); 0, I_D) + log|det J_{F^-1}(x')| per row.
  std::vector<double> log_prob(const Tensor& x, const Tensor* cond = nullptr) {
    InverseResult r = inverse_norm(x, cond);
    std::vector<double> out(x.rows());
    const std::size_t d = dim();
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = standard_normal_log_density(std::span<const double>(r.z.data() + i * d, d)) + r.logdet[i];
    }
    return out;
  }

  /// Differentiable log-density per row on a tape (n x 1).
  Var log_prob(Tape& tape, Var x, std::optional<Var> cond, bool allow_init = false) {
    auto [z, logdet] = normalize(tape, x, cond, allow_init);
    const double c = -0.5 * static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi);
    return add_scalar(scale(row_sum(square(z)), -0.5), c) + logdet;
  }

  /// Negative mean log-likelihood of the batch. Initializes ActNorm layers
  /// from this batch if they have not been initialized yet.
  Var nll_loss(Tape& tape, const Tensor& batch, const Tensor* cond = nullptr) {
    if (batch.size() == 0 || batch.rows() == 0) throw UsageError("nll_loss needs a nonempty batch");
    std::optional<Var> cv;
    if (cond) cv = tape.constant(*cond);
    return -mean(log_prob(tape, tape.constant(batch), cv, true));
  }

  /// n generated points: forward_gen of independent standard-normal draws.
  Tensor sample(std::size_t n, const Tensor* cond, Rng& rng) {
    if (n == 0) throw UsageError("sample count must be at least 1");
    Tensor z = rng.normal(n, dim());
    return forward_gen(z, cond);
  }

  void save(std::ostream& os) const;
  static FlowModel load(std::istream& is);

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    save(os);
    if (!os) throw IoError("failed writing " + path);
  }
  static FlowModel load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return load(is);
  }

  static constexpr std::size_t kChunkRows = 4096;

 private:
  void check_input(const Tensor& x, const Tensor* cond) const {
    if (x.cols() != dim()) {
      throw DimensionError("flow input has " + std::to_string(x.cols()) + " columns, model dimension is " +
                           std::to_string(dim()));
    }
    if (!x.all_finite()) throw NumericError("flow input is not finite");
    if ((cond != nullptr) != (cond_dim_ > 0)) {
      throw UsageError(cond_dim_ > 0 ? "conditional flow needs a condition" : "unconditional flow got a condition");
    }
    if (cond) {
      if (cond->cols() != cond_dim_) throw DimensionError("condition width mismatch");
      if (cond->rows() != 1 && cond->rows() != x.rows()) throw DimensionError("condition row count mismatch");
      if (!cond->all_finite()) throw NumericError("condition is not finite");
    }
  }

  static Var broadcast_cond(Tape& tape, Var cond, std::size_t rows) {
    if (cond.rows() == rows) return cond;
    return cond + tape.constant(Tensor({rows, cond.cols()}));
  }

  template <typename Fn>
  void chunked(const Tensor& x, const Tensor* cond, Fn fn) {
    check_input(x, cond);
    const std::size_t n = x.rows();
    for (std::size_t begin = 0; begin < n; begin += kChunkRows) {
      const std::size_t end = std::min(n, begin + kChunkRows);
      Tensor xc = x.row_slice(begin, end);
      if (cond && cond->rows() == n && n > 1) {
        Tensor cc = cond->row_slice(begin, end);
        fn(begin, xc, &cc);
      } else {
        fn(begin, xc, cond);
      }
    }
  }

  std::size_t data_dim_ = 0;
  std::size_t pad_dim_ = 0;
  std::size_t cond_dim_ = 0;
  std::vector<FlowLayer> layers_;
};

namespace detail {
inline constexpr char kFlowMagic[9] = "PFLOWFLW";
inline constexpr std::uint64_t kFlowVersion = 1;
}  // namespace detail

inline void FlowModel::save(std::ostream& os) const {
  using namespace bin;
  write_magic(os, detail::kFlowMagic, detail::kFlowVersion);
  write_u64(os, data_dim_);
  write_u64(os, pad_dim_);
  write_u64(os, cond_dim_);
  write_u64(os, layers_.size());
  for (const auto& l : layers_) {
    if (const auto* a = std::get_if<ActNorm>(&l)) {
      write_u8(os, 0);
      write_u8(os, a->initialized() ? 1 : 0);
      write_tensor(os, a->log_scale().value);
      write_tensor(os, a->bias().value);
    } else if (const auto* p = std::get_if<Permutation>(&l)) {
      write_u8(os, 1);
      write_u64(os, p->indices().size());
      for (auto i : p->indices()) write_u64(os, i);
    } else {
      const auto& c = std::get<CouplingLayer>(l);
      write_u8(os, 2);
      write_u64(os, c.split_index());
      write_u8(os, c.transform_back() ? 1 : 0);
      write_f64(os, c.clamp());
      write_mlp(os, c.scale_net());
      write_mlp(os, c.shift_net());
    }
  }
}

inline FlowModel FlowModel::load(std::istream& is) {
  using namespace bin;
  expect_magic(is, detail::kFlowMagic, detail::kFlowVersion);
  const auto d = read_u64(is);
  const auto p = read_u64(is);
  const auto c = read_u64(is);
  const auto n = read_u64(is);
  if (d + p == 0 || d + p > 100000 || c > 100000 || n > 100000) throw FormatError("implausible flow header");
  const std::size_t dim = d + p;
  std::vector<FlowLayer> layers;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto tag = read_u8(is);
    if (tag == 0) {
      const bool init = read_u8(is) != 0;
      ActNorm a(dim, init);
      a.log_scale().value = read_tensor(is);
      a.bias().value = read_tensor(is);
      if (a.log_scale().value.shape() != Shape{1, dim} || a.bias().value.shape() != Shape{1, dim}) {
        throw FormatError("ActNorm parameter shape mismatch");
      }
      a.log_scale().zero_grad();
      a.bias().zero_grad();
      layers.emplace_back(std::move(a));
    } else if (tag == 1) {
      const auto m = read_u64(is);
      if (m != dim) throw FormatError("permutation length mismatch");
      std::vector<std::size_t> perm(m);
      for (auto& v : perm) v = read_u64(is);
      try {
        layers.emplace_back(Permutation(std::move(perm)));
      } catch (const UsageError& e) {
        throw FormatError(e.what());
      }
    } else if (tag == 2) {
      const auto k = read_u64(is);
      const bool back = read_u8(is) != 0;
      const double clamp = read_f64(is);
      Mlp s = read_mlp(is, "scale");
      Mlp t = read_mlp(is, "shift");
      try {
        layers.emplace_back(CouplingLayer(dim, k, back, c, clamp, std::move(s), std::move(t)));
      } catch (const Error& e) {
        throw FormatError(std::string("bad coupling layer: ") + e.what());
      }
    } else {
      throw FormatError("unknown flow layer tag " + std::to_string(tag));
    }
  }
  return FlowModel(d, p, c, std::move(layers));
}

}  // namespace pflow
