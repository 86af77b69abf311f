#pragma once

// VAE with a flow prior over a padded latent space. The encoder emits
// (mu, log sigma) for d latent dims; sampling appends p padding dims of
// N(0, b^2) noise and optionally widens the data dims by a. The decoder reads
// only the first d latent dims.
//
//   direct (one-shot noise):  sigma' = sqrt(sigma^2 + a^2)
//   fused reparameterization: sigma' = sigma + a
//
// The latent term of the loss is log p_flow(x') + H(N(mu, sigma'^2)) over the
// data dims only; the padding dims would add a parameter-free constant.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "pflow/adam.hpp"
#include "pflow/dequant.hpp"
#include "pflow/flow.hpp"
#include "pflow/mlp.hpp"

namespace pflow {

struct LatentParams {
  Tensor mu;     // n x d
  Tensor sigma;  // n x d, strictly positive
};

struct PaddedLatentParams {
  Tensor mu;     // n x (d+p)
  Tensor sigma;  // n x (d+p)
};

enum class Reparam { fused, direct };

inline std::string to_string(Reparam r) { return r == Reparam::fused ? "fused" : "direct"; }
inline Reparam reparam_from_string(const std::string& s) {
  if (s == "fused") return Reparam::fused;
  if (s == "direct") return Reparam::direct;
  throw UsageError("unknown reparameterization '" + s + "' (expected fused or direct)");
}

/// Data-dim entropy only, or the full padded Gaussian (differs by a constant).
enum class EntropyMode { data_dims, padded };

inline double gaussian_entropy(std::span<const double> sigma) {
  double h = 0.0;
  for (double s : sigma) {
    if (!(s > 0.0)) throw DomainError("gaussian_entropy needs sigma > 0");
    h += std::log(s);
  }
  return h + 0.5 * static_cast<double>(sigma.size()) * (1.0 + std::log(2.0 * std::numbers::pi));
}

inline Tensor reparameterize(const LatentParams& lp, const Tensor& eps) {
  if (!eps.same_shape(lp.mu) || !lp.sigma.same_shape(lp.mu)) throw DimensionError("reparameterize shape mismatch");
  Tensor x = lp.mu;
  x.mat() += lp.sigma.mat().cwiseProduct(eps.mat());
  return x;
}

inline Tensor reparameterize(const LatentParams& lp, Rng& rng) {
  return reparameterize(lp, rng.normal(lp.mu.rows(), lp.mu.cols()));
}

namespace detail {
inline PaddedLatentParams pad_params(const LatentParams& lp, const PaddingNoiseConfig& cfg, Reparam mode) {
  cfg.validate();
  const std::size_t n = lp.mu.rows(), d = lp.mu.cols(), p = cfg.p;
  PaddedLatentParams out{Tensor({n, d + p}), Tensor({n, d + p})};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double s = lp.sigma(i, j);
      out.mu(i, j) = lp.mu(i, j);
      out.sigma(i, j) = mode == Reparam::fused ? s + cfg.a : std::sqrt(s * s + cfg.a * cfg.a);
    }
    for (std::size_t j = d; j < d + p; ++j) out.sigma(i, j) = cfg.b;
  }
  return out;
}
}  // namespace detail

/// Padded parameters of x + e_d with independent noise: sigma' = sqrt(sigma^2 + a^2).
inline PaddedLatentParams pad_params_direct(const LatentParams& lp, const PaddingNoiseConfig& cfg) {
  return detail::pad_params(lp, cfg, Reparam::direct);
}

/// Padded parameters of the fused pass: sigma' = sigma + a.
inline PaddedLatentParams pad_params_fused(const LatentParams& lp, const PaddingNoiseConfig& cfg) {
  return detail::pad_params(lp, cfg, Reparam::fused);
}

inline Tensor sample_padded(const PaddedLatentParams& pp, const Tensor& eps) {
  return reparameterize(LatentParams{pp.mu, pp.sigma}, eps);
}

inline Tensor sample_padded(const PaddedLatentParams& pp, Rng& rng) {
  return sample_padded(pp, rng.normal(pp.mu.rows(), pp.mu.cols()));
}

/// x' = mu' + sigma' * eps' with sigma' = (sigma + a, b).
inline Tensor pf_reparameterize(const LatentParams& lp, const PaddingNoiseConfig& cfg, const Tensor& eps) {
  return sample_padded(pad_params_fused(lp, cfg), eps);
}

inline Tensor pf_reparameterize(const LatentParams& lp, const PaddingNoiseConfig& cfg, Rng& rng) {
  return sample_padded(pad_params_fused(lp, cfg), rng);
}

// ---------------------------------------------------------------------------

struct VaeConfig {
  std::size_t image_dim = 64;
  std::size_t latent_dim = 2;
  std::size_t hidden = 64;
  std::size_t depth = 2;  // hidden layers in encoder and decoder
  PaddingNoiseConfig noise{2, 0.0, 2.0};
  Reparam reparam = Reparam::fused;
  std::size_t prior_steps = 4;
  std::size_t prior_hidden = 32;
  std::uint64_t seed = 0;
};

class VaeModel {
 public:
  static constexpr double kLogitClamp = 15.0;

  VaeModel() = default;
  explicit VaeModel(const VaeConfig& cfg)
      : latent_dim_(cfg.latent_dim), noise_(cfg.noise), reparam_(cfg.reparam) {
    cfg.noise.validate();
    if (cfg.latent_dim == 0 || cfg.image_dim == 0) throw UsageError("vae dimensions must be positive");
    Rng rng(cfg.seed);
    std::vector<std::size_t> enc{cfg.image_dim}, dec{cfg.latent_dim};
    for (std::size_t i = 0; i < cfg.depth; ++i) {
      enc.push_back(cfg.hidden);
      dec.push_back(cfg.hidden);
    }
    enc.push_back(2 * cfg.latent_dim);
    dec.push_back(cfg.image_dim);
    // A zero encoder head starts every image at mu = 0, sigma = 1.
    encoder_ = Mlp(enc, Activation::softplus, rng, true, "encoder");
    decoder_ = Mlp(dec, Activation::softplus, rng, false, "decoder");
    FlowConfig fc;
    fc.data_dim = cfg.latent_dim;
    fc.pad_dim = cfg.noise.p;
    fc.steps = cfg.prior_steps;
    fc.hidden = cfg.prior_hidden;
    fc.seed = rng.fork(1).seed();
    prior_ = FlowModel(fc);
  }

  VaeModel(Mlp encoder, Mlp decoder, FlowModel prior, PaddingNoiseConfig noise, Reparam reparam)
      : latent_dim_(decoder.in_width()), noise_(noise), reparam_(reparam), encoder_(std::move(encoder)),
        decoder_(std::move(decoder)), prior_(std::move(prior)) {
    if (encoder_.out_width() != 2 * latent_dim_ || prior_.data_dim() != latent_dim_ || prior_.pad_dim() != noise_.p) {
      throw DimensionError("vae component widths disagree");
    }
  }

  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t image_dim() const { return encoder_.in_width(); }
  const PaddingNoiseConfig& noise() const { return noise_; }
  Reparam reparam() const { return reparam_; }
  Mlp& encoder() { return encoder_; }
  Mlp& decoder() { return decoder_; }
  FlowModel& prior() { return prior_; }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }
  const FlowModel& prior() const { return prior_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    encoder_.collect(out);
    decoder_.collect(out);
    for (auto* p : prior_.parameters()) out.push_back(p);
    return out;
  }

  /// (mu, log sigma) on a tape.
  std::pair<Var, Var> encode(Tape& tape, const Tensor& images) {
    check_images(images);
    Var h = encoder_.forward(tape, tape.constant(images));
    return {slice_cols(h, 0, latent_dim_), slice_cols(h, latent_dim_, 2 * latent_dim_)};
  }

  LatentParams encode(const Tensor& images) {
    Tape tape;
    auto [mu, log_sigma] = encode(tape, images);
    LatentParams lp{mu.value(), log_sigma.value()};
    for (auto& v : lp.sigma.values()) v = std::exp(v);
    if (!lp.mu.all_finite() || !lp.sigma.all_finite()) throw NumericError("encoder output is not finite");
    return lp;
  }

  /// Pixel logits from a (possibly padded) latent batch; padding is ignored.
  Var decode_logits(Tape& tape, Var latent) {
    if (latent.cols() < latent_dim_) throw DimensionError("latent batch narrower than the latent dimension");
    Var z = latent.cols() == latent_dim_ ? latent : slice_cols(latent, 0, latent_dim_);
    return clamp(decoder_.forward(tape, z), -kLogitClamp, kLogitClamp);
  }

  Tensor decode_probs(const Tensor& latent) {
    Tape tape;
    Tensor out = decode_logits(tape, tape.constant(latent)).value();
    for (auto& v : out.values()) v = sigmoid_scalar(v);
    return out;
  }

  struct LossTerms {
    Var loss;           // scalar negative ELBO
    Var reconstruction; // scalar mean cross-entropy
    Var latent;         // scalar mean of log p(x') + H
  };

  /// Negative ELBO with caller-provided noise (eps_d: n x d, eps_p: n x p).
  LossTerms loss_terms(Tape& tape, const Tensor& images, const Tensor& eps_d, const Tensor* eps_p,
                       EntropyMode mode = EntropyMode::data_dims, bool allow_init = true) {
    auto [mu, log_sigma] = encode(tape, images);
    return loss_from_params(tape, images, mu, log_sigma, eps_d, eps_p, mode, allow_init);
  }

  /// Same as loss_terms but starting from given (mu, log sigma) nodes.
  LossTerms loss_from_params(Tape& tape, const Tensor& images, Var mu, Var log_sigma, const Tensor& eps_d,
                             const Tensor* eps_p, EntropyMode mode = EntropyMode::data_dims, bool allow_init = true) {
    const std::size_t n = images.rows(), d = latent_dim_, p = noise_.p;
    if (eps_d.shape() != Shape{n, d}) throw DimensionError("data noise must be n x d");
    if ((p > 0) != (eps_p != nullptr) || (eps_p && eps_p->shape() != Shape{n, p})) {
      throw DimensionError("padding noise must be n x p");
    }
    Var sigma = exp(log_sigma);
    Var sigma_eff = sigma;
    if (noise_.a > 0.0) {
      sigma_eff = reparam_ == Reparam::fused ? add_scalar(sigma, noise_.a)
                                             : sqrt(add_scalar(square(sigma), noise_.a * noise_.a));
    }
    Var x_data = mu + sigma_eff * tape.constant(eps_d);
    Var x_pad = x_data;
    if (p > 0) {
      Tensor pad = *eps_p;
      pad.mat() *= noise_.b;
      x_pad = concat_cols({x_data, tape.constant(std::move(pad))});
    }
    Var log_prior = prior_.log_prob(tape, x_pad, std::nullopt, allow_init);
    const double c_data = 0.5 * static_cast<double>(d) * (1.0 + std::log(2.0 * std::numbers::pi));
    Var entropy = add_scalar(row_sum(log(sigma_eff)), c_data);
    if (mode == EntropyMode::padded && p > 0) {
      const double c_pad = static_cast<double>(p) * (std::log(noise_.b) + 0.5 * (1.0 + std::log(2.0 * std::numbers::pi)));
      entropy = add_scalar(entropy, c_pad);
    }
    Var latent = mean(log_prior + entropy);
    Var recon = scale(sum(bce_with_logits(decode_logits(tape, x_data), images)), 1.0 / static_cast<double>(n));
    return {recon - latent, recon, latent};
  }

  LossTerms loss_terms(Tape& tape, const Tensor& images, Rng& rng) {
    Tensor eps_d = rng.normal(images.rows(), latent_dim_);
    std::optional<Tensor> eps_p;
    if (noise_.p > 0) eps_p = rng.normal(images.rows(), noise_.p);
    return loss_terms(tape, images, eps_d, eps_p ? &*eps_p : nullptr);
  }

  /// Images generated from the prior: decode(strip(F(z))).
  Tensor sample_images(std::size_t n, Rng& rng) {
    Tensor latent = strip_padding_gen(prior_.sample(n, nullptr, rng), latent_dim_);
    return decode_probs(latent);
  }

  void save(std::ostream& os) const;
  static VaeModel load(std::istream& is);
  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    save(os);
    if (!os) throw IoError("failed writing " + path);
  }
  static VaeModel load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return load(is);
  }

 private:
  void check_images(const Tensor& images) const {
    if (images.cols() != encoder_.in_width()) throw DimensionError("image width differs from encoder input");
    for (double v : images.values()) {
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("pixel values must lie in [0, 1]");
    }
  }

  std::size_t latent_dim_ = 0;
  PaddingNoiseConfig noise_;
  Reparam reparam_ = Reparam::fused;
  Mlp encoder_, decoder_;
  FlowModel prior_;
};

/// Negative ELBO for a batch with fresh noise.
inline Var elbo_loss(VaeModel& model, Tape& tape, const Tensor& images, Rng& rng) {
  return model.loss_terms(tape, images, rng).loss;
}

namespace detail {
inline constexpr char kVaeMagic[9] = "PFLOWVAE";
inline constexpr std::uint64_t kVaeVersion = 1;
}  // namespace detail

inline void VaeModel::save(std::ostream& os) const {
  bin::write_magic(os, detail::kVaeMagic, detail::kVaeVersion);
  bin::write_u64(os, latent_dim_);
  bin::write_u64(os, noise_.p);
  bin::write_f64(os, noise_.a);
  bin::write_f64(os, noise_.b);
  bin::write_u8(os, reparam_ == Reparam::fused ? 0 : 1);
  bin::write_mlp(os, encoder_);
  bin::write_mlp(os, decoder_);
  prior_.save(os);
}

inline VaeModel VaeModel::load(std::istream& is) {
  bin::expect_magic(is, detail::kVaeMagic, detail::kVaeVersion);
  bin::read_u64(is);  // latent dim, re-derived from the decoder
  PaddingNoiseConfig noise;
  noise.p = bin::read_u64(is);
  noise.a = bin::read_f64(is);
  noise.b = bin::read_f64(is);
  const auto mode = bin::read_u8(is);
  if (mode > 1) throw FormatError("unknown reparameterization tag in checkpoint");
  Mlp enc = bin::read_mlp(is, "encoder");
  Mlp dec = bin::read_mlp(is, "decoder");
  FlowModel prior = FlowModel::load(is);
  return VaeModel(std::move(enc), std::move(dec), std::move(prior), noise, mode == 0 ? Reparam::fused : Reparam::direct);
}

// ---------------------------------------------------------------------------

/// 8x8 binary images from four shape classes:
///   0 horizontal bar (2 rows), 1 vertical bar (2 cols),
///   2 cross (one row and one column), 3 filled 3x3 square.
struct ToyImages {
  Tensor images;  // n x 64
  std::vector<int> labels;
};

inline constexpr std::size_t kToyImageSide = 8;
inline constexpr int kToyImageClasses = 4;

inline ToyImages gen_toy_images(std::size_t n, Rng& rng) {
  if (n == 0) throw UsageError("gen_toy_images needs n >= 1");
  constexpr std::size_t S = kToyImageSide;
  ToyImages out{Tensor({n, S * S}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(rng.index(kToyImageClasses));
    out.labels[i] = cls;
    auto set = [&](std::size_t r, std::size_t c) { out.images(i, r * S + c) = 1.0; };
    switch (cls) {
      case 0: {
        const std::size_t r = rng.index(S - 1);
        for (std::size_t c = 0; c < S; ++c) set(r, c), set(r + 1, c);
        break;
      }
      case 1: {
        const std::size_t c = rng.index(S - 1);
        for (std::size_t r = 0; r < S; ++r) set(r, c), set(r, c + 1);
        break;
      }
      case 2: {
        const std::size_t r = 2 + rng.index(S - 4), c = 2 + rng.index(S - 4);
        for (std::size_t k = 0; k < S; ++k) set(r, k), set(k, c);
        break;
      }
      default: {
        const std::size_t r = rng.index(S - 2), c = rng.index(S - 2);
        for (std::size_t dr = 0; dr < 3; ++dr) {
          for (std::size_t dc = 0; dc < 3; ++dc) set(r + dr, c + dc);
        }
      }
    }
  }
  return out;
}

}  // namespace pflow
