// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            all criteria; exit status reflects the property
//                         criteria (1-5, 8, 9) only
//   acceptance --strict   any FAIL gives a nonzero exit status
//   acceptance 1 4 9      only the listed criteria
//
// Criteria 6 and 7 train the default toy and IK configurations for three
// seeds and compare strategies; their outcome is reported, not enforced,
// unless --strict is given. Run outputs go to ./acceptance_out.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pflow/experiments.hpp"

using namespace pflow;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const fs::path& out_root() {
  static const fs::path p = fs::current_path() / "acceptance_out";
  return p;
}

RunReport run(const std::string& tag, ConfigMap overrides, bool write = true) {
  const fs::path dir = out_root() / tag;
  fs::remove_all(dir);
  overrides["out"] = dir.string();
  overrides["threads"] = "1";
  return run_experiment(ExperimentConfig::resolve({}, overrides), write);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

oracle::Moments column_moments(const Tensor& x, std::size_t j) {
  oracle::Moments m;
  for (std::size_t i = 0; i < x.rows(); ++i) m.add(x(i, j));
  return m;
}

constexpr std::size_t kMillion = 1000000;
const std::vector<std::uint64_t> kSeeds{0, 1, 2};

// ---------------------------------------------------------------------------

Outcome autodiff_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(5000 + trial);
    Mlp net = fixture::random_mlp(rng, trial % 2 ? Activation::tanh : Activation::softplus);
    const Tensor x = rng.normal(3, net.in_width());
    std::vector<Parameter*> ps;
    net.collect(ps);
    zero_grads(ps);
    {
      Tape t;
      t.backward(fixture::mixed_loss(t, net, x));
    }
    worst = std::max(worst, oracle::worst_fd_error(ps, [&] {
                       Tape t;
                       return fixture::mixed_loss(t, net, x).value()[0];
                     }));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0,
          fmt("50 random MLPs: worst relative FD error %.2e (< 1e-4), %.2f s (< 10 s)", worst, secs)};
}

Outcome flow_bijectivity() {
  Rng rng(77);
  double worst_rt = 0.0, worst_anti = 0.0;
  for (std::size_t steps = 1; steps <= 16; ++steps) {
    const std::size_t d = 2 + steps % 3, p = steps % 2, c = steps % 4 == 0 ? 2 : 0;
    FlowModel m = fixture::random_flow(d, p, c, steps, 700 + steps);
    const Tensor z = rng.normal(1000, d + p);
    const Tensor cond = rng.normal(1000, std::max<std::size_t>(c, 1));
    const Tensor* cp = c ? &cond : nullptr;
    const auto fwd = m.forward_gen_logdet(z, cp);
    const auto inv = m.inverse_norm(fwd.x, cp);
    worst_rt = std::max(worst_rt, (inv.z.mat() - z.mat()).cwiseAbs().maxCoeff());
    for (std::size_t i = 0; i < 1000; ++i) worst_anti = std::max(worst_anti, std::abs(fwd.logdet[i] + inv.logdet[i]));
  }
  FlowModel m2 = fixture::random_flow(2, 0, 0, 6, 88, 0.5);
  auto gen = [&](double a, double b) {
    const Tensor x = m2.forward_gen(Tensor::row({a, b}));
    return std::vector<double>{x[0], x[1]};
  };
  double worst_jac = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double a = rng.normal(), b = rng.normal();
    const double analytic = m2.forward_gen_logdet(Tensor::row({a, b})).logdet[0];
    const double fd = oracle::fd_logdet_2d(gen, a, b);
    worst_jac = std::max(worst_jac, std::abs(analytic - fd) / std::max(1.0, std::abs(fd)));
  }
  return {worst_rt < 1e-8 && worst_anti < 1e-9 && worst_jac < 1e-3,
          fmt("1-16 layers x 1000 pts: roundtrip %.2e (< 1e-8), logdet antisymmetry %.2e (< 1e-9); "
              "2-D FD Jacobian rel err %.2e (< 1e-3)",
              worst_rt, worst_anti, worst_jac)};
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  Rng rng(99);
  double worst_cd = 0.0, worst_emd = 0.0, worst_hung = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.index(7), m = 1 + rng.index(7), dim = 1 + rng.index(3);
    const Tensor a = rng.normal(n, dim), b = rng.normal(n, dim), c = rng.normal(m, dim);
    worst_cd = std::max(worst_cd, std::abs(chamfer(PointSet(a), PointSet(b)) - oracle::chamfer(a, b)));
    worst_cd = std::max(worst_cd, std::abs(chamfer(PointSet(a), PointSet(c)) - oracle::chamfer(a, c)));
    worst_emd = std::max(worst_emd, std::abs(emd(PointSet(a), PointSet(b)) - oracle::emd(a, b)));
    const Tensor cost = rng.uniform(7, 7, -5.0, 5.0);
    worst_hung = std::max(worst_hung, std::abs(hungarian_assign(cost).cost - oracle::min_assignment(cost)));
  }
  const double secs = seconds_since(t0);
  return {worst_cd <= 1e-12 && worst_emd <= 1e-12 && worst_hung <= 1e-12 && secs < 30.0,
          fmt("200 instances: |CD-brute| %.1e, |EMD-brute| %.1e, |Hungarian-perm min| %.1e (<= 1e-12), %.2f s (< 30 s)",
              worst_cd, worst_emd, worst_hung, secs)};
}

Outcome dequant_statistics() {
  Rng rng(404);
  // a = 0: data columns bitwise identical.
  const Tensor x = rng.normal(kMillion, 2, 3.0);
  const Tensor padded = paddingflow_augment(x, PaddingNoiseConfig{2, 0.0, 2.0}, rng);
  bool bitwise = true;
  for (std::size_t i = 0; i < x.rows() && bitwise; ++i) {
    bitwise = std::memcmp(padded.data() + i * padded.cols(), x.data() + i * x.cols(), 2 * sizeof(double)) == 0;
  }
  // a > 0: data-dim mean unbiased.
  const double x0 = 0.7;
  const Tensor flat({kMillion, 1}, x0);
  const Tensor noisy = paddingflow_augment(flat, PaddingNoiseConfig{1, 0.5, 2.0}, rng);
  const auto m = column_moments(noisy, 0);
  const double z_pf = std::abs(m.mean - x0) / m.se();
  // Uniform dequantization over standard-normal data.
  const auto asym = dequant_bias_estimate([](Rng& r) { return r.normal(); }, 0.0, 1.0, kMillion, rng);
  const auto sym = dequant_bias_estimate([](Rng& r) { return r.normal(); }, -0.5, 0.5, kMillion, rng);
  const double z_asym = std::abs(asym.mean - 0.5) / asym.se, z_sym = std::abs(sym.mean) / sym.se;
  return {bitwise && z_pf < 3 && z_asym < 3 && z_sym < 3,
          fmt("a=0 bitwise %s; PF data-dim bias %.2f SE; U(0,1) mean %.5f (%.2f SE from 0.5); "
              "U(-0.5,0.5) mean %.5f (%.2f SE); published constant %.6f shown only",
              bitwise ? "yes" : "NO", z_pf, asym.mean, z_asym, sym.mean, z_sym, published_uniform_bias_constant())};
}

Outcome reparam_paths() {
  const double sigma = 1.3, a = 0.8;
  LatentParams lp{Tensor({kMillion, 1}, 0.0), Tensor({kMillion, 1}, sigma)};
  Rng r1(51), r2(52), r3(53), r4(54);
  const PaddingNoiseConfig cfg{1, a, 2.0};
  const double sd_direct = column_moments(sample_padded(pad_params_direct(lp, cfg), r1), 0).sd();
  const double sd_fused = column_moments(pf_reparameterize(lp, cfg, r2), 0).sd();
  const double want_direct = std::sqrt(sigma * sigma + a * a), want_fused = sigma + a;
  const double e_direct = std::abs(sd_direct / want_direct - 1), e_fused = std::abs(sd_fused / want_fused - 1);
  const PaddingNoiseConfig cfg0{1, 0.0, 2.0};
  const Tensor d0 = sample_padded(pad_params_direct(lp, cfg0), r3), f0 = pf_reparameterize(lp, cfg0, r4);
  double worst_z = 0.0;
  for (std::size_t j = 0; j < 2; ++j) {
    const auto md = column_moments(d0, j), mf = column_moments(f0, j);
    worst_z = std::max(worst_z, std::abs(md.mean - mf.mean) / std::hypot(md.se(), mf.se()));
    const double se_sd = std::hypot(md.sd(), mf.sd()) / std::sqrt(2.0 * kMillion);
    worst_z = std::max(worst_z, std::abs(md.sd() - mf.sd()) / se_sd);
  }
  return {e_direct < 0.01 && e_fused < 0.01 && worst_z < 3,
          fmt("sigma=%.1f a=%.1f: direct sd %.4f vs %.4f (%.2f%%), fused sd %.4f vs %.4f (%.2f%%); "
              "a=0 paths differ by %.2f SE (< 3)",
              sigma, a, sd_direct, want_direct, 100 * e_direct, sd_fused, want_fused, 100 * e_fused, worst_z)};
}

Outcome toy_direction() {
  std::string detail;
  int wins_i = 0, wins_ii = 0;
  double slowest = 0.0;
  for (auto seed : kSeeds) {
    const std::string s = std::to_string(seed);
    const RunReport plain = run("c6_circles_plain_s" + s, {{"seed", s}, {"data.kind", "circles"}, {"dequant.compare", "none"}});
    const RunReport pf = run("c6_circles_pf_s" + s, {{"seed", s}, {"data.kind", "circles"}, {"dequant.compare", "paddingflow"}});
    const double cd_plain = plain.value("circles", "plain", "avg", "CD");
    const double cd_pf = pf.value("circles", "PaddingFlow (1, 0.01)", "avg", "CD");
    wins_i += cd_pf < cd_plain;
    slowest = std::max({slowest, plain.wall_clock_seconds, pf.wall_clock_seconds});

    const ConfigMap cond{{"seed", s}, {"data.kind", "cond_circles"}};
    ConfigMap sf_cfg = cond, pf_cfg = cond;
    sf_cfg["dequant.compare"] = "softflow";
    pf_cfg["dequant.compare"] = "paddingflow";
    const RunReport sf = run("c6_cond_circles_sf_s" + s, sf_cfg);
    const RunReport pfc = run("c6_cond_circles_pf_s" + s, pf_cfg);
    double mmd_sf = 0.0, mmd_pf = 0.0;
    for (const char* c : {"0.25", "0.5"}) {
      const std::string ds = std::string("cond_circles@c=") + c;
      mmd_sf += 0.5 * sf.value(ds, "SoftFlow (0.1)", "mmd", "CD");
      mmd_pf += 0.5 * pfc.value(ds, "PaddingFlow (1, 0.01)", "mmd", "CD");
    }
    wins_ii += mmd_pf < mmd_sf;
    slowest = std::max({slowest, sf.wall_clock_seconds, pfc.wall_clock_seconds});
    detail += fmt(" | seed %d: CD plain %.4f pf %.4f; MMD-CD sf %.4f pf %.4f", static_cast<int>(seed), cd_plain, cd_pf,
                  mmd_sf, mmd_pf);
    std::fflush(stdout);
  }
  const bool pass = wins_i >= 2 && wins_ii >= 2 && slowest <= 600.0;
  return {pass, fmt("(i) PF<plain in %d/3, (ii) PF<SoftFlow in %d/3 (need >=2), slowest run %.0f s (<= 600 s)", wins_i,
                    wins_ii, slowest) +
                    detail};
}

Outcome ik_direction() {
  const auto t0 = Clock::now();
  std::string detail;
  int ordered = 0;
  for (auto seed : kSeeds) {
    const std::string s = std::to_string(seed);
    std::vector<double> pos;
    for (const auto& [kind, name] : std::vector<std::pair<std::string, std::string>>{
             {"paddingflow", "PaddingFlow (1, 0)"}, {"softflow", "SoftFlow (0.001)"}, {"none", "plain"}}) {
      const RunReport r = run("c7_ik_" + kind + "_s" + s, {{"task", "ik"}, {"seed", s}, {"dequant.compare", kind}});
      pos.push_back(r.value("planar3", name, "position_error", "mean"));
    }
    ordered += pos[0] <= pos[1] && pos[1] <= pos[2];
    detail += fmt(" | seed %d: pf %.4f sf %.4f plain %.4f", static_cast<int>(seed), pos[0], pos[1], pos[2]);
  }
  const double mins = seconds_since(t0) / 60.0;
  return {ordered >= 2 && mins <= 45.0,
          fmt("PF <= SoftFlow <= plain position error in %d/3 seeds (need >=2), suite %.1f min (<= 45)", ordered, mins) +
              detail};
}

Outcome vae_smoke() {
  const RunReport rep = run("c8_vae", {{"task", "vae"}, {"seed", "0"}});
  std::vector<double> windows;
  for (const auto& r : rep.rows) {
    if (r.metric.rfind("smoothed_loss@", 0) == 0) windows.push_back(r.value);
  }
  const bool decreasing = rep.value("toy_images", "PaddingFlow (2, 0) fused", "smoothed_decreasing", "flag") == 1.0;

  VaeConfig vc;
  vc.seed = 8;
  VaeModel m(vc);
  Rng rng(8);
  const Tensor z = rng.normal(64, vc.latent_dim);
  const Tensor base = m.decode_probs(z);
  bool invariant = true;
  for (double s : {0.1, 10.0, 1e3}) invariant = invariant && m.decode_probs(hcat(z, rng.normal(64, vc.noise.p, s))) == base;

  // Shortcut vs full padded entropy, with data noise so sigma' depends on a.
  vc.noise = {2, 0.3, 2.0};
  vc.hidden = 16;
  vc.depth = 1;
  VaeModel g(vc);
  for (auto& v : g.encoder().weights().back().value.values()) v = rng.uniform(-0.3, 0.3);
  for (auto& v : g.encoder().biases().back().value.values()) v = rng.uniform(-0.3, 0.3);
  const Tensor imgs = gen_toy_images(8, rng).images, ed = rng.normal(8, 2), ep = rng.normal(8, 2);
  std::vector<Parameter*> enc;
  g.encoder().collect(enc);
  auto grads = [&](EntropyMode mode) {
    zero_grads(g.parameters());
    Tape tape;
    tape.backward(g.loss_terms(tape, imgs, ed, &ep, mode).latent);
    std::vector<double> out;
    for (auto* p : enc) out.insert(out.end(), p->grad.values().begin(), p->grad.values().end());
    return out;
  };
  const auto gs = grads(EntropyMode::data_dims), gf = grads(EntropyMode::padded);
  double worst = 0.0;
  for (std::size_t i = 0; i < gs.size(); ++i) worst = std::max(worst, std::abs(gs[i] - gf[i]) / std::max(1.0, std::abs(gf[i])));
  zero_grads(g.parameters());
  {
    Tape tape;
    tape.backward(g.loss_terms(tape, imgs, ed, &ep, EntropyMode::data_dims, false).latent);
  }
  const double fd = oracle::worst_fd_error(enc, [&] {
    Tape tape;
    return g.loss_terms(tape, imgs, ed, &ep, EntropyMode::data_dims, false).latent.value()[0];
  });

  std::string curve;
  for (double w : windows) curve += fmt(" %.3f", w);
  return {decreasing && windows.size() >= 2 && invariant && worst < 1e-4 && fd < 1e-4,
          fmt("smoothed neg-ELBO per 500 steps:%s (%s); decoder pad-invariant %s; "
              "shortcut vs full entropy grad diff %.1e, FD rel err %.1e (< 1e-4)",
              curve.c_str(), decreasing ? "strictly decreasing" : "NOT decreasing", invariant ? "exact" : "NO", worst, fd)};
}

Outcome determinism() {
  const fs::path tab_csv = out_root() / "c9_tabular.csv";
  fs::create_directories(out_root());
  {
    Rng rng(9);
    Tensor raw = rng.normal(400, 3);
    for (std::size_t i = 0; i < 400; ++i) raw(i, 2) = raw(i, 0) * raw(i, 1);
    write_csv_matrix(tab_csv.string(), raw);
  }
  const std::vector<std::pair<std::string, ConfigMap>> runs{
      {"toy", {{"seed", "11"}, {"data.kind", "cond_sines"}, {"train.iters", "300"}}},
      {"ik", {{"task", "ik"}, {"seed", "11"}, {"train.iters", "300"}, {"ik.targets", "200"}}},
      {"vae", {{"task", "vae"}, {"seed", "11"}, {"train.iters", "300"}}},
      {"bias", {{"task", "bias-check"}, {"seed", "11"}, {"bias.n", "100000"}}},
      {"tabular", {{"task", "tabular"}, {"seed", "11"}, {"data.path", tab_csv.string()}, {"train.iters", "300"}}},
  };
  std::string detail;
  bool all = true;
  for (const auto& [tag, cfg] : runs) {
    run("c9_" + tag + "_a", cfg);
    run("c9_" + tag + "_b", cfg);
    const std::string a = slurp(out_root() / ("c9_" + tag + "_a") / "results.csv");
    const std::string b = slurp(out_root() / ("c9_" + tag + "_b") / "results.csv");
    const bool same = !a.empty() && a == b;
    all = all && same;
    detail += fmt("%s%s %s (%zu bytes)", detail.empty() ? "" : ", ", tag.c_str(), same ? "identical" : "DIFFER", a.size());
  }
  return {all, "rerun results.csv: " + detail};
}

struct Criterion {
  int id;
  const char* name;
  bool enforced;
  std::function<Outcome()> check;
};

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) {
      strict = true;
    } else {
      only.insert(std::atoi(argv[i]));
    }
  }
  const std::vector<Criterion> criteria{
      {1, "autodiff gradients", true, autodiff_gradients},
      {2, "flow bijectivity", true, flow_bijectivity},
      {3, "metric oracles", true, metric_oracles},
      {4, "dequantization statistics", true, dequant_statistics},
      {5, "direct vs fused padded reparameterization", true, reparam_paths},
      {6, "toy 2-D direction (circles, cond_circles)", false, toy_direction},
      {7, "planar-arm IK direction", false, ik_direction},
      {8, "VAE smoke", true, vae_smoke},
      {9, "determinism", true, determinism},
  };
  int enforced_failures = 0, failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s  criterion %d  %s: %s [%.0f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    failures += !o.pass;
    enforced_failures += !o.pass && c.enforced;
  }
  return (strict ? failures : enforced_failures) == 0 ? 0 : 1;
}
