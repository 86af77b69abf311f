#pragma once

// Experiment runners behind the command-line tool. Each run is a pure
// function of its resolved configuration: every random stream is forked from
// the run seed by a fixed label, so strategies, thread counts and output
// directories never change the numbers.

#include <algorithm>
#include <cctype>
#include <limits>
#include <tuple>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pflow/adam.hpp"
#include "pflow/config.hpp"
#include "pflow/data.hpp"
#include "pflow/dequant.hpp"
#include "pflow/flow.hpp"
#include "pflow/metrics.hpp"
#include "pflow/report.hpp"
#include "pflow/robot.hpp"
#include "pflow/vae.hpp"

namespace pflow {

struct RunReport {
  std::string task;
  std::string config_echo;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<ResultRow> rows;
  std::map<std::string, std::vector<LossPoint>> loss_curves;  // keyed by model name
  double wall_clock_seconds = 0.0;
  std::vector<std::string> artifacts;

  /// Value of a single row; throws if absent.
  double value(const std::string& dataset, const std::string& model, const std::string& metric,
               const std::string& measure) const {
    for (const auto& r : rows) {
      if (r.dataset == dataset && r.model == model && r.metric == metric && r.measure == measure) return r.value;
    }
    throw UsageError("no result row " + dataset + "/" + model + "/" + metric + "/" + measure);
  }
};

// ---------------------------------------------------------------------------
// Strategy naming and construction

inline std::string model_name(const DequantStrategy& s) {
  return std::visit(
      [](const auto& st) -> std::string {
        using S = std::decay_t<decltype(st)>;
        auto g = [](double v) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%g", v);
          return std::string(buf);
        };
        if constexpr (std::is_same_v<S, NoDequant>) {
          return "plain";
        } else if constexpr (std::is_same_v<S, UniformDequant>) {
          return "uniform(" + g(st.lo) + ", " + g(st.hi) + ")";
        } else if constexpr (std::is_same_v<S, SoftFlowDequant>) {
          return "SoftFlow (" + g(st.c_max) + ")";
        } else {
          return "PaddingFlow (" + std::to_string(st.noise.p) + ", " + g(st.noise.a) + ")";
        }
      },
      s);
}

/// File-name friendly form of a model name.
inline std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') out += static_cast<char>(std::tolower(c));
    else if (!out.empty() && out.back() != '_') out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

inline std::uint64_t label_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline DequantStrategy make_strategy(const ExperimentConfig& cfg, const std::string& kind, std::size_t p, double a) {
  DequantStrategy s;
  if (kind == "none") {
    s = NoDequant{};
  } else if (kind == "uniform") {
    s = UniformDequant::symmetric(cfg.get_double("dequant.half_width"));
  } else if (kind == "softflow") {
    s = SoftFlowDequant{cfg.get_double("dequant.c_max")};
  } else if (kind == "paddingflow") {
    s = PaddingFlowDequant{PaddingNoiseConfig{p, a, cfg.get_double("dequant.b")}};
  } else {
    throw ConfigError("unknown dequant.kind '" + kind + "'");
  }
  try {
    validate(s);
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  return s;
}

/// Strategies compared in one run. dequant.kind, when set, selects a single
/// strategy; otherwise dequant.compare lists them. With `use_grid`,
/// paddingflow expands to every p:a pair in dequant.grid.
inline std::vector<DequantStrategy> strategies_from(const ExperimentConfig& cfg, bool use_grid = false) {
  std::vector<std::string> kinds;
  if (!cfg.raw("dequant.kind").empty()) kinds = {cfg.raw("dequant.kind")};
  else kinds = split_list(cfg.raw("dequant.compare"));
  if (kinds.empty()) throw ConfigError("no dequantization strategy selected");
  const auto p_raw = cfg.get_u64("dequant.p");
  const double a = cfg.get_double("dequant.a");
  std::vector<DequantStrategy> out;
  for (const auto& k : kinds) {
    if (k == "paddingflow" && use_grid && cfg.raw("dequant.kind").empty()) {
      for (const auto& entry : split_list(cfg.raw("dequant.grid"))) {
        const auto colon = entry.find(':');
        if (colon == std::string::npos) throw ConfigError("dequant.grid entries must be p:a, got '" + entry + "'");
        std::size_t gp = 0;
        double ga = 0.0;
        try {
          gp = std::stoul(entry.substr(0, colon));
          ga = std::stod(entry.substr(colon + 1));
        } catch (const std::exception&) {
          throw ConfigError("bad dequant.grid entry '" + entry + "'");
        }
        out.push_back(make_strategy(cfg, k, gp, ga));
      }
    } else {
      out.push_back(make_strategy(cfg, k, static_cast<std::size_t>(p_raw), a));
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (model_name(out[i]) == model_name(out[j])) throw ConfigError("strategy listed twice: " + model_name(out[i]));
    }
  }
  return out;
}

inline FlowConfig flow_config_from(const ExperimentConfig& cfg, std::size_t data_dim, std::size_t task_cond_dim,
                                   const DequantStrategy& s) {
  FlowConfig fc;
  fc.data_dim = data_dim;
  fc.pad_dim = padding_dims(s);
  fc.cond_dim = task_cond_dim + extra_cond_dims(s);
  fc.steps = cfg.get_size("flow.steps", 1);
  fc.hidden = cfg.get_size("flow.hidden", 1);
  fc.depth = cfg.get_size("flow.depth");
  fc.clamp = cfg.get_double("flow.clamp");
  if (!(fc.clamp > 0.0)) throw ConfigError("flow.clamp must be > 0");
  try {
    fc.activation = activation_from_string(cfg.raw("flow.activation"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  // Same initial network draws for every strategy of a run.
  fc.seed = Rng(cfg.seed()).fork(label_hash("flow-init")).seed();
  return fc;
}

// ---------------------------------------------------------------------------
// Training

struct TrainSettings {
  double lr = 1e-3;
  std::size_t batch = 256;
  std::size_t iters = 1000;
  std::size_t log_every = 50;
  std::size_t eval_every = 0;
};

inline TrainSettings train_settings_from(const ExperimentConfig& cfg) {
  TrainSettings ts;
  ts.lr = cfg.get_double("train.lr");
  if (!(ts.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  ts.batch = cfg.get_size("train.batch", 1);
  ts.iters = cfg.get_size("train.iters");
  ts.log_every = cfg.get_size("train.log_every", 1);
  ts.eval_every = cfg.get_size("train.eval_every");
  return ts;
}

inline std::vector<std::size_t> draw_indices(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = rng.index(n);
  return idx;
}

/// Runs the data-dependent ActNorm initialization on one dequantized batch
/// without taking an optimizer step.
inline void initialize_flow(FlowModel& model, const Tensor& data, const Tensor* conds, const DequantStrategy& s,
                            std::size_t batch, Rng& rng) {
  if (model.initialized()) return;
  const auto idx = draw_indices(data.rows(), batch, rng);
  const Tensor xb = data.gather_rows(idx);
  std::optional<Tensor> cb;
  if (conds) cb = conds->gather_rows(idx);
  TrainingBatch tb = dequantize(s, xb, cb ? &*cb : nullptr, rng);
  Tape tape;
  model.nll_loss(tape, tb.x, tb.cond ? &*tb.cond : nullptr);
}

/// Adam on the padded negative log-likelihood with fresh dequantization noise
/// per batch. `on_eval(step)` fires every eval_every steps.
inline std::vector<LossPoint> train_flow(FlowModel& model, const Tensor& data, const Tensor* conds,
                                         const DequantStrategy& s, const TrainSettings& ts, Rng& rng,
                                         const std::function<void(std::size_t)>& on_eval = {}) {
  if (conds && conds->rows() != data.rows()) throw DimensionError("condition rows differ from data rows");
  initialize_flow(model, data, conds, s, ts.batch, rng);
  const std::vector<Parameter*> params = model.parameters();
  AdamState adam;
  adam.lr = ts.lr;
  std::vector<LossPoint> curve;
  double window = 0.0;
  std::size_t in_window = 0;
  for (std::size_t step = 1; step <= ts.iters; ++step) {
    const auto idx = draw_indices(data.rows(), ts.batch, rng);
    const Tensor xb = data.gather_rows(idx);
    std::optional<Tensor> cb;
    if (conds) cb = conds->gather_rows(idx);
    TrainingBatch tb = dequantize(s, xb, cb ? &*cb : nullptr, rng);
    double loss_value = 0.0;
    try {
      Tape tape;
      Var loss = model.nll_loss(tape, tb.x, tb.cond ? &*tb.cond : nullptr);
      loss_value = loss.value()[0];
      zero_grads(params);
      tape.backward(loss);
      adam_step(adam, params);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    window += loss_value;
    ++in_window;
    if (step % ts.log_every == 0 || step == ts.iters) {
      curve.push_back({step, window / static_cast<double>(in_window)});
      window = 0.0;
      in_window = 0;
    }
    if (on_eval && ts.eval_every > 0 && step % ts.eval_every == 0) on_eval(step);
  }
  return curve;
}

/// Generated data points (n x d) from a model trained with strategy `s`.
inline Tensor generate_data(FlowModel& model, const DequantStrategy& s, std::size_t n, const Tensor* task_cond,
                            Rng& rng) {
  std::optional<Tensor> cond = generation_cond(s, task_cond);
  Tensor x = strip_padding_gen(model.sample(n, cond ? &*cond : nullptr, rng), model.data_dim());
  if (!x.all_finite()) throw NumericError("generated samples are not finite");
  return x;
}

struct SetScores {
  double avg_cd = 0.0, avg_emd = 0.0, mmd_cd = 0.0, mmd_emd = 0.0;
};

/// Average CD/EMD over R generated sets against a fixed target set, and the
/// single-target MMD over those same sets.
inline SetScores score_generated(FlowModel& model, const DequantStrategy& s, const PointSet& target,
                                 const Tensor* task_cond, std::size_t sets, Rng& rng, bool with_emd = true) {
  SetOfSets generated;
  for (std::size_t r = 0; r < sets; ++r) generated.emplace_back(generate_data(model, s, target.size(), task_cond, rng));
  SetScores sc;
  for (const auto& y : generated) {
    sc.avg_cd += chamfer(target, y);
    if (with_emd) sc.avg_emd += emd(target, y);
  }
  sc.avg_cd /= static_cast<double>(sets);
  sc.avg_emd /= static_cast<double>(sets);
  const SetOfSets st{target};
  sc.mmd_cd = mmd(st, generated, Measure::cd);
  if (with_emd) sc.mmd_emd = mmd(st, generated, Measure::emd);
  return sc;
}

// ---------------------------------------------------------------------------
// Parallel helpers

/// Worker cap: PFLOW_THREADS, then the `threads` key, then the hardware.
inline std::size_t thread_cap(const ExperimentConfig& cfg) {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const auto t = cfg.get_size("threads"); t > 0) cap = t;
  if (const char* env = std::getenv("PFLOW_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError("PFLOW_THREADS must be a positive integer");
    cap = std::min(cap, static_cast<std::size_t>(v));
  }
  return cap;
}

/// Runs job(i) for i < n on at most `workers` threads and rethrows the
/// failure of the lowest failing index.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= n) return;
            i = next++;
          }
          try {
            job(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// Output helpers

class OutputDir {
 public:
  OutputDir(const std::string& path, bool enabled) : path_(path), enabled_(enabled) {
    if (!enabled_) return;
    std::error_code ec;
    std::filesystem::create_directories(path_, ec);
    if (ec || !std::filesystem::is_directory(path_)) throw IoError("cannot create output directory '" + path_ + "'");
  }
  bool enabled() const { return enabled_; }
  std::string file(const std::string& name) const { return (std::filesystem::path(path_) / name).string(); }

 private:
  std::string path_;
  bool enabled_;
};

inline void finish_report(RunReport& rep, const ExperimentConfig& cfg, const OutputDir& out,
                          std::chrono::steady_clock::time_point start) {
  rep.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!out.enabled()) return;
  write_results_csv(out.file("results.csv"), rep.rows);
  rep.artifacts.push_back(out.file("results.csv"));
  nlohmann::ordered_json j;
  j["task"] = rep.task;
  j["seed"] = rep.seed;
  j["config_hash"] = rep.config_hash;
  j["config"] = cfg.values();
  j["wall_clock_seconds"] = rep.wall_clock_seconds;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"dataset", r.dataset}, {"model", r.model}, {"metric", r.metric}, {"measure", r.measure},
                    {"value", r.value}});
  }
  j["rows"] = rows;
  rep.artifacts.push_back(out.file("report.json"));
  j["artifacts"] = rep.artifacts;
  std::ofstream f(out.file("report.json"));
  if (!f) throw IoError("cannot write report.json");
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write failed for report.json");
}

inline RunReport start_report(const ExperimentConfig& cfg) {
  RunReport rep;
  rep.task = cfg.task();
  rep.seed = cfg.seed();
  rep.config_hash = cfg.hash();
  rep.config_echo = cfg.echo();
  return rep;
}

// ---------------------------------------------------------------------------
// toy2d

inline RunReport run_toy2d(const ExperimentConfig& cfg, bool write_outputs = true) {
  const auto start = std::chrono::steady_clock::now();
  RunReport rep = start_report(cfg);
  Toy2dKind kind;
  try {
    kind = toy2d_kind_from_string(cfg.raw("data.kind"));
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  const auto strategies = strategies_from(cfg);
  const TrainSettings ts = train_settings_from(cfg);
  const std::size_t n_train = cfg.get_size("data.n_train", 1);
  const std::size_t n_eval = std::min(cfg.get_size("eval.points", 1), cfg.get_size("eval.max_points", 1));
  const std::size_t sets = cfg.get_size("eval.sets", 1);
  const std::size_t eval_points = cfg.get_size("train.eval_points", 1);
  const bool cond = is_conditional(kind);
  std::vector<double> eval_conds = cfg.raw("data.eval_conds").empty() ? default_eval_conditions(kind)
                                                                     : cfg.get_doubles("data.eval_conds");
  if (!cond && !eval_conds.empty()) throw ConfigError("data.eval_conds only applies to conditional kinds");
  for (double c : eval_conds) {
    if (!(c > 0.0 && c <= 1.0)) throw ConfigError("evaluation condition must lie in (0, 1]");
  }
  const OutputDir out(cfg.raw("out"), write_outputs);
  const Rng root(cfg.seed());

  Rng data_rng = root.fork(label_hash("train-data"));
  const ToyData train = gen_toy2d({kind, n_train, cfg.seed(), std::nullopt}, data_rng);

  // Fixed evaluation targets: one set, or one per evaluation condition.
  struct Target {
    std::string dataset;
    std::optional<Tensor> cond;
    PointSet points;
  };
  std::vector<Target> targets;
  Rng test_rng = root.fork(label_hash("test-data"));
  if (!cond) {
    targets.push_back({to_string(kind), std::nullopt, gen_toy2d({kind, n_eval, 0, std::nullopt}, test_rng).points});
  } else {
    for (double c : eval_conds) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s@c=%g", to_string(kind).c_str(), c);
      targets.push_back({buf, Tensor::scalar(c), gen_toy2d({kind, n_eval, 0, c}, test_rng).points});
    }
  }

  struct Job {
    std::vector<ResultRow> rows;
    std::vector<LossPoint> curve;
    std::vector<Tensor> samples;  // one per target, for the figure
  };
  std::vector<Job> jobs(strategies.size());
  const std::string hash = rep.config_hash;
  auto row = [&](const std::string& ds, const std::string& model, const std::string& metric, const std::string& measure,
                 double v) { return ResultRow{ds, model, metric, measure, v, cfg.seed(), hash}; };

  parallel_for(strategies.size(), thread_cap(cfg), [&](std::size_t i) {
    const DequantStrategy& s = strategies[i];
    const std::string name = model_name(s);
    FlowModel model(flow_config_from(cfg, 2, cond ? 1 : 0, s));
    Rng rng = root.fork(label_hash("train:" + name));
    Rng eval_rng = root.fork(label_hash("eval:" + name));
    Job& job = jobs[i];
    const Tensor* train_cond = train.conds ? &*train.conds : nullptr;
    initialize_flow(model, train.points.points(), train_cond, s, ts.batch, rng);

    auto evaluate = [&](const std::string& prefix, bool with_emd) {
      for (const auto& t : targets) {
        const Tensor* tc = t.cond ? &*t.cond : nullptr;
        const SetScores sc = score_generated(model, s, t.points, tc, sets, eval_rng, with_emd);
        job.rows.push_back(row(t.dataset, name, prefix + "avg", "CD", sc.avg_cd));
        job.rows.push_back(row(t.dataset, name, prefix + "mmd", "CD", sc.mmd_cd));
        if (with_emd) {
          job.rows.push_back(row(t.dataset, name, prefix + "avg", "EMD", sc.avg_emd));
          job.rows.push_back(row(t.dataset, name, prefix + "mmd", "EMD", sc.mmd_emd));
        }
      }
    };
    evaluate("init_", false);

    Rng monitor_rng = root.fork(label_hash("monitor:" + name));
    auto on_eval = [&](std::size_t step) {
      // Sample-based progress signal on a small held-out set.
      for (const auto& t : targets) {
        Rng val_rng = root.fork(label_hash("monitor-data"));
        const PointSet val = gen_toy2d({kind, eval_points, 0, t.cond ? std::optional<double>(t.cond->values()[0])
                                                                         : std::nullopt},
                                       val_rng)
                                 .points;
        const Tensor* tc = t.cond ? &*t.cond : nullptr;
        const PointSet gen(generate_data(model, s, eval_points, tc, monitor_rng));
        job.rows.push_back(row(t.dataset, name, "train_avg@" + std::to_string(step), "CD", chamfer(val, gen)));
      }
    };
    job.curve = train_flow(model, train.points.points(), train_cond, s, ts, rng, on_eval);
    evaluate("", true);

    Rng fig_rng = root.fork(label_hash("figure:" + name));
    for (const auto& t : targets) {
      job.samples.push_back(generate_data(model, s, 2000, t.cond ? &*t.cond : nullptr, fig_rng));
    }
    if (out.enabled() && ts.iters > 0 && cfg.get_bool("checkpoint")) {
      model.save(out.file(to_string(kind) + "_" + slug(name) + ".pflow"));
    }
  });

  std::vector<std::vector<ScatterPanel>> grid(1);
  for (const auto& t : targets) grid[0].push_back({"data " + t.dataset, t.points.points()});
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    const std::string name = model_name(strategies[i]);
    for (auto& r : jobs[i].rows) rep.rows.push_back(std::move(r));
    rep.loss_curves[name] = jobs[i].curve;
    grid.emplace_back();
    for (std::size_t k = 0; k < targets.size(); ++k) grid.back().push_back({name, jobs[i].samples[k]});
    if (out.enabled()) {
      const std::string loss_path = out.file("loss_" + slug(name) + ".csv");
      write_loss_csv(loss_path, jobs[i].curve);
      rep.artifacts.push_back(loss_path);
      if (ts.iters > 0 && cfg.get_bool("checkpoint")) rep.artifacts.push_back(out.file(to_string(kind) + "_" + slug(name) + ".pflow"));
    }
  }
  if (out.enabled() && cfg.get_bool("svg")) {
    const std::string svg = out.file("toy2d_" + to_string(kind) + ".svg");
    write_scatter_grid(svg, grid, 1.5);
    rep.artifacts.push_back(svg);
  }
  finish_report(rep, cfg, out, start);
  return rep;
}

// ---------------------------------------------------------------------------
// ik

inline void write_arm_overlay(const std::string& path, const PlanarArm& arm, const Tensor& solutions, const Pose& target,
                              const std::string& title) {
  SvgCanvas svg;
  const double extent = arm.reach() * 1.05;
  const double s = SvgCanvas::kSize / (2.0 * extent);
  auto px = [&](double x) { return (x + extent) * s; };
  auto py = [&](double y) { return (extent - y) * s; };
  svg.text(8, 16, title, 12.0);
  svg.circle(px(0), py(0), 4.0, "#333333");
  for (std::size_t i = 0; i < solutions.rows(); ++i) {
    double x = 0.0, y = 0.0, cum = 0.0;
    for (std::size_t j = 0; j < arm.joints(); ++j) {
      cum += solutions(i, j);
      const double nx = x + arm.lengths[j] * std::cos(cum), ny = y + arm.lengths[j] * std::sin(cum);
      svg.line(px(x), py(y), px(nx), py(ny), "#1f4e9c", 1.5, 0.25);
      x = nx;
      y = ny;
    }
  }
  const double tl = 0.25 * arm.lengths.back();
  svg.line(px(target.x), py(target.y), px(target.x + tl * std::cos(target.phi)), py(target.y + tl * std::sin(target.phi)),
           "#c0392b", 2.5);
  svg.circle(px(target.x), py(target.y), 5.0, "#c0392b");
  svg.save(path);
}

inline RunReport run_ik(const ExperimentConfig& cfg, bool write_outputs = true) {
  const auto start = std::chrono::steady_clock::now();
  RunReport rep = start_report(cfg);
  const auto strategies = strategies_from(cfg);
  const TrainSettings ts = train_settings_from(cfg);
  PlanarArm arm;
  try {
    arm = PlanarArm(cfg.get_doubles("ik.lengths"));
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  const std::size_t n_train = cfg.get_size("data.n_train", 1);
  const std::size_t n_targets = cfg.get_size("ik.targets", 1);
  const std::size_t n_solutions = cfg.get_size("ik.solutions", 1);
  const OutputDir out(cfg.raw("out"), write_outputs);
  const Rng root(cfg.seed());
  Rng data_rng = root.fork(label_hash("train-data"));
  const IkDataset train = gen_ik_dataset(arm, n_train, data_rng);
  Rng target_rng = root.fork(label_hash("test-data"));
  const IkDataset targets = gen_ik_dataset(arm, n_targets, target_rng);

  // All targets evaluated in one batch: row t*S + k is solution k of target t.
  Tensor conds({n_targets * n_solutions, pose_condition_dim}, Uninitialized{});
  for (std::size_t t = 0; t < n_targets; ++t) {
    for (std::size_t k = 0; k < n_solutions; ++k) {
      for (std::size_t j = 0; j < pose_condition_dim; ++j) conds(t * n_solutions + k, j) = targets.conditions(t, j);
    }
  }

  struct Job {
    IkErrors errors;
    std::vector<LossPoint> curve;
    Tensor first_target_solutions;
  };
  std::vector<Job> jobs(strategies.size());
  const std::string dataset = "planar" + std::to_string(arm.joints());

  parallel_for(strategies.size(), thread_cap(cfg), [&](std::size_t i) {
    const DequantStrategy& s = strategies[i];
    const std::string name = model_name(s);
    FlowModel model(flow_config_from(cfg, arm.joints(), pose_condition_dim, s));
    Rng rng = root.fork(label_hash("train:" + name));
    Job& job = jobs[i];
    job.curve = train_flow(model, train.joints, &train.conditions, s, ts, rng);
    Rng eval_rng = root.fork(label_hash("eval:" + name));
    std::optional<Tensor> gen_cond = conds;
    if (std::holds_alternative<SoftFlowDequant>(s)) gen_cond = hcat(conds, Tensor({conds.rows(), 1}));
    Tensor z = eval_rng.normal(conds.rows(), model.dim());
    Tensor sols = strip_padding_gen(model.forward_gen(z, &*gen_cond), arm.joints());
    if (!sols.all_finite()) throw NumericError("generated IK solutions are not finite");
    for (std::size_t t = 0; t < n_targets; ++t) {
      const IkErrors e = ik_errors(arm, sols.row_slice(t * n_solutions, (t + 1) * n_solutions), targets.poses[t]);
      job.errors.position += e.position;
      job.errors.angular_deg += e.angular_deg;
    }
    job.errors.position /= static_cast<double>(n_targets);
    job.errors.angular_deg /= static_cast<double>(n_targets);
    job.first_target_solutions = sols.row_slice(0, n_solutions);
    if (out.enabled() && ts.iters > 0 && cfg.get_bool("checkpoint")) model.save(out.file("ik_" + slug(name) + ".pflow"));
  });

  std::string table = "model,position_error,angular_error_deg\n";
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    const std::string name = model_name(strategies[i]);
    rep.rows.push_back({dataset, name, "position_error", "mean", jobs[i].errors.position, cfg.seed(), rep.config_hash});
    rep.rows.push_back({dataset, name, "angular_error_deg", "mean", jobs[i].errors.angular_deg, cfg.seed(), rep.config_hash});
    rep.loss_curves[name] = jobs[i].curve;
    table += csv_field(name) + "," + format_double(jobs[i].errors.position) + "," + format_double(jobs[i].errors.angular_deg) + "\n";
    if (out.enabled()) {
      write_loss_csv(out.file("loss_" + slug(name) + ".csv"), jobs[i].curve);
      rep.artifacts.push_back(out.file("loss_" + slug(name) + ".csv"));
      if (ts.iters > 0 && cfg.get_bool("checkpoint")) rep.artifacts.push_back(out.file("ik_" + slug(name) + ".pflow"));
      if (cfg.get_bool("svg")) {
        const std::string svg = out.file("ik_arm_" + slug(name) + ".svg");
        write_arm_overlay(svg, arm, jobs[i].first_target_solutions, targets.poses[0], name);
        rep.artifacts.push_back(svg);
      }
    }
  }
  if (out.enabled()) {
    std::ofstream f(out.file("ik_table.csv"), std::ios::binary);
    f << table;
    if (!f) throw IoError("cannot write ik_table.csv");
    rep.artifacts.push_back(out.file("ik_table.csv"));
  }
  finish_report(rep, cfg, out, start);
  return rep;
}

// ---------------------------------------------------------------------------
// bias-check

inline RunReport run_bias_check(const ExperimentConfig& cfg, bool write_outputs = true) {
  const auto start = std::chrono::steady_clock::now();
  RunReport rep = start_report(cfg);
  const std::size_t n = cfg.get_size("bias.n");
  if (n < 10000) throw ConfigError("bias.n must be at least 10000");
  const double h = cfg.get_double("bias.half_width");
  if (!(h > 0.0)) throw ConfigError("bias.half_width must be > 0");
  const OutputDir out(cfg.raw("out"), write_outputs);
  const Rng root(cfg.seed());
  auto normal = [](Rng& r) { return r.normal(); };
  Rng r1 = root.fork(label_hash("bias:asymmetric"));
  Rng r2 = root.fork(label_hash("bias:symmetric"));
  const MeanEstimate asym = dequant_bias_estimate(normal, 0.0, 1.0, n, r1);
  const MeanEstimate sym = dequant_bias_estimate(normal, -h, h, n, r2);
  char sym_name[64];
  std::snprintf(sym_name, sizeof sym_name, "uniform(%g, %g)", -h, h);
  auto push = [&](const std::string& model, const std::string& metric, double v) {
    rep.rows.push_back({"standard_normal", model, metric, "value", v, cfg.seed(), rep.config_hash});
  };
  push("uniform(0, 1)", "mean", asym.mean);
  push("uniform(0, 1)", "se", asym.se);
  push("uniform(0, 1)", "linearity_value", 0.5);
  push("uniform(0, 1)", "published_constant", published_uniform_bias_constant());
  push(sym_name, "mean", sym.mean);
  push(sym_name, "se", sym.se);
  finish_report(rep, cfg, out, start);
  return rep;
}

// ---------------------------------------------------------------------------
// tabular

inline RunReport run_tabular(const ExperimentConfig& cfg, bool write_outputs = true) {
  const auto start = std::chrono::steady_clock::now();
  RunReport rep = start_report(cfg);
  const std::string path = cfg.raw("data.path");
  if (path.empty()) throw ConfigError("tabular task needs data.path");
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("data.path '" + path + "' does not exist");
  const auto fr = cfg.get_doubles("data.split");
  if (fr.size() != 3) throw ConfigError("data.split needs three fractions");
  const auto strategies = strategies_from(cfg, true);
  const TrainSettings ts = train_settings_from(cfg);
  const std::size_t sets = cfg.get_size("eval.sets", 1);
  const std::size_t max_points = std::min(cfg.get_size("eval.points", 1), cfg.get_size("eval.max_points", 1));
  TabularDataset ds;
  try {
    ds = load_csv_standardized(path, {fr[0], fr[1], fr[2]}, cfg.seed());
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  const OutputDir out(cfg.raw("out"), write_outputs);
  const Rng root(cfg.seed());
  const Tensor train = ds.train();
  Rng sub_rng = root.fork(label_hash("test-subsample"));
  const PointSet test = subsample(PointSet(ds.test_idx.empty() ? train : ds.test()), max_points, sub_rng);
  const std::string dataset = std::filesystem::path(path).stem().string();

  struct Job {
    SetScores scores;
    std::vector<LossPoint> curve;
  };
  std::vector<Job> jobs(strategies.size());
  parallel_for(strategies.size(), thread_cap(cfg), [&](std::size_t i) {
    const DequantStrategy& s = strategies[i];
    const std::string name = model_name(s);
    FlowModel model(flow_config_from(cfg, train.cols(), 0, s));
    Rng rng = root.fork(label_hash("train:" + name));
    jobs[i].curve = train_flow(model, train, nullptr, s, ts, rng);
    Rng eval_rng = root.fork(label_hash("eval:" + name));
    jobs[i].scores = score_generated(model, s, test, nullptr, sets, eval_rng);
    if (out.enabled() && ts.iters > 0 && cfg.get_bool("checkpoint")) model.save(out.file("tabular_" + slug(name) + ".pflow"));
  });
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    const std::string name = model_name(strategies[i]);
    const SetScores& sc = jobs[i].scores;
    for (const auto& [metric, measure, v] : std::vector<std::tuple<std::string, std::string, double>>{
             {"avg", "CD", sc.avg_cd}, {"avg", "EMD", sc.avg_emd}, {"mmd", "CD", sc.mmd_cd}, {"mmd", "EMD", sc.mmd_emd}}) {
      rep.rows.push_back({dataset, name, metric, measure, v, cfg.seed(), rep.config_hash});
    }
    rep.loss_curves[name] = jobs[i].curve;
    if (out.enabled()) {
      write_loss_csv(out.file("loss_" + slug(name) + ".csv"), jobs[i].curve);
      rep.artifacts.push_back(out.file("loss_" + slug(name) + ".csv"));
    }
  }
  rep.rows.push_back({dataset, "-", "test_points", "count", static_cast<double>(test.size()), cfg.seed(), rep.config_hash});
  finish_report(rep, cfg, out, start);
  return rep;
}

// ---------------------------------------------------------------------------
// vae

/// Trailing mean over `window` entries, defined from index window-1 on.
inline std::vector<double> trailing_mean(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= window) acc -= v[i - window];
    if (i + 1 >= window) out.push_back(acc / static_cast<double>(window));
  }
  return out;
}

inline void write_image_grid(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& rows,
                             std::size_t per_row) {
  SvgCanvas svg;
  const double cell = SvgCanvas::kSize / static_cast<double>(per_row);
  const double px = (cell - 6.0) / static_cast<double>(kToyImageSide);
  double y = 4.0;
  for (const auto& [title, imgs] : rows) {
    svg.text(4, y + 10, title, 10.0);
    y += 14.0;
    for (std::size_t k = 0; k < std::min(per_row, imgs.rows()); ++k) {
      const double x0 = static_cast<double>(k) * cell + 3.0;
      for (std::size_t r = 0; r < kToyImageSide; ++r) {
        for (std::size_t c = 0; c < kToyImageSide; ++c) {
          const double v = std::clamp(imgs(k, r * kToyImageSide + c), 0.0, 1.0);
          const int g = static_cast<int>(std::lround(255.0 * (1.0 - v)));
          char fill[16];
          std::snprintf(fill, sizeof fill, "#%02x%02x%02x", g, g, g);
          svg.rect(x0 + static_cast<double>(c) * px, y + static_cast<double>(r) * px, px, px, fill);
        }
      }
    }
    y += cell;
  }
  svg.save(path);
}

inline RunReport run_vae(const ExperimentConfig& cfg, bool write_outputs = true) {
  const auto start = std::chrono::steady_clock::now();
  RunReport rep = start_report(cfg);
  const auto strategies = strategies_from(cfg);
  if (strategies.size() != 1 || !std::holds_alternative<PaddingFlowDequant>(strategies[0])) {
    throw ConfigError("vae task supports dequant.kind = paddingflow only");
  }
  VaeConfig vc;
  vc.latent_dim = cfg.get_size("vae.latent", 1);
  vc.hidden = cfg.get_size("vae.hidden", 1);
  vc.depth = cfg.get_size("vae.depth");
  vc.noise = std::get<PaddingFlowDequant>(strategies[0]).noise;
  try {
    vc.reparam = reparam_from_string(cfg.raw("vae.reparam"));
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  vc.prior_steps = cfg.get_size("vae.prior_steps", 1);
  vc.prior_hidden = cfg.get_size("vae.prior_hidden", 1);
  const Rng root(cfg.seed());
  vc.seed = root.fork(label_hash("vae-init")).seed();
  const TrainSettings ts = train_settings_from(cfg);
  const std::size_t smooth = cfg.get_size("vae.smooth", 1);
  const std::size_t window = cfg.get_size("vae.window", 1);
  const OutputDir out(cfg.raw("out"), write_outputs);

  Rng data_rng = root.fork(label_hash("train-data"));
  const ToyImages train = gen_toy_images(cfg.get_size("data.n_train", 1), data_rng);
  Rng test_rng = root.fork(label_hash("test-data"));
  const ToyImages test = gen_toy_images(cfg.get_size("data.n_test", 1), test_rng);

  VaeModel model(vc);
  const std::vector<Parameter*> params = model.parameters();
  AdamState adam;
  adam.lr = ts.lr;
  Rng rng = root.fork(label_hash("train:vae"));
  std::vector<double> losses;
  std::vector<LossPoint> curve;
  for (std::size_t step = 1; step <= ts.iters; ++step) {
    const Tensor batch = train.images.gather_rows(draw_indices(train.images.rows(), ts.batch, rng));
    try {
      Tape tape;
      Var loss = elbo_loss(model, tape, batch, rng);
      zero_grads(params);
      tape.backward(loss);
      adam_step(adam, params);
      losses.push_back(loss.value()[0]);
    } catch (const NumericError& e) {
      throw NumericError("vae training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    curve.push_back({step, losses.back()});
  }
  const std::string name = model_name(strategies[0]) + " " + to_string(vc.reparam);
  auto push = [&](const std::string& metric, const std::string& measure, double v) {
    rep.rows.push_back({"toy_images", name, metric, measure, v, cfg.seed(), rep.config_hash});
  };
  const auto smoothed = trailing_mean(losses, smooth);
  bool decreasing = !smoothed.empty();
  double prev = std::numeric_limits<double>::infinity();
  std::size_t checkpoints = 0;
  for (std::size_t step = window; step <= losses.size(); step += window) {
    if (step < smooth) continue;
    const double v = smoothed[step - smooth];
    push("smoothed_loss@" + std::to_string(step), "neg_elbo", v);
    decreasing = decreasing && v < prev;
    prev = v;
    ++checkpoints;
  }
  push("smoothed_decreasing", "flag", decreasing && checkpoints >= 2 ? 1.0 : 0.0);

  // Held-out bound with a fixed noise stream. Initialization is allowed so a
  // zero-iteration run still reports a finite value.
  Rng eval_rng = root.fork(label_hash("eval:vae"));
  {
    Tape tape;
    auto terms = model.loss_terms(tape, test.images, eval_rng);
    push("test_loss", "neg_elbo", terms.loss.value()[0]);
    push("test_reconstruction", "bce", terms.reconstruction.value()[0]);
  }
  // Each image is one 64-dimensional point; generated images are decoded
  // Bernoulli means of prior samples.
  const Tensor generated = model.sample_images(test.images.rows(), eval_rng);
  SetOfSets st, sp;
  for (std::size_t i = 0; i < test.images.rows(); ++i) {
    st.emplace_back(test.images.row_slice(i, i + 1), true);
    sp.emplace_back(generated.row_slice(i, i + 1), true);
  }
  push("mmd", "L2", mmd(st, sp, Measure::l2));
  push("cov", "L2", cov(st, sp, Measure::l2));

  rep.loss_curves[name] = curve;
  if (out.enabled()) {
    write_loss_csv(out.file("loss.csv"), curve);
    rep.artifacts.push_back(out.file("loss.csv"));
    if (ts.iters > 0 && cfg.get_bool("checkpoint")) {
      model.save(out.file("vae.pflow"));
      rep.artifacts.push_back(out.file("vae.pflow"));
    }
    if (cfg.get_bool("svg")) {
      const std::size_t k = std::min<std::size_t>(8, test.images.rows());
      const Tensor originals = test.images.row_slice(0, k);
      const Tensor recon = model.decode_probs(model.encode(originals).mu);
      const std::string svg = out.file("vae_grid.svg");
      write_image_grid(svg, {{"test images", originals}, {"reconstructions (mean latent)", recon},
                             {"prior samples", generated.row_slice(0, std::min<std::size_t>(8, generated.rows()))}},
                       8);
      rep.artifacts.push_back(svg);
    }
  }
  finish_report(rep, cfg, out, start);
  return rep;
}

// ---------------------------------------------------------------------------

inline RunReport run_experiment(const ExperimentConfig& cfg, bool write_outputs = true) {
  const std::string& task = cfg.task();
  if (task == "toy2d") return run_toy2d(cfg, write_outputs);
  if (task == "ik") return run_ik(cfg, write_outputs);
  if (task == "bias-check") return run_bias_check(cfg, write_outputs);
  if (task == "tabular") return run_tabular(cfg, write_outputs);
  if (task == "vae") return run_vae(cfg, write_outputs);
  throw ConfigError("unknown task '" + task + "'");
}

}  // namespace pflow
