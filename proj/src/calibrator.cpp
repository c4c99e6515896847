#include "calib/calibrator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include "calib/checkpoint.hpp"
#include "calib/text.hpp"

namespace calib {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("failed writing " + path.string());
}

void run_parallel(std::size_t n_tasks, std::size_t workers, const std::function<void(std::size_t)>& task) {
  if (workers <= 1 || n_tasks <= 1) {
    for (std::size_t k = 0; k < n_tasks; ++k) task(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t k = next.fetch_add(1); k < n_tasks; k = next.fetch_add(1)) task(k);
  };
  std::vector<std::jthread> pool;
  const std::size_t extra = std::min(workers, n_tasks) - 1;
  pool.reserve(extra);
  for (std::size_t w = 0; w < extra; ++w) pool.emplace_back(loop);
  loop();
}

struct PointOutcome {
  std::vector<double> losses;
  bool failed = false;
  std::string error;
};

std::vector<PointOutcome> evaluate_batch(const CalibrationConfig& c, std::int64_t batch,
                                         const std::vector<ParamVector>& points) {
  const std::size_t members = c.ensemble_size;
  const std::size_t n = points.size() * members;
  std::vector<double> loss(n, 0.0);
  std::vector<std::string> error(n);
  std::vector<char> failed(n, 0);
  std::vector<std::exception_ptr> fatal(n);

  run_parallel(n, c.workers, [&](std::size_t k) {
    const std::size_t i = k / members, e = k % members;
    try {
      auto panel = c.model->simulate(points[i], c.n_steps, c.burn_in,
                                     derive_seed(c.master_seed, static_cast<std::uint64_t>(batch), i, e));
      if (!c.simulated_preprocessing.empty()) {
        try {
          panel = preprocess(panel, c.simulated_preprocessing);
        } catch (const DomainError& ex) {
          throw ModelError(std::string("simulated output rejected by preprocessing: ") + ex.what());
        }
      }
      const double v = c.loss->member_loss(panel);
      if (!std::isfinite(v)) throw ModelError("non-finite loss");
      loss[k] = v;
    } catch (const ModelError& ex) {
      failed[k] = 1;
      error[k] = ex.what();
    } catch (...) {
      fatal[k] = std::current_exception();
    }
  });
  for (const auto& f : fatal)
    if (f) std::rethrow_exception(f);

  std::vector<PointOutcome> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto& o = out[i];
    o.losses.assign(loss.begin() + static_cast<std::ptrdiff_t>(i * members),
                    loss.begin() + static_cast<std::ptrdiff_t>((i + 1) * members));
    for (std::size_t e = 0; e < members && !o.failed; ++e) {
      if (failed[i * members + e]) {
        o.failed = true;
        o.error = "seed " + std::to_string(e) + ": " + error[i * members + e];
      }
    }
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

std::string describe(const ParamVector& p) {
  std::string s = "(";
  for (std::size_t i = 0; i < p.size(); ++i) s += (i ? ", " : "") + format_real(p[i]);
  return s + ")";
}

class Run {
 public:
  explicit Run(const CalibrationConfig& config)
      : c_(config), state_(config.space, config.master_seed), samplers_(config.samplers), scheduler_(config.strategy) {}

  void restore(Checkpoint cp) {
    if (!(cp.state.space() == c_.space))
      throw ConfigError("resume: checkpoint parameter space differs from the configured one");
    if (cp.state.master_seed() != c_.master_seed)
      throw ConfigError("resume: checkpoint master seed " + std::to_string(cp.state.master_seed()) +
                        " differs from the configured " + std::to_string(c_.master_seed));
    if (cp.state.batch_count() > static_cast<std::int64_t>(c_.n_batches))
      throw ConfigError("resume: checkpoint already holds " + std::to_string(cp.state.batch_count()) +
                        " batches, more than n_batches");
    unpack_scheduler_blob(cp.scheduler_state, samplers_, scheduler_);
    state_ = std::move(cp.state);
  }

  CalibrationResult run(const ProgressFn& progress) {
    if (!c_.output_dir.empty()) std::filesystem::create_directories(c_.output_dir);
    for (auto b = state_.batch_count(); b < static_cast<std::int64_t>(c_.n_batches); ++b) {
      const auto report = step(b);
      persist();
      if (progress) progress(report);
    }
    if (!c_.output_dir.empty() && state_.batch_count() > 0) persist();
    return {state_, scheduler_.trace(), warnings_, scheduler_.degenerate_rewards()};
  }

 private:
  BatchReport step(std::int64_t b) {
    const auto ub = static_cast<std::uint64_t>(b);
    SamplerId arm = SamplerId::Halton;
    if (b > 0) {
      auto rng = make_stream(c_.master_seed, ub, Stream::Scheduler);
      arm = scheduler_.choose(b, rng);
    }
    auto rng = make_stream(c_.master_seed, ub, Stream::Sampler);
    const SamplerContext ctx{state_, c_.batch_size, rng, &pending_};
    const auto points = admit(samplers_.get(arm).propose(ctx), b);

    const auto outcomes = evaluate_batch(c_, b, points);
    const double prev_best = state_.empty() ? std::numeric_limits<double>::infinity() : state_.best().loss;
    std::size_t failures = 0;
    double batch_min = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (outcomes[i].failed) {
        ++failures;
        pending_.push_back("batch " + std::to_string(b) + ": point " + std::to_string(i) + " " +
                           describe(points[i]) + " failed: " + outcomes[i].error);
      }
    }
    if (failures == points.size())
      throw CalibrationAborted("batch " + std::to_string(b) + ": all " + std::to_string(failures) +
                                   " points failed to simulate; first error: " + outcomes[0].error,
                               b);

    for (std::size_t i = 0; i < points.size(); ++i) {
      EvaluationRecord r;
      r.params = points[i];
      r.batch_index = b;
      r.sampler = arm;
      if (outcomes[i].failed) {
        r.ensemble_losses.assign(c_.ensemble_size, c_.failure_penalty);
        r.loss = c_.failure_penalty;
      } else {
        r.ensemble_losses = outcomes[i].losses;
        r.loss = ensemble_mean(r.ensemble_losses);
      }
      batch_min = std::min(batch_min, r.loss);
      state_.append(std::move(r));
    }
    state_.close_batch();
    const double best = state_.best().loss;
    if (b > 0) scheduler_.observe(b, arm, batch_min, prev_best, best);

    for (auto& w : pending_) warnings_.push_back(w);
    return {b, arm, batch_min, best, failures, state_.size()};
  }

  // Keeps valid, novel, distinct proposals and tops the batch up with uniform grid points.
  std::vector<ParamVector> admit(std::vector<ParamVector> proposed, std::int64_t b) {
    std::vector<ParamVector> points;
    std::vector<GridKey> taken;
    std::size_t rejected = 0;
    for (auto& p : proposed) {
      if (points.size() == c_.batch_size) break;
      if (!c_.space.contains(p) || state_.contains(p)) {
        ++rejected;
        continue;
      }
      auto key = c_.space.key_of(p);
      if (std::find(taken.begin(), taken.end(), key) != taken.end()) {
        ++rejected;
        continue;
      }
      taken.push_back(std::move(key));
      points.push_back(std::move(p));
    }
    if (points.size() < c_.batch_size) {
      const std::size_t need = c_.batch_size - points.size();
      auto rng = make_stream(c_.master_seed, static_cast<std::uint64_t>(b), Stream::Dedup);
      auto fill = uniform_novel_points(state_, need, rng, taken);
      if (fill.size() < need)
        throw CalibrationAborted("batch " + std::to_string(b) + ": parameter grid exhausted", b);
      pending_.push_back("batch " + std::to_string(b) + ": " + std::to_string(rejected) +
                         " proposals rejected, filled " + std::to_string(need) + " uniformly");
      for (auto& p : fill) points.push_back(std::move(p));
    }
    return points;
  }

  void persist() {
    const std::size_t fresh = warnings_.size() - logged_;
    pending_.clear();
    if (c_.output_dir.empty()) return;
    const auto& dir = c_.output_dir;
    checkpoint_save(state_, pack_scheduler_blob(samplers_, scheduler_), dir / kCheckpointFile);
    const bool bandit = c_.strategy.kind == StrategyKind::Bandit;
    write_trace_csv(scheduler_.trace(), bandit ? c_.strategy.arms : std::vector<SamplerId>{}, dir / kTraceFile);
    write_text(dir / kConvergenceFile, format_convergence_csv(state_));
    if (fresh > 0) {
      std::ofstream log(dir / kEventsFile, std::ios::app);
      for (std::size_t i = logged_; i < warnings_.size(); ++i) log << warnings_[i] << '\n';
    }
    logged_ = warnings_.size();
  }

  const CalibrationConfig& c_;
  CalibrationState state_;
  SamplerSet samplers_;
  Scheduler scheduler_;
  std::vector<std::string> pending_;
  std::vector<std::string> warnings_;
  std::size_t logged_ = 0;
};

}  // namespace

void CalibrationConfig::validate() const {
  if (!model) throw ConfigError("model: not set");
  if (!loss) throw ConfigError("loss: not set");
  if (space.size() == 0) throw ConfigError("space: no parameters");
  if (model->param_names().size() != space.size())
    throw ConfigError("space: " + std::to_string(space.size()) + " parameters given, model '" +
                      std::string(model->name()) + "' calibrates " + std::to_string(model->param_names().size()));
  if (batch_size < 1) throw ConfigError("budget.batch_size: must be >= 1");
  if (ensemble_size < 1) throw ConfigError("budget.ensemble_size: must be >= 1");
  if (n_batches < 1) throw ConfigError("budget.n_batches: must be >= 1");
  if (n_steps < 1) throw ConfigError("budget.n_steps: must be >= 1");
  if (!(failure_penalty >= 0.0)) throw ConfigError("loss.failure_penalty: must be >= 0");
  if (strategy.arms.empty()) throw ConfigError("strategy.arms: empty");
  if (strategy.kind == StrategyKind::Single && strategy.arms.size() != 1)
    throw ConfigError("strategy.arms: a single strategy takes exactly one arm");
  if (strategy.kind == StrategyKind::Bandit) {
    if (!(strategy.epsilon >= 0.0 && strategy.epsilon <= 1.0)) throw ConfigError("strategy.epsilon: must lie in [0, 1]");
    if (!(strategy.alpha > 0.0 && strategy.alpha <= 1.0)) throw ConfigError("strategy.alpha: must lie in (0, 1]");
  }
  const auto budget = static_cast<double>(n_batches) * static_cast<double>(batch_size);
  if (budget > static_cast<double>(space.cardinality()))
    throw ConfigError("budget: " + std::to_string(n_batches) + " batches of " + std::to_string(batch_size) +
                      " exceed the " + std::to_string(space.cardinality()) + " grid points");
}

CalibrationResult run_calibration(const CalibrationConfig& config, const ProgressFn& progress) {
  config.validate();
  Run run(config);
  return run.run(progress);
}

CalibrationResult resume_calibration(const CalibrationConfig& config, const ProgressFn& progress) {
  config.validate();
  if (config.output_dir.empty()) throw ConfigError("resume: no output directory");
  const auto path = config.output_dir / kCheckpointFile;
  if (!std::filesystem::exists(path)) throw ConfigError("resume: no checkpoint at " + path.string());
  Run run(config);
  run.restore(checkpoint_load(path));
  return run.run(progress);
}

std::string pack_scheduler_blob(const SamplerSet& samplers, const Scheduler& scheduler) {
  return samplers.save_state() + "\n" + scheduler.save_state();
}

void unpack_scheduler_blob(std::string_view blob, SamplerSet& samplers, Scheduler& scheduler) {
  const auto nl = blob.find('\n');
  if (nl == std::string_view::npos) throw FormatError("scheduler blob: missing sampler line", 1, 0);
  samplers.load_state(blob.substr(0, nl));
  scheduler.load_state(blob.substr(nl + 1));
}

std::string format_convergence_csv(const CalibrationState& state) {
  std::string out = "batch_index,evaluations_so_far,best_loss\n";
  const auto curve = state.best_by_batch();
  std::size_t evaluations = 0, r = 0;
  const auto& records = state.records();
  for (std::size_t b = 0; b < curve.size(); ++b) {
    while (r < records.size() && records[r].batch_index == static_cast<std::int64_t>(b)) ++r, ++evaluations;
    out += std::to_string(b) + "," + std::to_string(evaluations) + "," + format_real(curve[b]) + "\n";
  }
  return out;
}

std::vector<RecordSlot> record_slots(const CalibrationState& state) {
  std::vector<RecordSlot> slots;
  slots.reserve(state.size());
  std::size_t point = 0;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto b = state.records()[i].batch_index;
    point = (i > 0 && state.records()[i - 1].batch_index == b) ? point + 1 : 0;
    slots.push_back({b, point});
  }
  return slots;
}

double standard_error(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) throw DomainError("standard_error: no values");
  if (n == 1) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

std::uint64_t BenchmarkConfig::seed_for(std::size_t rep) const {
  return seeds.empty() ? base.master_seed + rep : seeds.at(rep);
}

void BenchmarkConfig::validate() const {
  if (strategies.empty()) throw ConfigError("benchmark.strategies: at least one strategy is required");
  if (repetitions < 1) throw ConfigError("benchmark.repetitions: must be >= 1");
  if (!seeds.empty() && seeds.size() != repetitions)
    throw ConfigError("benchmark.seeds: " + std::to_string(seeds.size()) + " seeds for " +
                      std::to_string(repetitions) + " repetitions");
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j)
      if (file_safe(strategies[i].name) == file_safe(strategies[j].name))
        throw ConfigError("benchmark.strategies[" + std::to_string(i) + "].name: '" + strategies[i].name +
                          "' collides with strategy " + std::to_string(j));
    auto c = base;
    c.strategy = strategies[i].strategy;
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("benchmark.strategies[" + std::to_string(i) + "]: " + e.what());
    }
  }
}

const StrategyCurves& BenchmarkResult::find(std::string_view name) const {
  for (const auto& s : strategies)
    if (s.name == name) return s;
  throw DomainError("benchmark result: no strategy named '" + std::string(name) + "'");
}

BenchmarkResult run_benchmark(const BenchmarkConfig& config,
                              const std::function<void(const BenchmarkProgress&)>& progress) {
  config.validate();
  const auto& root = config.base.output_dir;
  BenchmarkResult result;
  for (const auto& s : config.strategies) {
    StrategyCurves sc;
    sc.name = s.name;
    sc.strategy = s.strategy;
    for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
      auto c = config.base;
      c.strategy = s.strategy;
      c.master_seed = config.seed_for(rep);
      if (!root.empty()) c.output_dir = root / "runs" / file_safe(s.name) / ("rep" + std::to_string(rep));
      ProgressFn fn;
      if (progress)
        fn = [&](const BatchReport& r) { progress({s.name, rep, &r, 0.0}); };
      auto run = run_calibration(c, fn);
      sc.seeds.push_back(c.master_seed);
      sc.curves.push_back(run.state.best_by_batch());
      sc.final_best.push_back(sc.curves.back().back());
      sc.traces.push_back(std::move(run.trace));
      if (progress) progress({s.name, rep, nullptr, sc.final_best.back()});
    }
    const std::size_t n_b = sc.curves.front().size();
    std::vector<double> column(config.repetitions);
    for (std::size_t b = 0; b < n_b; ++b) {
      for (std::size_t r = 0; r < config.repetitions; ++r) column[r] = sc.curves[r][b];
      sc.mean_curve.push_back(std::accumulate(column.begin(), column.end(), 0.0) /
                              static_cast<double>(column.size()));
      sc.se_curve.push_back(standard_error(column));
    }
    sc.mean_final = sc.mean_curve.back();
    sc.se_final = sc.se_curve.back();
    result.strategies.push_back(std::move(sc));
  }
  if (!root.empty()) {
    std::filesystem::create_directories(root / "curves");
    write_text(root / "summary.csv", format_summary_csv(result));
    for (const auto& sc : result.strategies)
      write_text(root / "curves" / (file_safe(sc.name) + ".csv"), format_curve_csv(sc, config.base.batch_size));
  }
  return result;
}

std::string format_summary_csv(const BenchmarkResult& result) {
  std::string out = "strategy,rep,final_best,mean,se\n";
  for (const auto& s : result.strategies)
    for (std::size_t r = 0; r < s.final_best.size(); ++r)
      out += csv_field(s.name) + "," + std::to_string(r) + "," + format_real(s.final_best[r]) + "," + format_real(s.mean_final) +
             "," + format_real(s.se_final) + "\n";
  return out;
}

std::string format_curve_csv(const StrategyCurves& s, std::size_t batch_size) {
  std::string out = "batch_index,evaluations,mean,se";
  for (std::size_t r = 0; r < s.curves.size(); ++r) out += ",rep" + std::to_string(r);
  out += "\n";
  for (std::size_t b = 0; b < s.mean_curve.size(); ++b) {
    out += std::to_string(b) + "," + std::to_string((b + 1) * batch_size) + "," + format_real(s.mean_curve[b]) + "," +
           format_real(s.se_curve[b]);
    for (const auto& c : s.curves) out += "," + format_real(c[b]);
    out += "\n";
  }
  return out;
}

std::string file_safe(std::string_view name) {
  std::string out;
  for (char ch : name) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.' || ch == '-';
    if (ok) out += ch;
    else if (out.empty() || out.back() != '_') out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out.empty() ? "strategy" : out;
}

}  // namespace calib
