#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "calib/calibrator.hpp"
#include "calib/checkpoint.hpp"
#include "calib/config.hpp"
#include "calib/text.hpp"

namespace fs = std::filesystem;
using namespace calib;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

constexpr const char* kConfigFile = "config.json";
constexpr const char* kRealFile = "real.csv";

// Usage problems (bad config, refused overwrite, missing inputs) exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("failed writing " + p.string());
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

void claim_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
  if (non_empty_dir(dir)) {
    if (!force) throw UsageError("output directory " + dir.string() + " is not empty (use --force to replace it)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

std::string real_text(double v) { return std::isfinite(v) ? format_real(v) : "inf"; }

struct RunOptions {
  std::string config;
  std::optional<std::uint64_t> master_seed;
  std::optional<std::string> output;
  std::optional<std::size_t> workers;
  bool force = false;
  bool resume = false;
  bool quiet = false;

  ConfigOverrides overrides() const {
    ConfigOverrides o;
    o.master_seed = master_seed;
    if (output) o.output_dir = *output;
    o.workers = workers;
    return o;
  }
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("config", o.config, "Run definition (JSON)")->required();
  cmd->add_option("--master-seed", o.master_seed, "Override seeds.master_seed");
  cmd->add_option("--output", o.output, "Override output.dir");
  cmd->add_option("--workers", o.workers, "Simulation threads (default: output.workers, CALIB_WORKERS, or all cores)")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--force", o.force, "Replace a non-empty output directory");
  cmd->add_flag("--quiet", o.quiet, "No per-batch progress lines");
}

RunSpec load_spec(const RunOptions& o) {
  if (!fs::exists(o.config)) throw UsageError("config file not found: " + o.config);
  return load_run_spec(o.config, o.overrides());
}

// Settings that may change between an interrupted run and its resumption.
Json comparable(Json j) {
  j["budget"].erase("n_batches");
  j["output"].erase("workers");
  return j;
}

int cmd_calibrate(const RunOptions& o) {
  const auto spec = load_spec(o);
  const auto& c = spec.calibration;
  if (spec.benchmark) throw UsageError("config has a benchmark section; use the benchmark command");
  const auto dir = c.output_dir;
  if (o.resume) {
    if (!fs::exists(dir / kCheckpointFile)) throw UsageError("nothing to resume: no checkpoint in " + dir.string());
    if (fs::exists(dir / kConfigFile) &&
        comparable(Json::parse(slurp(dir / kConfigFile))) != comparable(Json::parse(spec.resolved)))
      throw UsageError("config differs from the one the run in " + dir.string() + " was started with");
  } else {
    claim_output_dir(dir, o.force);
  }
  write_text(dir / kConfigFile, spec.resolved);
  write_panel_csv(spec.raw, dir / kRealFile);

  const auto total = c.n_batches;
  ProgressFn progress;
  if (!o.quiet)
    progress = [&](const BatchReport& r) {
      std::printf("batch %lld/%zu arm=%s batch_min=%s best=%s%s\n", static_cast<long long>(r.batch + 1), total,
                  std::string(to_string(r.arm)).c_str(), real_text(r.batch_min_loss).c_str(),
                  real_text(r.best_loss).c_str(),
                  r.failed_points ? (" failed=" + std::to_string(r.failed_points)).c_str() : "");
      std::fflush(stdout);
    };
  const auto result = o.resume ? resume_calibration(c, progress) : run_calibration(c, progress);
  const auto best = result.state.best();
  std::printf("best loss %s at", real_text(best.loss).c_str());
  const auto& p = result.state.records()[best.index].params;
  const auto names = c.space.names();
  for (std::size_t i = 0; i < p.size(); ++i) std::printf(" %s=%s", names[i].c_str(), format_real(p[i]).c_str());
  std::printf(" (%zu evaluations, output in %s)\n", result.state.size(), dir.string().c_str());
  if (!result.warnings.empty())
    std::fprintf(stderr, "%zu warnings, see %s\n", result.warnings.size(), (dir / kEventsFile).string().c_str());
  return kOk;
}

int cmd_benchmark(const RunOptions& o) {
  const auto spec = load_spec(o);
  if (!spec.benchmark) throw UsageError("config has no benchmark section");
  const auto& b = *spec.benchmark;
  const auto root = b.base.output_dir;
  claim_output_dir(root, o.force);
  write_text(root / kConfigFile, spec.resolved);
  write_panel_csv(spec.raw, root / kRealFile);

  const auto runs = b.strategies.size() * b.repetitions;
  std::size_t done = 0;
  const auto result = run_benchmark(b, [&](const BenchmarkProgress& p) {
    if (p.batch || o.quiet) return;
    ++done;
    std::printf("run %zu/%zu strategy=%s rep=%zu final_best=%s\n", done, runs, p.strategy.c_str(), p.rep,
                real_text(p.final_best).c_str());
    std::fflush(stdout);
  });

  // Each run directory gets a standalone config that reproduces it through `calibrate`.
  const auto resolved = Json::parse(spec.resolved);
  for (std::size_t s = 0; s < b.strategies.size(); ++s) {
    for (std::size_t rep = 0; rep < b.repetitions; ++rep) {
      auto cfg = resolved;
      cfg.erase("benchmark");
      auto strategy = resolved["benchmark"]["strategies"][s];
      strategy.erase("name");
      cfg["strategy"] = strategy;
      cfg["seeds"]["master_seed"] = b.seed_for(rep);
      const auto dir = root / "runs" / file_safe(b.strategies[s].name) / ("rep" + std::to_string(rep));
      cfg["output"]["dir"] = dir.string();
      write_text(dir / kConfigFile, cfg.dump(2) + "\n");
      write_panel_csv(spec.raw, dir / kRealFile);
    }
  }

  std::printf("%-20s %14s %14s\n", "strategy", "mean final", "s.e.");
  for (const auto& s : result.strategies)
    std::printf("%-20s %14s %14s\n", s.name.c_str(), real_text(s.mean_final).c_str(), real_text(s.se_final).c_str());
  std::printf("summary in %s\n", (root / "summary.csv").string().c_str());
  return kOk;
}

std::string q_text(const std::optional<double>& q) { return q ? format_real(*q) : "NA"; }

struct AnalyzeOptions {
  std::vector<std::string> traces;
  bool contextual = false;
  bool per_trace_median = false;
  std::string output = "q_table.csv";
  bool force = false;
};

int cmd_analyze(const AnalyzeOptions& o) {
  if (o.traces.empty()) throw UsageError("analyze needs at least one trace file");
  std::vector<Trace> traces;
  for (const auto& path : o.traces) {
    if (!fs::exists(path)) throw UsageError("trace file not found: " + path);
    try {
      traces.push_back(read_trace_csv(path));
    } catch (const FormatError& e) {
      throw FormatError(path + ": " + e.what(), e.line(), e.offset());
    }
  }
  if (fs::exists(o.output) && !o.force) throw UsageError(o.output + " exists (use --force to replace it)");

  const auto arms = arms_in(traces);
  const auto single = offline_q(history_of(traces.front(), arms), arms.size());
  std::vector<std::pair<std::size_t, double>> pooled;
  for (const auto& t : traces) {
    const auto h = history_of(t, arms);
    pooled.insert(pooled.end(), h.begin(), h.end());
  }
  const auto global = offline_q(pooled, arms.size());
  std::optional<ContextualQ> ctx;
  if (o.contextual)
    ctx = offline_q_contextual(traces, arms, o.per_trace_median ? MedianMode::PerTrace : MedianMode::Pooled);

  std::string csv = o.contextual ? "arm,single_run,global,high,low\n" : "arm,single_run,global\n";
  std::printf(o.contextual ? "%-6s %12s %12s %12s %12s\n" : "%-6s %12s %12s\n", "arm", "single run", "global", "high",
              "low");
  for (std::size_t a = 0; a < arms.size(); ++a) {
    const std::string name(to_string(arms[a]));
    csv += name + "," + q_text(single[a]) + "," + q_text(global[a]);
    if (ctx) {
      csv += "," + q_text(ctx->high[a]) + "," + q_text(ctx->low[a]);
      std::printf("%-6s %12s %12s %12s %12s\n", name.c_str(), q_text(single[a]).c_str(), q_text(global[a]).c_str(),
                  q_text(ctx->high[a]).c_str(), q_text(ctx->low[a]).c_str());
    } else {
      std::printf("%-6s %12s %12s\n", name.c_str(), q_text(single[a]).c_str(), q_text(global[a]).c_str());
    }
    csv += "\n";
  }
  if (ctx) {
    std::printf("context split at L_best median");
    for (double m : ctx->medians) std::printf(" %s", format_real(m).c_str());
    std::printf("\n");
  }
  write_text(o.output, csv);
  return kOk;
}

struct ExportOptions {
  std::string real_csv;
  std::string run_dir;
  std::optional<std::string> output;
  bool force = false;
};

int cmd_export_moments(const ExportOptions& o) {
  const fs::path run_dir = o.run_dir;
  if (!fs::exists(run_dir / kCheckpointFile)) throw UsageError("no checkpoint in " + run_dir.string());
  if (!fs::exists(run_dir / kConfigFile)) throw UsageError("no " + std::string(kConfigFile) + " in " + run_dir.string());
  if (!fs::exists(o.real_csv)) throw UsageError("real data file not found: " + o.real_csv);
  const fs::path out_dir = o.output ? fs::path(*o.output) : run_dir / "export";
  claim_output_dir(out_dir, o.force);

  ConfigOverrides ov;
  ov.output_dir = run_dir;
  ov.workers = 1;
  const auto spec = load_run_spec(run_dir / kConfigFile, ov);
  const auto& c = spec.calibration;
  const auto cp = checkpoint_load(run_dir / kCheckpointFile);
  if (cp.state.master_seed() != c.master_seed || !(cp.state.space() == c.space))
    throw UsageError("checkpoint in " + run_dir.string() + " does not match its config");
  const auto real = prepare_real(spec, read_panel_csv(o.real_csv));

  const auto best = cp.state.best();
  if (!std::isfinite(best.loss)) throw std::runtime_error("run has no successful evaluation");
  const auto& rec = cp.state.records()[best.index];
  const auto slot = record_slots(cp.state)[best.index];
  const std::size_t members = rec.ensemble_losses.size();

  std::vector<SeriesPanel> sims;
  for (std::size_t e = 0; e < members; ++e) {
    auto panel = c.model->simulate(rec.params, c.n_steps, c.burn_in,
                                   derive_seed(c.master_seed, static_cast<std::uint64_t>(slot.batch), slot.point, e));
    sims.push_back(preprocess(panel, c.simulated_preprocessing));
  }

  const auto real_m = panel_moments(real);
  const auto weights = relative_weights(real_m, [&] {
    const auto* m = dynamic_cast<const MomentsLoss*>(c.loss.get());
    return m ? m->weights().floor : kDefaultMomentFloor;
  }());
  std::vector<std::vector<MomentRow>> sim_m;
  for (const auto& s : sims) sim_m.push_back(panel_moments(s));

  std::string csv = "dimension,moment,real";
  for (std::size_t e = 0; e < members; ++e) csv += ",sim_" + std::to_string(e);
  csv += ",sim_mean,weight\n";
  const auto& names = moment_names();
  for (std::size_t d = 0; d < real.dims(); ++d) {
    const auto dim = real.names().empty() ? std::to_string(d) : real.names()[d];
    for (std::size_t i = 0; i < kMomentCount; ++i) {
      csv += dim + "," + std::string(names[i]) + "," + format_real(real_m[d][i]);
      double mean = 0.0;
      for (std::size_t e = 0; e < members; ++e) {
        csv += "," + format_real(sim_m[e][d][i]);
        mean += sim_m[e][d][i];
      }
      csv += "," + format_real(mean / static_cast<double>(members)) + "," + format_real(weights.weights[d][i]) + "\n";
    }
  }
  write_text(out_dir / "moments.csv", csv);
  write_panel_csv(real, out_dir / "real_series.csv");
  for (std::size_t e = 0; e < members; ++e)
    write_panel_csv(sims[e], out_dir / ("simulated_series_" + std::to_string(e) + ".csv"));

  std::vector<double> member_losses;
  for (const auto& s : sims) member_losses.push_back(c.loss->member_loss(s));
  const double recomputed = ensemble_mean(member_losses);
  std::printf("best record %zu (batch %lld, point %zu): checkpoint loss %s, recomputed %s\n", best.index,
              static_cast<long long>(slot.batch), slot.point, format_real(best.loss).c_str(),
              format_real(recomputed).c_str());
  std::printf("wrote %s\n", out_dir.string().c_str());
  if (std::abs(recomputed - best.loss) > 1e-9 * std::max(1.0, std::abs(best.loss))) {
    std::fprintf(stderr, "error: recomputed loss does not match the checkpoint (different real data?)\n");
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agent-based model calibration with surrogate samplers and a bandit scheduler"};
  app.require_subcommand(1);

  RunOptions calib_opts;
  auto* calibrate = app.add_subcommand("calibrate", "Run one calibration");
  add_run_options(calibrate, calib_opts);
  calibrate->add_flag("--resume", calib_opts.resume, "Continue from the checkpoint in the output directory");

  RunOptions bench_opts;
  auto* benchmark = app.add_subcommand("benchmark", "Run every strategy of a benchmark config");
  add_run_options(benchmark, bench_opts);

  AnalyzeOptions an;
  auto* analyze = app.add_subcommand("analyze", "Offline Q table from scheduler traces");
  analyze->add_option("traces", an.traces, "trace.csv files");
  analyze->add_flag("--contextual", an.contextual, "Split by previous best loss above/below the median");
  analyze->add_flag("--per-trace-median", an.per_trace_median, "Median per trace instead of pooled");
  analyze->add_option("--output", an.output, "CSV to write")->capture_default_str();
  analyze->add_flag("--force", an.force, "Replace an existing output file");

  ExportOptions ex;
  auto* exp = app.add_subcommand("export-moments", "Moments and series of the best point against real data");
  exp->add_option("real_csv", ex.real_csv, "Real data CSV (raw; the run's preprocessing is applied)")->required();
  exp->add_option("run_dir", ex.run_dir, "Calibration output directory")->required();
  exp->add_option("--output", ex.output, "Directory to write (default: <run_dir>/export)");
  exp->add_flag("--force", ex.force, "Replace an existing export");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*calibrate) return cmd_calibrate(calib_opts);
    if (*benchmark) return cmd_benchmark(bench_opts);
    if (*analyze) return cmd_analyze(an);
    if (*exp) return cmd_export_moments(ex);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const CalibrationAborted& e) {
    std::fprintf(stderr, "error: run aborted at batch %lld: %s\n", static_cast<long long>(e.batch()), e.what());
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kConfigError;
}
