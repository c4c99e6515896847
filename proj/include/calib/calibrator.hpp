#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "calib/core.hpp"
#include "calib/losses.hpp"
#include "calib/models.hpp"
#include "calib/samplers.hpp"
#include "calib/scheduler.hpp"

namespace calib {

struct CalibrationConfig {
  std::shared_ptr<const Model> model;
  std::shared_ptr<const LossFunction> loss;
  ParameterSpace space;
  /// Applied to every simulated panel before the loss (the real panel is transformed by the caller).
  PreprocessConfig simulated_preprocessing;
  StrategyConfig strategy;
  SamplerOptions samplers;

  std::size_t batch_size = 4;
  std::size_t ensemble_size = 5;
  std::size_t n_batches = 250;
  std::size_t n_steps = 800;
  std::size_t burn_in = 300;
  std::uint64_t master_seed = 0;
  /// Loss recorded for a point whose simulation failed. +inf keeps it out of surrogate training.
  double failure_penalty = std::numeric_limits<double>::infinity();

  std::size_t workers = 1;
  /// Empty: keep everything in memory.
  std::filesystem::path output_dir;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct BatchReport {
  std::int64_t batch = 0;
  SamplerId arm = SamplerId::Halton;
  double batch_min_loss = 0.0;
  double best_loss = 0.0;
  std::size_t failed_points = 0;
  std::size_t evaluations = 0;  ///< records so far
};

using ProgressFn = std::function<void(const BatchReport&)>;

struct CalibrationResult {
  CalibrationState state;
  Trace trace;
  /// Fallbacks, dedup fills and simulation failures, in the order they happened.
  std::vector<std::string> warnings;
  std::size_t degenerate_rewards = 0;
};

/// Raised when every point of a batch failed to simulate.
class CalibrationAborted : public std::runtime_error {
 public:
  CalibrationAborted(const std::string& what, std::int64_t batch) : std::runtime_error(what), batch_(batch) {}
  std::int64_t batch() const noexcept { return batch_; }

 private:
  std::int64_t batch_;
};

inline constexpr const char* kCheckpointFile = "checkpoint.txt";
inline constexpr const char* kTraceFile = "trace.csv";
inline constexpr const char* kConvergenceFile = "convergence.csv";
inline constexpr const char* kEventsFile = "events.log";

/// Runs from scratch. With an output_dir, writes the checkpoint, trace and convergence files after every batch.
CalibrationResult run_calibration(const CalibrationConfig& config, const ProgressFn& progress = {});

/// Continues the run stored in config.output_dir. The checkpoint must belong to the same space and seed.
CalibrationResult resume_calibration(const CalibrationConfig& config, const ProgressFn& progress = {});

/// Trace scheduler and sampler state share one opaque checkpoint blob.
std::string pack_scheduler_blob(const SamplerSet& samplers, const Scheduler& scheduler);
void unpack_scheduler_blob(std::string_view blob, SamplerSet& samplers, Scheduler& scheduler);

std::string format_convergence_csv(const CalibrationState& state);

/// Batch and point position of every record, recovered from the append order.
struct RecordSlot {
  std::int64_t batch;
  std::size_t point;
};
std::vector<RecordSlot> record_slots(const CalibrationState& state);

/// Sample standard deviation over sqrt(n); 0 for a single value.
double standard_error(std::span<const double> values);

struct BenchmarkStrategy {
  std::string name;  ///< label used for files and tables; defaults to the strategy label
  StrategyConfig strategy;
};

struct BenchmarkConfig {
  CalibrationConfig base;
  std::vector<BenchmarkStrategy> strategies;
  std::size_t repetitions = 3;
  /// Master seed per repetition, shared by all strategies. Empty: base.master_seed + rep.
  std::vector<std::uint64_t> seeds;

  std::uint64_t seed_for(std::size_t rep) const;
  void validate() const;
};

struct StrategyCurves {
  std::string name;
  StrategyConfig strategy;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> curves;  ///< cumulative best per batch, one per repetition
  std::vector<double> mean_curve;
  std::vector<double> se_curve;
  std::vector<double> final_best;
  double mean_final = 0.0;
  double se_final = 0.0;
  std::vector<Trace> traces;
};

struct BenchmarkResult {
  std::vector<StrategyCurves> strategies;
  const StrategyCurves& find(std::string_view name) const;
};

struct BenchmarkProgress {
  std::string strategy;
  std::size_t rep = 0;
  const BatchReport* batch = nullptr;  ///< null when a run finished
  double final_best = 0.0;
};

/// Runs every strategy for every repetition. With base.output_dir set, each run writes to
/// runs/<name>/rep<r>/, plus summary.csv and curves/<name>.csv at the root.
BenchmarkResult run_benchmark(const BenchmarkConfig& config,
                              const std::function<void(const BenchmarkProgress&)>& progress = {});

std::string format_summary_csv(const BenchmarkResult& result);
std::string format_curve_csv(const StrategyCurves& curves, std::size_t batch_size);
/// Name usable as a directory: runs of characters outside [A-Za-z0-9_.-] become '_'.
std::string file_safe(std::string_view name);

}  // namespace calib
