#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "calib/calibrator.hpp"

namespace calib {

/// Command-line values that take precedence over the file.
struct ConfigOverrides {
  std::optional<std::uint64_t> master_seed;
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::size_t> workers;
};

/// A parsed run file: everything needed to calibrate or benchmark.
struct RunSpec {
  CalibrationConfig calibration;
  /// Set when the file has a "benchmark" section.
  std::optional<BenchmarkConfig> benchmark;
  /// Real panel as ingested (column selection applied, no transforms).
  SeriesPanel raw;
  /// Real panel after preprocessing (the loss is built on it).
  SeriesPanel real;
  std::vector<std::string> data_columns;
  PreprocessConfig real_preprocessing;
  std::optional<ParamVector> true_params;
  /// The same document with every default filled in; parsing it again yields an identical spec.
  std::string resolved;
};

/// Applies the spec's column selection and real-data transforms to another raw panel.
SeriesPanel prepare_real(const RunSpec& spec, const SeriesPanel& raw);

/// Worker count when the file leaves it at 0: CALIB_WORKERS, else the hardware concurrency.
std::size_t default_workers();

/// Throws ConfigError naming the key path ("budget.n_batches: ...") for unknown keys,
/// wrong types, and invalid values. Relative data paths resolve against base_dir.
RunSpec parse_run_spec(std::string_view json_text, const std::filesystem::path& base_dir,
                       const ConfigOverrides& overrides = {});
RunSpec load_run_spec(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

}  // namespace calib
