#pragma once

#include <filesystem>
#include <string>

#include "calib/core.hpp"
#include "calib/text.hpp"

namespace calib {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  CalibrationState state;
  /// Opaque scheduler/sampler bytes; stored hex-encoded so the file stays line-oriented text.
  std::string scheduler_state;
};

/// Serializes to the versioned text format. Reals use the shortest round-trip representation.
std::string format_checkpoint(const CalibrationState& state, std::string_view scheduler_state);
Checkpoint parse_checkpoint(std::string_view text);

/// Writes atomically (temporary file + rename).
void checkpoint_save(const CalibrationState& state, std::string_view scheduler_state,
                     const std::filesystem::path& path);
Checkpoint checkpoint_load(const std::filesystem::path& path);

}  // namespace calib
