#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "calib/errors.hpp"

namespace calib {

using Rng = std::mt19937_64;

/// One calibrated parameter: a closed interval discretized on a regular grid.
struct ParameterDim {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  double step = 0.01;

  /// Number of grid points lower + k*step that lie inside [lower, upper].
  std::int64_t grid_count() const;
  /// Coordinate of grid point k (clamped so the last point never exceeds upper).
  double value_at(std::int64_t k) const;
  /// Nearest grid index of a (clipped) raw value; exact ties go to the lower index.
  std::int64_t nearest_index(double raw) const;
  double range() const { return upper - lower; }
};

/// Builds a dimension with the default grid of 100 steps across the range.
ParameterDim make_dim(std::string name, double lower, double upper);
ParameterDim make_dim(std::string name, double lower, double upper, double step);

/// Grid coordinates of a point, one integer per dimension. Used as a dedup key.
using GridKey = std::vector<std::int64_t>;

struct GridKeyHash {
  std::size_t operator()(const GridKey& key) const noexcept;
};

struct ParamVector {
  std::vector<double> coords;

  std::size_t size() const { return coords.size(); }
  double operator[](std::size_t i) const { return coords[i]; }
  bool operator==(const ParamVector&) const = default;
};

class ParameterSpace {
 public:
  ParameterSpace() = default;
  explicit ParameterSpace(std::vector<ParameterDim> dims);

  std::size_t size() const { return dims_.size(); }
  const ParameterDim& operator[](std::size_t i) const { return dims_[i]; }
  const std::vector<ParameterDim>& dims() const { return dims_; }
  std::vector<std::string> names() const;

  /// Total number of grid points, saturating at INT64_MAX.
  std::int64_t cardinality() const;

  GridKey key_of(const ParamVector& p) const;
  ParamVector point_at(const GridKey& key) const;

  /// True when p has the right length and every coordinate is an in-bounds grid point.
  bool contains(const ParamVector& p) const;

  /// Maps a point to the unit cube (used by surrogates).
  std::vector<double> normalize(const ParamVector& p) const;

  bool operator==(const ParameterSpace& other) const;

 private:
  std::vector<ParameterDim> dims_;
};

/// Clip each coordinate to its bounds and round to the nearest grid point.
ParamVector snap_to_grid(const ParameterSpace& space, std::span<const double> raw);

enum class SamplerId : std::uint8_t { Halton, RandomForest, Boosted, GaussianProcess, BestBatch, Random };

std::string_view to_string(SamplerId id);
SamplerId sampler_id_from_string(std::string_view text);
std::vector<SamplerId> all_sampler_ids();

struct EvaluationRecord {
  ParamVector params;
  double loss = 0.0;  ///< mean of ensemble_losses; +inf marks a failed simulation
  std::int64_t batch_index = 0;
  SamplerId sampler = SamplerId::Halton;
  std::vector<double> ensemble_losses;

  bool failed() const;
};

/// Mean of per-seed losses, accumulated in index order so the result is reproducible.
double ensemble_mean(std::span<const double> losses);

struct BestLoss {
  double loss;
  std::size_t index;  ///< position of the first record attaining the minimum
};

/// Append-only evaluation history of one calibration.
class CalibrationState {
 public:
  CalibrationState() = default;
  CalibrationState(ParameterSpace space, std::uint64_t master_seed);

  const ParameterSpace& space() const { return space_; }
  const std::vector<EvaluationRecord>& records() const { return records_; }
  std::uint64_t master_seed() const { return master_seed_; }
  std::int64_t batch_count() const { return batch_count_; }

  bool empty() const { return records_.empty(); }
  std::size_t size() const { return records_.size(); }

  /// Throws DomainError on a duplicate point, an off-grid point, or a record whose
  /// loss is not the mean of its ensemble losses.
  void append(EvaluationRecord record);
  void close_batch() { ++batch_count_; }

  bool contains(const ParamVector& p) const;
  bool contains(const GridKey& key) const { return keys_.count(key) != 0; }

  /// Minimum over records of loss; throws InsufficientDataError when empty.
  BestLoss best() const;

  /// Cumulative minimum of the loss after each batch (one entry per closed batch).
  std::vector<double> best_by_batch() const;

  /// Records whose loss is finite (failed simulations are left out).
  std::vector<const EvaluationRecord*> finite_records() const;

  bool operator==(const CalibrationState& other) const;

 private:
  ParameterSpace space_;
  std::vector<EvaluationRecord> records_;
  std::uint64_t master_seed_ = 0;
  std::int64_t batch_count_ = 0;
  std::unordered_set<GridKey, GridKeyHash> keys_;

  friend CalibrationState restore_state(ParameterSpace, std::uint64_t, std::int64_t,
                                        std::vector<EvaluationRecord>);
};

/// Rebuilds a state from persisted pieces (validates every record).
CalibrationState restore_state(ParameterSpace space, std::uint64_t master_seed, std::int64_t batch_count,
                               std::vector<EvaluationRecord> records);

double best_loss(const CalibrationState& state);

/// Stable 64-bit seed for one (batch, point, ensemble member) evaluation.
std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t batch_index, std::uint64_t point_index,
                          std::uint64_t ensemble_index);

/// Named RNG streams that are not tied to a model evaluation.
enum class Stream : std::uint64_t { Scheduler = 1, Sampler = 2, Dedup = 3, Task = 4 };

/// RNG for a per-batch auxiliary stream; independent of evaluation seeds.
Rng make_stream(std::uint64_t master_seed, std::uint64_t batch_index, Stream stream);

/// Uniform real in [0, 1) built from the top 53 bits; identical on every platform.
double uniform01(Rng& rng);
/// Uniform integer in [0, n).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);
/// Standard normal draw (polar method).
double standard_normal(Rng& rng);

}  // namespace calib
