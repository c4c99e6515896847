#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calib/errors.hpp"

namespace calib {

/// D series of T steps each, stored series-contiguous. Entries are always finite.
class SeriesPanel {
 public:
  SeriesPanel() = default;
  SeriesPanel(std::size_t dims, std::size_t steps, std::vector<double> values, std::vector<std::string> names = {});
  /// Builds a panel from one vector per dimension (all the same length).
  static SeriesPanel from_series(const std::vector<std::vector<double>>& series, std::vector<std::string> names = {});

  std::size_t dims() const { return dims_; }
  std::size_t steps() const { return steps_; }
  bool empty() const { return dims_ == 0 || steps_ == 0; }

  std::span<const double> series(std::size_t d) const { return {values_.data() + d * steps_, steps_}; }
  double at(std::size_t d, std::size_t t) const { return values_[d * steps_ + t]; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const SeriesPanel&) const = default;

 private:
  std::size_t dims_ = 0;
  std::size_t steps_ = 0;
  std::vector<double> values_;
  std::vector<std::string> names_;
};

inline constexpr std::size_t kMaxLag = 5;
inline constexpr std::size_t kMomentCount = 18;
inline constexpr std::size_t kMinMomentLength = 12;

/// Per series: mean, variance, skewness, excess kurtosis, acf lags 1..5; then the
/// same nine statistics of the first-differenced series.
using MomentRow = std::array<double, kMomentCount>;

const std::array<std::string_view, kMomentCount>& moment_names();

MomentRow compute_moments(std::span<const double> series);

/// Diagonal weights per dimension for the moments loss.
struct WeightSpec {
  std::vector<MomentRow> weights;
  double floor = 1e-12;
};

inline constexpr double kDefaultMomentFloor = 1e-12;

/// w_i = 1 / (18 * max(m_i^2, floor^2)) from the real moments: the distance is the mean
/// relative squared error over the 18 moments.
WeightSpec relative_weights(std::span<const MomentRow> real_moments, double floor = kDefaultMomentFloor);
WeightSpec relative_weights(const SeriesPanel& real, double floor = kDefaultMomentFloor);

/// (1/D) sum_d g_d^T W_d g_d for a single simulated panel.
double moments_distance(std::span<const MomentRow> real_moments, std::span<const MomentRow> sim_moments,
                        const WeightSpec& weights);

/// Ensemble mean of the per-member moments distance.
double moments_loss(const SeriesPanel& real, std::span<const SeriesPanel> simulated, const WeightSpec& weights);

/// Ensemble mean of the root-mean-square deviation over all D*T entries.
double euclidean_loss(const SeriesPanel& real, std::span<const SeriesPanel> simulated);

std::vector<MomentRow> panel_moments(const SeriesPanel& panel);

/// A loss bound to one real panel, evaluated one ensemble member at a time.
class LossFunction {
 public:
  virtual ~LossFunction() = default;
  virtual std::string_view name() const = 0;
  virtual double member_loss(const SeriesPanel& simulated) const = 0;
  const SeriesPanel& real() const { return real_; }

 protected:
  explicit LossFunction(SeriesPanel real) : real_(std::move(real)) {}
  SeriesPanel real_;
};

class MomentsLoss final : public LossFunction {
 public:
  explicit MomentsLoss(SeriesPanel real, double floor = kDefaultMomentFloor);
  std::string_view name() const override { return "moments"; }
  double member_loss(const SeriesPanel& simulated) const override;
  const std::vector<MomentRow>& real_moments() const { return real_moments_; }
  const WeightSpec& weights() const { return weights_; }

 private:
  std::vector<MomentRow> real_moments_;
  WeightSpec weights_;
};

class EuclideanLoss final : public LossFunction {
 public:
  explicit EuclideanLoss(SeriesPanel real) : LossFunction(std::move(real)) {}
  std::string_view name() const override { return "euclidean"; }
  double member_loss(const SeriesPanel& simulated) const override;
};

struct HpResult {
  std::vector<double> trend;
  std::vector<double> cycle;
};

inline constexpr double kDefaultHpLambda = 1600.0;

/// Hodrick-Prescott decomposition: trend minimizes |x - trend|^2 + lambda |D trend|^2. Computed with a
/// banded LDL^T solve of the equivalent (n-2)-dimensional system in the second differences.
HpResult hp_filter(std::span<const double> series, double lambda = kDefaultHpLambda);

/// Smoothing parameter for a sampling frequency of `observations_per_quarter`
/// (1600 * ratio^4: 6.25 for annual data, 129600 for monthly).
double hp_lambda_for_frequency(double observations_per_quarter);

struct Transform {
  enum class Kind { Identity, Log, HpCycle, LogDifference, DeMean };
  Kind kind = Kind::Identity;
  double lambda = kDefaultHpLambda;

  /// "identity", "log", "hp_cycle", "hp_cycle:<lambda>", "log_difference", "de_mean".
  static Transform parse(std::string_view text);
  std::string to_string() const;
  bool operator==(const Transform&) const = default;
};

/// Ordered transforms per dimension; an empty config leaves the panel unchanged.
struct PreprocessConfig {
  std::vector<std::vector<Transform>> per_dim;
  bool empty() const;
};

SeriesPanel preprocess(const SeriesPanel& raw, const PreprocessConfig& config);

/// CSV with a header row of dimension names and one row per time step.
SeriesPanel parse_panel_csv(std::string_view text);
SeriesPanel read_panel_csv(const std::filesystem::path& path);
std::string format_panel_csv(const SeriesPanel& panel);
void write_panel_csv(const SeriesPanel& panel, const std::filesystem::path& path);

}  // namespace calib
