#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "calib/core.hpp"
#include "calib/losses.hpp"

namespace calib {

/// Black-box simulator: (params, n_steps, burn_in, seed) -> D x n_steps panel.
/// Implementations must be pure functions of their arguments and thread-safe.
class Model {
 public:
  virtual ~Model() = default;
  virtual std::string_view name() const = 0;
  /// Names of the calibrated parameters, in ParamVector order.
  virtual const std::vector<std::string>& param_names() const = 0;
  virtual std::size_t output_dims() const = 0;
  virtual SeriesPanel simulate(const ParamVector& params, std::size_t n_steps, std::size_t burn_in,
                               std::uint64_t seed) const = 0;

 protected:
  void check_arity(const ParamVector& params) const;
};

struct BeliefType {
  double g = 0.0;  ///< trend coefficient
  double b = 0.0;  ///< bias
};

struct BrockHommesConfig {
  double gross_return = 1.01;
  std::vector<BeliefType> types{{0.0, 0.0}, {1.1, 0.2}, {0.9, -0.2}, {1.21, 0.0}};
  double beta = 3.6;  ///< intensity of choice
  double memory = 0.0;
  double noise_sd = 0.04;
  double x0 = 0.1;  ///< initial deviation, used for the three pre-sample lags
  /// Calibrated entries by name: g1..gH, b1..bH, beta.
  std::vector<std::string> calibrated{"g2", "b2", "g3", "b3", "beta"};
};

inline constexpr double kExplosionBound = 1e9;
inline constexpr double kMinShare = 1e-15;  ///< lower bound on a BH4 type fraction

struct BrockHommesPath {
  std::vector<double> x;                       ///< returned steps
  std::vector<std::vector<double>> fractions;  ///< per returned step, one share per type
};

class BrockHommesModel final : public Model {
 public:
  explicit BrockHommesModel(BrockHommesConfig config = {});
  std::string_view name() const override { return "bh4"; }
  const std::vector<std::string>& param_names() const override { return config_.calibrated; }
  std::size_t output_dims() const override { return 1; }
  SeriesPanel simulate(const ParamVector& params, std::size_t n_steps, std::size_t burn_in,
                       std::uint64_t seed) const override;
  /// Same recursion, also returning the type fractions.
  BrockHommesPath simulate_detailed(const ParamVector& params, std::size_t n_steps, std::size_t burn_in,
                                    std::uint64_t seed) const;

  const BrockHommesConfig& config() const { return config_; }
  /// Config with the calibrated entries replaced by `params`.
  BrockHommesConfig with_params(const ParamVector& params) const;
  /// Current values of the calibrated entries.
  ParamVector default_params() const;

 private:
  BrockHommesConfig config_;
};

struct SirConfig {
  std::size_t nodes = 1000;
  std::size_t degree = 10;  ///< ring degree k (even)
  double rewire = 0.1;      ///< p
  double infect = 0.05;     ///< per-contact infection probability
  double recover = 0.1;     ///< gamma
  double initial_infected = 0.01;
  std::vector<std::string> calibrated{"beta", "gamma", "p"};
};

/// Undirected simple graph as sorted adjacency lists.
struct Graph {
  std::vector<std::vector<std::uint32_t>> adj;
  std::size_t edge_count() const;
};

/// Watts-Strogatz small world: ring lattice of degree k, each ring edge rewired with probability p.
Graph watts_strogatz(std::size_t n, std::size_t k, double p, Rng& rng);

class SirModel final : public Model {
 public:
  explicit SirModel(SirConfig config = {});
  std::string_view name() const override { return "sir"; }
  const std::vector<std::string>& param_names() const override { return config_.calibrated; }
  std::size_t output_dims() const override { return 3; }
  /// S, I, R fractions per step after burn_in discarded steps.
  SeriesPanel simulate(const ParamVector& params, std::size_t n_steps, std::size_t burn_in,
                       std::uint64_t seed) const override;

  const SirConfig& config() const { return config_; }
  SirConfig with_params(const ParamVector& params) const;
  ParamVector default_params() const;

 private:
  SirConfig config_;
};

enum class Landscape { Sphere, Multimodal };

/// Analytic test functions emitted as constant series (Euclidean loss vs zeros equals the value).
class SyntheticModel final : public Model {
 public:
  SyntheticModel(Landscape kind, std::size_t dims, double ripple_amplitude = 0.05, double ripple_frequency = 5.0);
  std::string_view name() const override { return kind_ == Landscape::Sphere ? "sphere" : "multimodal"; }
  const std::vector<std::string>& param_names() const override { return names_; }
  std::size_t output_dims() const override { return 1; }
  SeriesPanel simulate(const ParamVector& params, std::size_t n_steps, std::size_t burn_in,
                       std::uint64_t seed) const override;
  double value(std::span<const double> x) const;

 private:
  Landscape kind_;
  std::vector<std::string> names_;
  double amplitude_;
  double frequency_;
};

Landscape landscape_from_string(std::string_view name);

/// Runs a user executable per simulation. The child receives one line on stdin,
///   seed=<u64> n_steps=<n> burn_in=<n> <name>=<value> ...
/// and must print a CSV panel (header + n_steps rows) on stdout and exit 0.
class ExternalModel final : public Model {
 public:
  ExternalModel(std::vector<std::string> argv, std::vector<std::string> param_names, std::size_t output_dims,
                std::chrono::milliseconds timeout = std::chrono::seconds(60));
  std::string_view name() const override { return "external"; }
  const std::vector<std::string>& param_names() const override { return names_; }
  std::size_t output_dims() const override { return dims_; }
  SeriesPanel simulate(const ParamVector& params, std::size_t n_steps, std::size_t burn_in,
                       std::uint64_t seed) const override;

 private:
  std::vector<std::string> argv_;
  std::vector<std::string> names_;
  std::size_t dims_;
  std::chrono::milliseconds timeout_;
};

/// Seed reserved for generating pseudo-real data; never used by calibration evaluations.
std::uint64_t held_out_seed(std::uint64_t master_seed);

struct PseudoTrueTask {
  SeriesPanel real;
  ParameterSpace space;
  ParamVector true_params;
};

/// Simulates `model` at `true_params` (which must be a grid point of `space`) with a held-out seed.
PseudoTrueTask make_pseudo_true_task(const Model& model, const ParameterSpace& space, const ParamVector& true_params,
                                     std::size_t n_steps, std::size_t burn_in, std::uint64_t seed);

}  // namespace calib
