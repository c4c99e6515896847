#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "calib/core.hpp"
#include "calib/surrogates.hpp"

namespace calib {

/// Everything a sampler may look at when proposing one batch.
struct SamplerContext {
  const CalibrationState& state;
  std::size_t batch_size;
  Rng& rng;
  std::vector<std::string>* warnings = nullptr;  ///< fit failures and fallbacks are reported here

  void warn(std::string message) const;
};

class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual SamplerId id() const = 0;
  /// Returns exactly ctx.batch_size distinct, novel grid points.
  virtual std::vector<ParamVector> propose(const SamplerContext& ctx) = 0;
};

/// Van der Corput radical inverse of `index` in `base`.
double radical_inverse(std::uint64_t index, std::uint32_t base);
std::vector<std::uint32_t> first_primes(std::size_t count);
/// Point `index` of the d-dimensional Halton sequence in [0,1)^d.
std::vector<double> halton_point(std::uint64_t index, std::size_t d);

/// Up to `count` uniformly drawn grid points that are neither evaluated nor in `taken`.
std::vector<ParamVector> uniform_novel_points(const CalibrationState& state, std::size_t count, Rng& rng,
                                              std::vector<GridKey> taken = {});

class HaltonSampler final : public Sampler {
 public:
  explicit HaltonSampler(std::uint64_t start_index = 1) : cursor_(start_index) {}
  SamplerId id() const override { return SamplerId::Halton; }
  std::vector<ParamVector> propose(const SamplerContext& ctx) override;

  /// Next unused sequence index.
  std::uint64_t cursor() const { return cursor_; }
  void set_cursor(std::uint64_t c) { cursor_ = c; }

 private:
  std::uint64_t cursor_;
};

class RandomSampler final : public Sampler {
 public:
  SamplerId id() const override { return SamplerId::Random; }
  std::vector<ParamVector> propose(const SamplerContext& ctx) override;
};

struct BestBatchOptions {
  double delta = 0.05;
  std::size_t elite_factor = 5;
  double subset_fraction = 1.0;  ///< probability that a coordinate is perturbed (at least one always is)
  bool require_distinct = true;  ///< false only for tests: allows outputs equal to elites or to each other
  std::size_t max_attempts = 200;
};

class BestBatchSampler final : public Sampler {
 public:
  explicit BestBatchSampler(BestBatchOptions options = {});
  SamplerId id() const override { return SamplerId::BestBatch; }
  std::vector<ParamVector> propose(const SamplerContext& ctx) override;
  const BestBatchOptions& options() const { return opt_; }

 private:
  BestBatchOptions opt_;
};

enum class SurrogateKind { Forest, Boosted, Gp };

struct SurrogateOptions {
  std::size_t pool_size = 4096;
  ForestConfig forest;
  BoostedConfig boosted;
  GpConfig gp;
};

/// A scored candidate: lower `key` is better for every surrogate kind.
struct ScoredCandidate {
  ParamVector params;
  double key;
};

class SurrogateSampler final : public Sampler {
 public:
  SurrogateSampler(SurrogateKind kind, SurrogateOptions options, HaltonSampler& fallback);
  SamplerId id() const override;
  std::vector<ParamVector> propose(const SamplerContext& ctx) override;

  /// Minimum number of finite-loss records needed before the surrogate is used.
  std::size_t min_history() const;
  /// Quasi-random candidates (shifted Halton, snapped, deduplicated, not yet evaluated).
  std::vector<ParamVector> candidate_pool(const CalibrationState& state, Rng& rng) const;
  /// Fits the surrogate on the finite records and scores every candidate.
  std::vector<ScoredCandidate> score(const CalibrationState& state, const std::vector<ParamVector>& pool,
                                     Rng& rng) const;

 private:
  SurrogateKind kind_;
  SurrogateOptions opt_;
  HaltonSampler& fallback_;
};

struct SamplerOptions {
  SurrogateOptions surrogate;
  BestBatchOptions best_batch;
};

/// One instance of every sampler; the surrogate samplers share the Halton cursor for cold starts.
class SamplerSet {
 public:
  explicit SamplerSet(SamplerOptions options = {});
  Sampler& get(SamplerId id);
  HaltonSampler& halton() { return *halton_; }

  std::string save_state() const;
  void load_state(std::string_view text);

 private:
  std::unique_ptr<HaltonSampler> halton_;
  std::vector<std::unique_ptr<Sampler>> others_;
};

}  // namespace calib
