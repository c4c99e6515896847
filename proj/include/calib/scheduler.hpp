#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "calib/core.hpp"

namespace calib {

/// Fractional improvement over the previous best, floored at zero. A non-positive
/// previous best (already perfect) yields 0 and sets *degenerate when given.
double compute_reward(double prev_best, double batch_min_loss, bool* degenerate = nullptr);

struct BanditState {
  std::vector<SamplerId> arms;
  std::vector<double> q;
  double epsilon = 0.1;
  double alpha = 0.1;
  std::size_t t = 0;
  std::vector<std::pair<std::size_t, double>> trace;  ///< (arm index, reward) per update

  BanditState() = default;
  BanditState(std::vector<SamplerId> arms, double epsilon, double alpha);
  bool operator==(const BanditState&) const = default;
};

/// Epsilon-greedy: argmax Q with uniform tie-breaking, or a uniform arm with probability epsilon.
std::size_t select_arm(const BanditState& state, Rng& rng);
/// Q(a) <- alpha * reward + (1 - alpha) * Q(a) for the chosen arm only.
void update_q(BanditState& state, std::size_t arm, double reward);
std::size_t round_robin_select(std::uint64_t step, std::size_t n_arms);

/// Sample-average reward per arm; nullopt for arms never chosen.
std::vector<std::optional<double>> offline_q(std::span<const std::pair<std::size_t, double>> history,
                                             std::size_t n_arms);

/// One scheduled batch as written to the trace file.
struct TraceStep {
  std::int64_t step = 0;  ///< batch index
  SamplerId arm = SamplerId::Halton;
  double batch_min_loss = 0.0;
  double prev_best = 0.0;  ///< best loss before this batch: the context the decision was made in
  double best_loss = 0.0;
  double reward = 0.0;
  std::vector<double> q;  ///< after the update (empty for non-bandit strategies)
  bool operator==(const TraceStep&) const = default;
};

using Trace = std::vector<TraceStep>;

enum class MedianMode { Pooled, PerTrace };

struct ContextualQ {
  std::vector<SamplerId> arms;
  std::vector<std::optional<double>> high;  ///< steps with prev_best above the median
  std::vector<std::optional<double>> low;
  std::vector<double> medians;  ///< one value (pooled) or one per trace
};

ContextualQ offline_q_contextual(std::span<const Trace> traces, const std::vector<SamplerId>& arms,
                                 MedianMode mode = MedianMode::Pooled);

/// Arms in order of first appearance across traces.
std::vector<SamplerId> arms_in(std::span<const Trace> traces);
/// (arm index, reward) pairs of a trace against a fixed arm list.
std::vector<std::pair<std::size_t, double>> history_of(const Trace& trace, const std::vector<SamplerId>& arms);

enum class StrategyKind { Single, RoundRobin, Bandit };

struct StrategyConfig {
  StrategyKind kind = StrategyKind::Single;
  std::vector<SamplerId> arms{SamplerId::RandomForest};
  double epsilon = 0.1;
  double alpha = 0.1;

  /// "RF", "H+RF", "RL" style label used in benchmark outputs.
  std::string label() const;
};

std::string_view to_string(StrategyKind kind);
StrategyKind strategy_kind_from_string(std::string_view text);

/// Picks the sampler for every batch after the bootstrap and records the trace.
class Scheduler {
 public:
  explicit Scheduler(StrategyConfig config);

  SamplerId choose(std::int64_t batch_index, Rng& rng);
  /// Records the outcome of the batch the scheduler last chose for.
  const TraceStep& observe(std::int64_t batch_index, SamplerId arm, double batch_min_loss, double prev_best,
                           double best_loss);

  const StrategyConfig& config() const { return config_; }
  const BanditState& bandit() const { return bandit_; }
  const Trace& trace() const { return trace_; }
  std::size_t degenerate_rewards() const { return degenerate_; }

  std::string save_state() const;
  void load_state(std::string_view text);

 private:
  StrategyConfig config_;
  BanditState bandit_;
  Trace trace_;
  std::size_t degenerate_ = 0;
};

std::string format_trace_csv(const Trace& trace, const std::vector<SamplerId>& q_arms);
void write_trace_csv(const Trace& trace, const std::vector<SamplerId>& q_arms, const std::filesystem::path& path);
/// Throws FormatError naming the line on malformed input.
Trace parse_trace_csv(std::string_view text);
Trace read_trace_csv(const std::filesystem::path& path);

}  // namespace calib
