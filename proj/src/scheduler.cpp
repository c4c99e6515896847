#include "calib/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "calib/text.hpp"

namespace calib {

double compute_reward(double prev_best, double batch_min_loss, bool* degenerate) {
  if (degenerate) *degenerate = false;
  if (!(prev_best > 0.0)) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (!std::isfinite(prev_best)) return std::isfinite(batch_min_loss) ? 1.0 : 0.0;
  return std::clamp((prev_best - batch_min_loss) / prev_best, 0.0, 1.0);
}

BanditState::BanditState(std::vector<SamplerId> a, double eps, double alp)
    : arms(std::move(a)), q(arms.size(), 0.0), epsilon(eps), alpha(alp) {
  if (arms.empty()) throw ConfigError("bandit needs at least one arm");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("bandit epsilon must be in [0, 1]");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("bandit alpha must be in (0, 1]");
}

std::size_t select_arm(const BanditState& state, Rng& rng) {
  const std::size_t n = state.q.size();
  if (n == 0) throw ConfigError("bandit needs at least one arm");
  if (uniform01(rng) < state.epsilon) return static_cast<std::size_t>(uniform_index(rng, n));
  const double top = *std::max_element(state.q.begin(), state.q.end());
  std::vector<std::size_t> best;
  for (std::size_t a = 0; a < n; ++a)
    if (state.q[a] == top) best.push_back(a);
  return best[uniform_index(rng, best.size())];
}

void update_q(BanditState& state, std::size_t arm, double reward) {
  if (arm >= state.q.size()) throw DomainError("bandit arm index out of range");
  state.q[arm] = state.alpha * reward + (1.0 - state.alpha) * state.q[arm];
  ++state.t;
  state.trace.emplace_back(arm, reward);
}

std::size_t round_robin_select(std::uint64_t step, std::size_t n_arms) {
  if (n_arms == 0) throw ConfigError("round-robin needs at least one arm");
  return static_cast<std::size_t>(step % n_arms);
}

std::vector<std::optional<double>> offline_q(std::span<const std::pair<std::size_t, double>> history,
                                             std::size_t n_arms) {
  std::vector<double> sum(n_arms, 0.0);
  std::vector<std::size_t> count(n_arms, 0);
  for (const auto& [arm, reward] : history) {
    if (arm >= n_arms) throw DomainError("history refers to an unknown arm");
    sum[arm] += reward;
    ++count[arm];
  }
  std::vector<std::optional<double>> q(n_arms);
  for (std::size_t a = 0; a < n_arms; ++a)
    if (count[a] > 0) q[a] = sum[a] / static_cast<double>(count[a]);
  return q;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::size_t arm_index(const std::vector<SamplerId>& arms, SamplerId id) {
  const auto it = std::find(arms.begin(), arms.end(), id);
  if (it == arms.end()) throw DomainError("trace arm " + std::string(to_string(id)) + " is not in the arm list");
  return static_cast<std::size_t>(it - arms.begin());
}

}  // namespace

std::vector<SamplerId> arms_in(std::span<const Trace> traces) {
  std::vector<SamplerId> arms;
  for (const auto& tr : traces)
    for (const auto& s : tr)
      if (std::find(arms.begin(), arms.end(), s.arm) == arms.end()) arms.push_back(s.arm);
  return arms;
}

std::vector<std::pair<std::size_t, double>> history_of(const Trace& trace, const std::vector<SamplerId>& arms) {
  std::vector<std::pair<std::size_t, double>> h;
  for (const auto& s : trace) h.emplace_back(arm_index(arms, s.arm), s.reward);
  return h;
}

ContextualQ offline_q_contextual(std::span<const Trace> traces, const std::vector<SamplerId>& arms,
                                 MedianMode mode) {
  std::size_t total = 0;
  for (const auto& tr : traces) total += tr.size();
  if (total == 0) throw InsufficientDataError("contextual analysis needs at least one step");
  ContextualQ out;
  out.arms = arms;
  if (mode == MedianMode::Pooled) {
    std::vector<double> all;
    for (const auto& tr : traces)
      for (const auto& s : tr) all.push_back(s.prev_best);
    out.medians.push_back(median_of(std::move(all)));
  } else {
    for (const auto& tr : traces) {
      std::vector<double> v;
      for (const auto& s : tr) v.push_back(s.prev_best);
      out.medians.push_back(v.empty() ? 0.0 : median_of(std::move(v)));
    }
  }
  std::vector<std::pair<std::size_t, double>> high, low;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const double med = out.medians[mode == MedianMode::Pooled ? 0 : i];
    for (const auto& s : traces[i]) (s.prev_best > med ? high : low).emplace_back(arm_index(arms, s.arm), s.reward);
  }
  out.high = offline_q(high, arms.size());
  out.low = offline_q(low, arms.size());
  return out;
}

std::string StrategyConfig::label() const {
  switch (kind) {
    case StrategyKind::Single: return std::string(to_string(arms.at(0)));
    case StrategyKind::RoundRobin: {
      std::string s;
      for (std::size_t i = 0; i < arms.size(); ++i) s += (i ? "+" : "") + std::string(to_string(arms[i]));
      return s;
    }
    case StrategyKind::Bandit: break;
  }
  std::string s = "RL(";
  for (std::size_t i = 0; i < arms.size(); ++i) s += (i ? "," : "") + std::string(to_string(arms[i]));
  return s + ")";
}

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Single: return "single";
    case StrategyKind::RoundRobin: return "round_robin";
    case StrategyKind::Bandit: break;
  }
  return "bandit";
}

StrategyKind strategy_kind_from_string(std::string_view text) {
  if (text == "single") return StrategyKind::Single;
  if (text == "round_robin") return StrategyKind::RoundRobin;
  if (text == "bandit") return StrategyKind::Bandit;
  throw ConfigError("unknown strategy kind '" + std::string(text) + "' (expected single, round_robin or bandit)");
}

Scheduler::Scheduler(StrategyConfig config) : config_(std::move(config)) {
  if (config_.arms.empty()) throw ConfigError("strategy needs at least one sampler");
  if (config_.kind == StrategyKind::Single && config_.arms.size() != 1)
    throw ConfigError("single strategy takes exactly one sampler");
  if (config_.kind == StrategyKind::Bandit) bandit_ = BanditState(config_.arms, config_.epsilon, config_.alpha);
}

SamplerId Scheduler::choose(std::int64_t batch_index, Rng& rng) {
  switch (config_.kind) {
    case StrategyKind::Single: return config_.arms[0];
    case StrategyKind::RoundRobin:
      return config_.arms[round_robin_select(static_cast<std::uint64_t>(batch_index - 1), config_.arms.size())];
    case StrategyKind::Bandit: break;
  }
  return config_.arms[select_arm(bandit_, rng)];
}

const TraceStep& Scheduler::observe(std::int64_t batch_index, SamplerId arm, double batch_min_loss, double prev_best,
                                    double best_loss) {
  bool degenerate = false;
  TraceStep s;
  s.step = batch_index;
  s.arm = arm;
  s.batch_min_loss = batch_min_loss;
  s.prev_best = prev_best;
  s.best_loss = best_loss;
  s.reward = compute_reward(prev_best, batch_min_loss, &degenerate);
  if (degenerate) ++degenerate_;
  if (config_.kind == StrategyKind::Bandit) {
    update_q(bandit_, arm_index(config_.arms, arm), s.reward);
    s.q = bandit_.q;
  }
  trace_.push_back(std::move(s));
  return trace_.back();
}

namespace {

std::string join_reals(const std::vector<double>& v) {
  if (v.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
  return s;
}

}  // namespace

std::string Scheduler::save_state() const {
  std::string out = "q " + join_reals(bandit_.q) + "\n";
  out += "t " + std::to_string(bandit_.t) + "\n";
  out += "degenerate " + std::to_string(degenerate_) + "\n";
  out += "bandit_trace";
  for (const auto& [arm, reward] : bandit_.trace) out += " " + std::to_string(arm) + ":" + format_real(reward);
  out += "\n";
  out += format_trace_csv(trace_, config_.kind == StrategyKind::Bandit ? config_.arms : std::vector<SamplerId>{});
  return out;
}

void Scheduler::load_state(std::string_view text) {
  auto fail = [](const std::string& what) -> void { throw FormatError("scheduler state: " + what, 0, 0); };
  std::vector<std::string_view> head;
  std::size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) fail("truncated header");
    head.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  auto value_of = [&](std::string_view line, std::string_view key) {
    if (line.substr(0, key.size()) != key) fail("expected '" + std::string(key) + "'");
    auto rest = line.substr(key.size());
    return rest.empty() ? rest : rest.substr(1);
  };
  BanditState b = bandit_;
  b.q.clear();
  const auto qs = value_of(head[0], "q");
  if (qs != "-")
    for (auto tok : split(qs, ',')) {
      double v;
      if (!parse_real(tok, v)) fail("malformed q value");
      b.q.push_back(v);
    }
  if (b.q.size() != bandit_.q.size()) fail("q vector does not match the configured arms");
  double t = 0, deg = 0;
  if (!parse_real(value_of(head[1], "t"), t) || !parse_real(value_of(head[2], "degenerate"), deg)) fail("bad counter");
  b.t = static_cast<std::size_t>(t);
  b.trace.clear();
  const auto bt = value_of(head[3], "bandit_trace");
  if (!bt.empty())
    for (auto tok : split(bt, ' ')) {
      const auto parts = split(tok, ':');
      double arm, reward;
      if (parts.size() != 2 || !parse_real(parts[0], arm) || !parse_real(parts[1], reward)) fail("bad trace entry");
      b.trace.emplace_back(static_cast<std::size_t>(arm), reward);
    }
  if (b.trace.size() != b.t) fail("bandit trace length differs from step count");
  trace_ = parse_trace_csv(text.substr(pos));
  bandit_ = std::move(b);
  degenerate_ = static_cast<std::size_t>(deg);
}

std::string format_trace_csv(const Trace& trace, const std::vector<SamplerId>& q_arms) {
  std::string out = "step,arm,batch_min_loss,prev_best,best_loss,reward";
  for (auto a : q_arms) out += ",q_" + std::string(to_string(a));
  out += "\n";
  for (const auto& s : trace) {
    out += std::to_string(s.step) + "," + std::string(to_string(s.arm)) + "," + format_real(s.batch_min_loss) + "," +
           format_real(s.prev_best) + "," + format_real(s.best_loss) + "," + format_real(s.reward);
    for (double q : s.q) out += "," + format_real(q);
    out += "\n";
  }
  return out;
}

void write_trace_csv(const Trace& trace, const std::vector<SamplerId>& q_arms, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_trace_csv(trace, q_arms);
}

Trace parse_trace_csv(std::string_view text) {
  Trace trace;
  std::size_t line_no = 0, pos = 0, q_cols = 0;
  while (pos < text.size()) {
    const std::size_t start = pos;
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    auto fail = [&](const std::string& what) { throw FormatError("trace: " + what, line_no, start); };
    if (line_no == 1) {
      static constexpr std::string_view kCols[] = {"step", "arm", "batch_min_loss", "prev_best", "best_loss", "reward"};
      if (fields.size() < 6) fail("header needs step,arm,batch_min_loss,prev_best,best_loss,reward");
      for (std::size_t i = 0; i < 6; ++i)
        if (trim(fields[i]) != kCols[i]) fail("unexpected column '" + std::string(fields[i]) + "'");
      q_cols = fields.size() - 6;
      continue;
    }
    if (fields.size() != 6 + q_cols) fail("expected " + std::to_string(6 + q_cols) + " fields");
    TraceStep s;
    double step;
    if (!parse_real(trim(fields[0]), step)) fail("malformed step");
    s.step = static_cast<std::int64_t>(step);
    try {
      s.arm = sampler_id_from_string(trim(fields[1]));
    } catch (const ConfigError& e) {
      fail(e.what());
    }
    double* targets[] = {&s.batch_min_loss, &s.prev_best, &s.best_loss, &s.reward};
    for (std::size_t i = 0; i < 4; ++i)
      if (!parse_real(trim(fields[2 + i]), *targets[i])) fail("malformed number in column " + std::to_string(3 + i));
    for (std::size_t i = 0; i < q_cols; ++i) {
      double q;
      if (!parse_real(trim(fields[6 + i]), q)) fail("malformed q value");
      s.q.push_back(q);
    }
    trace.push_back(std::move(s));
  }
  if (line_no == 0) throw FormatError("trace: empty file", 0, 0);
  return trace;
}

Trace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("trace: cannot open " + path.string(), 0, 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_trace_csv(buf.str());
}

}  // namespace calib
