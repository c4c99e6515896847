#include "calib/samplers.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <unordered_set>

namespace calib {

namespace {

using KeySet = std::unordered_set<GridKey, GridKeyHash>;

constexpr std::int64_t kEnumerateLimit = std::int64_t{1} << 20;

bool is_novel(const CalibrationState& state, const KeySet& batch, const GridKey& key) {
  return !state.contains(key) && batch.count(key) == 0;
}

ParamVector from_unit(const ParameterSpace& space, std::span<const double> u) {
  std::vector<double> raw(space.size());
  for (std::size_t j = 0; j < space.size(); ++j) raw[j] = space[j].lower + u[j] * space[j].range();
  return snap_to_grid(space, raw);
}

void top_up(const SamplerContext& ctx, std::vector<ParamVector>& out, std::string_view who) {
  if (out.size() >= ctx.batch_size) return;
  std::vector<GridKey> taken;
  for (const auto& p : out) taken.push_back(ctx.state.space().key_of(p));
  auto extra = uniform_novel_points(ctx.state, ctx.batch_size - out.size(), ctx.rng, std::move(taken));
  ctx.warn(std::string(who) + ": filled " + std::to_string(extra.size()) + " point(s) uniformly at random");
  for (auto& p : extra) out.push_back(std::move(p));
  if (out.size() < ctx.batch_size) throw DomainError("parameter grid has fewer unevaluated points than the batch size");
}

}  // namespace

void SamplerContext::warn(std::string message) const {
  if (warnings) warnings->push_back(std::move(message));
}

double radical_inverse(std::uint64_t index, std::uint32_t base) {
  double result = 0.0;
  double f = 1.0 / base;
  while (index > 0) {
    result += f * static_cast<double>(index % base);
    index /= base;
    f /= base;
  }
  return result;
}

std::vector<std::uint32_t> first_primes(std::size_t count) {
  std::vector<std::uint32_t> primes;
  for (std::uint32_t c = 2; primes.size() < count; ++c) {
    bool prime = true;
    for (auto p : primes) {
      if (p * p > c) break;
      if (c % p == 0) {
        prime = false;
        break;
      }
    }
    if (prime) primes.push_back(c);
  }
  return primes;
}

std::vector<double> halton_point(std::uint64_t index, std::size_t d) {
  static const auto primes = first_primes(64);
  const auto bases = d <= primes.size() ? std::vector<std::uint32_t>(primes.begin(), primes.begin() + static_cast<std::ptrdiff_t>(d))
                                        : first_primes(d);
  std::vector<double> u(d);
  for (std::size_t j = 0; j < d; ++j) u[j] = radical_inverse(index, bases[j]);
  return u;
}

std::vector<ParamVector> uniform_novel_points(const CalibrationState& state, std::size_t count, Rng& rng,
                                              std::vector<GridKey> taken) {
  const auto& space = state.space();
  KeySet batch(taken.begin(), taken.end());
  std::vector<ParamVector> out;
  const std::int64_t card = space.cardinality();
  if (card <= kEnumerateLimit) {
    // small grid: sample without replacement from the explicit complement
    std::vector<GridKey> free;
    GridKey key(space.size(), 0);
    for (std::int64_t n = 0; n < card; ++n) {
      if (is_novel(state, batch, key)) free.push_back(key);
      for (std::size_t j = 0; j < key.size(); ++j) {
        if (++key[j] < space[j].grid_count()) break;
        key[j] = 0;
      }
    }
    for (std::size_t i = 0; i < count && i < free.size(); ++i) {
      const auto r = i + static_cast<std::size_t>(uniform_index(rng, free.size() - i));
      std::swap(free[i], free[r]);
      out.push_back(space.point_at(free[i]));
    }
    return out;
  }
  std::size_t attempts = 0;
  const std::size_t max_attempts = 1000 * count + 1000;
  GridKey key(space.size());
  while (out.size() < count && attempts++ < max_attempts) {
    for (std::size_t j = 0; j < key.size(); ++j)
      key[j] = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(space[j].grid_count())));
    if (!is_novel(state, batch, key)) continue;
    batch.insert(key);
    out.push_back(space.point_at(key));
  }
  return out;
}

std::vector<ParamVector> HaltonSampler::propose(const SamplerContext& ctx) {
  const auto& space = ctx.state.space();
  std::vector<ParamVector> out;
  KeySet batch;
  std::size_t skips = 0;
  const std::size_t max_skips = 64 * ctx.batch_size + 1000;
  while (out.size() < ctx.batch_size && skips < max_skips) {
    auto p = from_unit(space, halton_point(cursor_++, space.size()));
    auto key = space.key_of(p);
    if (!is_novel(ctx.state, batch, key)) {
      ++skips;
      continue;
    }
    batch.insert(std::move(key));
    out.push_back(std::move(p));
  }
  top_up(ctx, out, "H");
  return out;
}

std::vector<ParamVector> RandomSampler::propose(const SamplerContext& ctx) {
  std::vector<ParamVector> out = uniform_novel_points(ctx.state, ctx.batch_size, ctx.rng);
  if (out.size() < ctx.batch_size) throw DomainError("parameter grid has fewer unevaluated points than the batch size");
  return out;
}

BestBatchSampler::BestBatchSampler(BestBatchOptions options) : opt_(options) {
  if (!(opt_.delta >= 0.0)) throw ConfigError("best-batch delta must be non-negative");
  if (opt_.elite_factor == 0) throw ConfigError("best-batch elite factor must be positive");
  if (!(opt_.subset_fraction > 0.0 && opt_.subset_fraction <= 1.0))
    throw ConfigError("best-batch subset fraction must be in (0, 1]");
}

std::vector<ParamVector> BestBatchSampler::propose(const SamplerContext& ctx) {
  const auto& space = ctx.state.space();
  auto finite = ctx.state.finite_records();
  if (finite.empty()) throw InsufficientDataError("best-batch needs at least one evaluated point");
  std::stable_sort(finite.begin(), finite.end(),
                   [](const EvaluationRecord* a, const EvaluationRecord* b) { return a->loss < b->loss; });
  const std::size_t elites = std::min(opt_.elite_factor * ctx.batch_size, finite.size());

  std::vector<ParamVector> out;
  KeySet batch;
  const std::size_t d = space.size();
  std::vector<double> raw(d);
  std::vector<char> mask(d);
  for (std::size_t k = 0; k < ctx.batch_size; ++k) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < opt_.max_attempts && !placed; ++attempt) {
      const auto& elite = finite[uniform_index(ctx.rng, elites)]->params;
      bool any = false;
      for (std::size_t j = 0; j < d; ++j) {
        mask[j] = opt_.subset_fraction >= 1.0 || uniform01(ctx.rng) < opt_.subset_fraction;
        any = any || mask[j];
      }
      if (!any) mask[uniform_index(ctx.rng, d)] = 1;
      for (std::size_t j = 0; j < d; ++j) {
        raw[j] = elite[j];
        if (mask[j]) raw[j] += (2.0 * uniform01(ctx.rng) - 1.0) * opt_.delta * space[j].range();
      }
      auto p = snap_to_grid(space, raw);
      if (opt_.require_distinct) {
        auto key = space.key_of(p);
        if (p == elite || !is_novel(ctx.state, batch, key)) continue;
        batch.insert(std::move(key));
      }
      out.push_back(std::move(p));
      placed = true;
    }
    if (!placed) break;
  }
  top_up(ctx, out, "BB");
  return out;
}

SurrogateSampler::SurrogateSampler(SurrogateKind kind, SurrogateOptions options, HaltonSampler& fallback)
    : kind_(kind), opt_(std::move(options)), fallback_(fallback) {
  if (opt_.pool_size == 0) throw ConfigError("candidate pool size must be positive");
  if (opt_.forest.n_bins < 1) throw ConfigError("forest needs at least one bin");
}

SamplerId SurrogateSampler::id() const {
  switch (kind_) {
    case SurrogateKind::Forest: return SamplerId::RandomForest;
    case SurrogateKind::Boosted: return SamplerId::Boosted;
    case SurrogateKind::Gp: break;
  }
  return SamplerId::GaussianProcess;
}

std::size_t SurrogateSampler::min_history() const { return std::max<std::size_t>(2, opt_.forest.n_bins); }

std::vector<ParamVector> SurrogateSampler::candidate_pool(const CalibrationState& state, Rng& rng) const {
  const auto& space = state.space();
  const std::size_t d = space.size();
  std::vector<double> shift(d);
  for (auto& s : shift) s = uniform01(rng);
  std::vector<ParamVector> pool;
  KeySet seen;
  std::vector<double> u(d);
  for (std::uint64_t i = 1; i <= opt_.pool_size; ++i) {
    const auto h = halton_point(i, d);
    for (std::size_t j = 0; j < d; ++j) {
      u[j] = h[j] + shift[j];
      if (u[j] >= 1.0) u[j] -= 1.0;
    }
    auto p = from_unit(space, u);
    auto key = space.key_of(p);
    if (!is_novel(state, seen, key)) continue;
    seen.insert(std::move(key));
    pool.push_back(std::move(p));
  }
  return pool;
}

std::vector<ScoredCandidate> SurrogateSampler::score(const CalibrationState& state,
                                                     const std::vector<ParamVector>& pool, Rng& rng) const {
  const auto& space = state.space();
  const auto finite = state.finite_records();
  FeatureMatrix x(finite.size(), space.size());
  std::vector<double> y(finite.size());
  for (std::size_t i = 0; i < finite.size(); ++i) {
    const auto u = space.normalize(finite[i]->params);
    for (std::size_t j = 0; j < u.size(); ++j) x(i, j) = u[j];
    y[i] = finite[i]->loss;
  }
  std::vector<ScoredCandidate> scored;
  scored.reserve(pool.size());
  auto emit = [&](auto&& key_of) {
    for (const auto& p : pool) scored.push_back({p, key_of(space.normalize(p))});
  };
  switch (kind_) {
    case SurrogateKind::Forest: {
      const auto model = ForestClassifier::fit(x, y, opt_.forest, rng);
      emit([&](const std::vector<double>& u) { return model.score(u); });
      break;
    }
    case SurrogateKind::Boosted: {
      const auto model = BoostedTreesRegressor::fit(x, y, opt_.boosted, rng);
      emit([&](const std::vector<double>& u) { return model.predict(u); });
      break;
    }
    case SurrogateKind::Gp: {
      const auto model = GaussianProcessModel::fit(x, y, opt_.gp);
      const double best = *std::min_element(y.begin(), y.end());
      const auto& cfg = opt_.gp;
      emit([&](const std::vector<double>& u) {
        const auto post = model.posterior(u);
        switch (cfg.acquisition) {
          case Acquisition::PosteriorMean: return post.mean;
          case Acquisition::LowerConfidenceBound: return post.mean - cfg.lcb_kappa * std::sqrt(post.variance);
          case Acquisition::ExpectedImprovement: break;
        }
        return -expected_improvement(post.mean, std::sqrt(post.variance), best);
      });
      break;
    }
  }
  return scored;
}

std::vector<ParamVector> SurrogateSampler::propose(const SamplerContext& ctx) {
  if (ctx.state.finite_records().size() < min_history()) return fallback_.propose(ctx);
  const auto pool = candidate_pool(ctx.state, ctx.rng);
  std::vector<ScoredCandidate> scored;
  try {
    scored = score(ctx.state, pool, ctx.rng);
  } catch (const std::exception& e) {
    ctx.warn(std::string(to_string(id())) + ": surrogate fit failed (" + e.what() + "), using Halton");
    return fallback_.propose(ctx);
  }
  // random order first so the stable sort breaks ties uniformly
  for (std::size_t i = 0; i + 1 < scored.size(); ++i) {
    const auto r = i + static_cast<std::size_t>(uniform_index(ctx.rng, scored.size() - i));
    std::swap(scored[i], scored[r]);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredCandidate& a, const ScoredCandidate& b) { return a.key < b.key; });
  std::vector<ParamVector> out;
  for (std::size_t i = 0; i < scored.size() && out.size() < ctx.batch_size; ++i) out.push_back(scored[i].params);
  top_up(ctx, out, to_string(id()));
  return out;
}

SamplerSet::SamplerSet(SamplerOptions options) : halton_(std::make_unique<HaltonSampler>()) {
  others_.push_back(std::make_unique<SurrogateSampler>(SurrogateKind::Forest, options.surrogate, *halton_));
  others_.push_back(std::make_unique<SurrogateSampler>(SurrogateKind::Boosted, options.surrogate, *halton_));
  others_.push_back(std::make_unique<SurrogateSampler>(SurrogateKind::Gp, options.surrogate, *halton_));
  others_.push_back(std::make_unique<BestBatchSampler>(options.best_batch));
  others_.push_back(std::make_unique<RandomSampler>());
}

Sampler& SamplerSet::get(SamplerId id) {
  if (id == SamplerId::Halton) return *halton_;
  for (auto& s : others_)
    if (s->id() == id) return *s;
  throw ConfigError("no sampler registered for id " + std::string(to_string(id)));
}

std::string SamplerSet::save_state() const { return "halton " + std::to_string(halton_->cursor()); }

void SamplerSet::load_state(std::string_view text) {
  constexpr std::string_view prefix = "halton ";
  std::uint64_t cursor = 0;
  const auto* end = text.data() + text.size();
  if (text.substr(0, prefix.size()) != prefix) throw FormatError("sampler state: expected 'halton <cursor>'", 0, 0);
  auto [ptr, ec] = std::from_chars(text.data() + prefix.size(), end, cursor);
  if (ec != std::errc() || ptr != end || cursor == 0) throw FormatError("sampler state: malformed Halton cursor", 0, 0);
  halton_->set_cursor(cursor);
}

}  // namespace calib
