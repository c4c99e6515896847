#include "calib/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace calib {

namespace {

constexpr double kGridTolerance = 1e-9;

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void validate_dim(const ParameterDim& d) {
  if (d.name.empty()) throw DomainError("parameter dimension without a name");
  if (!std::isfinite(d.lower) || !std::isfinite(d.upper) || !(d.lower < d.upper))
    throw DomainError("parameter '" + d.name + "': lower must be < upper");
  if (!std::isfinite(d.step) || !(d.step > 0.0) || d.step > d.range() * (1.0 + kGridTolerance))
    throw DomainError("parameter '" + d.name + "': step must lie in (0, upper - lower]");
  if (d.step < 1e-9 * std::max(std::abs(d.lower), std::abs(d.upper)))
    throw DomainError("parameter '" + d.name + "': step is too fine for the magnitude of the bounds");
}

}  // namespace

std::int64_t ParameterDim::grid_count() const {
  return static_cast<std::int64_t>(std::floor(range() / step + kGridTolerance)) + 1;
}

double ParameterDim::value_at(std::int64_t k) const {
  // Rounded to 12 significant digits so decimal grids produce their decimal values
  // (0.3 rather than 0.30000000000000004).
  const double raw = lower + static_cast<double>(k) * step;
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, raw, std::chars_format::general, 12);
  double v = raw;
  std::from_chars(buf, end, v);
  return std::min(v, upper);
}

std::int64_t ParameterDim::nearest_index(double raw) const {
  const double clipped = std::clamp(raw, lower, upper);
  const double r = (clipped - lower) / step;
  // ceil(r - 0.5) sends exact halves down; the tolerance absorbs representation error.
  auto k = static_cast<std::int64_t>(std::ceil(r - 0.5 - kGridTolerance));
  return std::clamp<std::int64_t>(k, 0, grid_count() - 1);
}

ParameterDim make_dim(std::string name, double lower, double upper) {
  return make_dim(std::move(name), lower, upper, (upper - lower) / 100.0);
}

ParameterDim make_dim(std::string name, double lower, double upper, double step) {
  ParameterDim d{std::move(name), lower, upper, step};
  validate_dim(d);
  return d;
}

std::size_t GridKeyHash::operator()(const GridKey& key) const noexcept {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto k : key) h = mix64(h ^ static_cast<std::uint64_t>(k));
  return static_cast<std::size_t>(h);
}

ParameterSpace::ParameterSpace(std::vector<ParameterDim> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw DomainError("parameter space needs at least one dimension");
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    validate_dim(dims_[i]);
    for (std::size_t j = 0; j < i; ++j)
      if (dims_[j].name == dims_[i].name) throw DomainError("duplicate parameter name '" + dims_[i].name + "'");
  }
}

std::vector<std::string> ParameterSpace::names() const {
  std::vector<std::string> out;
  out.reserve(dims_.size());
  for (const auto& d : dims_) out.push_back(d.name);
  return out;
}

std::int64_t ParameterSpace::cardinality() const {
  constexpr auto kMax = std::numeric_limits<std::int64_t>::max();
  std::int64_t total = 1;
  for (const auto& d : dims_) {
    const auto c = d.grid_count();
    if (total > kMax / c) return kMax;
    total *= c;
  }
  return total;
}

GridKey ParameterSpace::key_of(const ParamVector& p) const {
  if (p.size() != dims_.size()) throw DomainError("point dimensionality does not match the space");
  GridKey key(dims_.size());
  for (std::size_t i = 0; i < dims_.size(); ++i) key[i] = dims_[i].nearest_index(p[i]);
  return key;
}

ParamVector ParameterSpace::point_at(const GridKey& key) const {
  if (key.size() != dims_.size()) throw DomainError("grid key dimensionality does not match the space");
  ParamVector p;
  p.coords.resize(dims_.size());
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (key[i] < 0 || key[i] >= dims_[i].grid_count()) throw DomainError("grid index out of range");
    p.coords[i] = dims_[i].value_at(key[i]);
  }
  return p;
}

bool ParameterSpace::contains(const ParamVector& p) const {
  if (p.size() != dims_.size()) return false;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    const auto& d = dims_[i];
    if (!(p[i] >= d.lower && p[i] <= d.upper)) return false;
    if (d.value_at(d.nearest_index(p[i])) != p[i]) return false;
  }
  return true;
}

std::vector<double> ParameterSpace::normalize(const ParamVector& p) const {
  std::vector<double> out(dims_.size());
  for (std::size_t i = 0; i < dims_.size(); ++i) out[i] = (p[i] - dims_[i].lower) / dims_[i].range();
  return out;
}

bool ParameterSpace::operator==(const ParameterSpace& other) const {
  if (dims_.size() != other.dims_.size()) return false;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    const auto& a = dims_[i];
    const auto& b = other.dims_[i];
    if (a.name != b.name || a.lower != b.lower || a.upper != b.upper || a.step != b.step) return false;
  }
  return true;
}

ParamVector snap_to_grid(const ParameterSpace& space, std::span<const double> raw) {
  if (raw.size() != space.size())
    throw DomainError("snap_to_grid: expected " + std::to_string(space.size()) + " coordinates, got " +
                      std::to_string(raw.size()));
  ParamVector p;
  p.coords.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (std::isnan(raw[i])) throw DomainError("snap_to_grid: NaN coordinate");
    const auto& d = space[i];
    p.coords[i] = d.value_at(d.nearest_index(raw[i]));
  }
  return p;
}

std::string_view to_string(SamplerId id) {
  switch (id) {
    case SamplerId::Halton: return "H";
    case SamplerId::RandomForest: return "RF";
    case SamplerId::Boosted: return "XB";
    case SamplerId::GaussianProcess: return "GP";
    case SamplerId::BestBatch: return "BB";
    case SamplerId::Random: return "RND";
  }
  return "?";
}

SamplerId sampler_id_from_string(std::string_view text) {
  for (auto id : all_sampler_ids())
    if (to_string(id) == text) return id;
  throw ConfigError("unknown sampler id '" + std::string(text) + "' (expected H, RF, XB, GP, BB or RND)");
}

std::vector<SamplerId> all_sampler_ids() {
  return {SamplerId::Halton,          SamplerId::RandomForest, SamplerId::Boosted,
          SamplerId::GaussianProcess, SamplerId::BestBatch,    SamplerId::Random};
}

bool EvaluationRecord::failed() const { return !std::isfinite(loss); }

double ensemble_mean(std::span<const double> losses) {
  if (losses.empty()) throw DomainError("ensemble_mean: no losses");
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(losses.size());
}

CalibrationState::CalibrationState(ParameterSpace space, std::uint64_t master_seed)
    : space_(std::move(space)), master_seed_(master_seed) {}

void CalibrationState::append(EvaluationRecord record) {
  if (!space_.contains(record.params)) throw DomainError("record point is not an in-bounds grid point");
  if (record.ensemble_losses.empty()) throw DomainError("record without ensemble losses");
  for (double l : record.ensemble_losses)
    if (std::isnan(l) || l < 0.0) throw DomainError("ensemble loss must be non-negative");
  if (ensemble_mean(record.ensemble_losses) != record.loss)
    throw DomainError("record loss is not the mean of its ensemble losses");
  auto key = space_.key_of(record.params);
  if (!keys_.insert(std::move(key)).second) throw DomainError("duplicate evaluation of an existing point");
  records_.push_back(std::move(record));
}

bool CalibrationState::contains(const ParamVector& p) const {
  if (p.size() != space_.size()) return false;
  return contains(space_.key_of(p));
}

BestLoss CalibrationState::best() const {
  if (records_.empty()) throw InsufficientDataError("no evaluations");
  BestLoss best{records_[0].loss, 0};
  for (std::size_t i = 1; i < records_.size(); ++i)
    if (records_[i].loss < best.loss) best = {records_[i].loss, i};
  return best;
}

std::vector<double> CalibrationState::best_by_batch() const {
  std::vector<double> curve(static_cast<std::size_t>(batch_count_), std::numeric_limits<double>::infinity());
  double running = std::numeric_limits<double>::infinity();
  std::size_t r = 0;
  for (std::int64_t b = 0; b < batch_count_; ++b) {
    while (r < records_.size() && records_[r].batch_index == b) running = std::min(running, records_[r++].loss);
    curve[static_cast<std::size_t>(b)] = running;
  }
  return curve;
}

std::vector<const EvaluationRecord*> CalibrationState::finite_records() const {
  std::vector<const EvaluationRecord*> out;
  out.reserve(records_.size());
  for (const auto& r : records_)
    if (!r.failed()) out.push_back(&r);
  return out;
}

bool CalibrationState::operator==(const CalibrationState& other) const {
  if (!(space_ == other.space_) || master_seed_ != other.master_seed_ || batch_count_ != other.batch_count_ ||
      records_.size() != other.records_.size())
    return false;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& a = records_[i];
    const auto& b = other.records_[i];
    if (!(a.params == b.params) || a.batch_index != b.batch_index || a.sampler != b.sampler ||
        a.ensemble_losses != b.ensemble_losses || !(a.loss == b.loss || (a.failed() && b.failed())))
      return false;
  }
  return true;
}

CalibrationState restore_state(ParameterSpace space, std::uint64_t master_seed, std::int64_t batch_count,
                               std::vector<EvaluationRecord> records) {
  CalibrationState state(std::move(space), master_seed);
  std::int64_t last_batch = -1;
  for (auto& r : records) {
    if (r.batch_index < last_batch || r.batch_index >= batch_count)
      throw DomainError("record batch indices must be ordered and below the batch count");
    last_batch = r.batch_index;
    state.append(std::move(r));
  }
  state.batch_count_ = batch_count;
  return state;
}

double best_loss(const CalibrationState& state) { return state.best().loss; }

std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t batch_index, std::uint64_t point_index,
                          std::uint64_t ensemble_index) {
  std::uint64_t h = mix64(master_seed ^ 0x6a09e667f3bcc908ULL);
  h = mix64(h ^ (batch_index * 0xbb67ae8584caa73bULL + 1));
  h = mix64(h ^ (point_index * 0x3c6ef372fe94f82bULL + 2));
  h = mix64(h ^ (ensemble_index * 0xa54ff53a5f1d36f1ULL + 3));
  return h;
}

Rng make_stream(std::uint64_t master_seed, std::uint64_t batch_index, Stream stream) {
  // Stream ids live far above any realistic point index.
  constexpr std::uint64_t kStreamBase = 0xffffffff00000000ULL;
  return Rng(derive_seed(master_seed, batch_index, kStreamBase + static_cast<std::uint64_t>(stream), 0));
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw DomainError("uniform_index: empty range");
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

double standard_normal(Rng& rng) {
  double u, v, s;
  do {
    u = 2.0 * uniform01(rng) - 1.0;
    v = 2.0 * uniform01(rng) - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

}  // namespace calib
