#include "calib/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace calib {

void Model::check_arity(const ParamVector& params) const {
  if (params.size() != param_names().size())
    throw DomainError(std::string(name()) + " expects " + std::to_string(param_names().size()) + " parameters, got " +
                      std::to_string(params.size()));
}

// ---------------------------------------------------------------------------
// Heterogeneous-beliefs asset pricing

namespace {

// Resolves "g3" / "b1" / "beta" / "memory" / "noise_sd" to a field of the config.
double* bh_field(BrockHommesConfig& c, const std::string& name) {
  if (name == "beta") return &c.beta;
  if (name == "memory") return &c.memory;
  if (name == "noise_sd") return &c.noise_sd;
  if (name.size() >= 2 && (name[0] == 'g' || name[0] == 'b')) {
    std::size_t h = 0;
    for (std::size_t i = 1; i < name.size(); ++i) {
      if (name[i] < '0' || name[i] > '9') return nullptr;
      h = h * 10 + static_cast<std::size_t>(name[i] - '0');
    }
    if (h == 0 || h > c.types.size()) return nullptr;
    return name[0] == 'g' ? &c.types[h - 1].g : &c.types[h - 1].b;
  }
  return nullptr;
}

}  // namespace

BrockHommesModel::BrockHommesModel(BrockHommesConfig config) : config_(std::move(config)) {
  if (!(config_.gross_return > 1.0)) throw ConfigError("bh4: gross return R must exceed 1");
  if (!(config_.noise_sd >= 0.0)) throw ConfigError("bh4: noise_sd must be non-negative");
  if (config_.types.empty()) throw ConfigError("bh4: at least one belief type is required");
  for (const auto& n : config_.calibrated)
    if (!bh_field(config_, n)) throw ConfigError("bh4: unknown calibrated parameter '" + n + "'");
}

BrockHommesConfig BrockHommesModel::with_params(const ParamVector& params) const {
  check_arity(params);
  auto c = config_;
  for (std::size_t i = 0; i < params.size(); ++i) *bh_field(c, config_.calibrated[i]) = params[i];
  return c;
}

ParamVector BrockHommesModel::default_params() const {
  auto c = config_;
  ParamVector p;
  for (const auto& n : config_.calibrated) p.coords.push_back(*bh_field(c, n));
  return p;
}

BrockHommesPath BrockHommesModel::simulate_detailed(const ParamVector& params, std::size_t n_steps,
                                                    std::size_t burn_in, std::uint64_t seed) const {
  const auto c = with_params(params);
  if (!(c.noise_sd >= 0.0) || !(c.beta >= 0.0)) throw DomainError("bh4: beta and noise_sd must be non-negative");
  const std::size_t types = c.types.size();
  const double r = c.gross_return;
  Rng rng(seed);

  BrockHommesPath out;
  out.x.reserve(n_steps);
  out.fractions.reserve(n_steps);
  std::vector<double> fitness(types, 0.0), share(types);
  // x1 = x_{t-1}, x2 = x_{t-2}, x3 = x_{t-3}
  double x1 = c.x0, x2 = c.x0, x3 = c.x0;
  const std::size_t total = burn_in + n_steps;
  for (std::size_t t = 1; t <= total; ++t) {
    // realized excess profit of type h on the last period, using the forecast it made for x_{t-1}
    const double excess = x1 - r * x2;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t h = 0; h < types; ++h) {
      const double forecast_prev = c.types[h].g * x3 + c.types[h].b;
      fitness[h] = excess * (forecast_prev - r * x2) + c.memory * fitness[h];
      top = std::max(top, c.beta * fitness[h]);
    }
    double z = 0.0;
    for (std::size_t h = 0; h < types; ++h) {
      share[h] = std::exp(c.beta * fitness[h] - top);
      z += share[h];
    }
    // floor the shares so an underflowed type keeps a representable share in (0, 1)
    double floored = 0.0;
    for (std::size_t h = 0; h < types; ++h) {
      share[h] = std::max(share[h] / z, kMinShare);
      floored += share[h];
    }
    double mean_forecast = 0.0;
    for (std::size_t h = 0; h < types; ++h) {
      share[h] /= floored;
      mean_forecast += share[h] * (c.types[h].g * x1 + c.types[h].b);
    }
    const double eps = standard_normal(rng);
    const double xt = mean_forecast / r + c.noise_sd * eps;
    if (!std::isfinite(xt) || std::abs(xt) > kExplosionBound)
      throw ExplosionError("bh4: price deviation exploded at step " + std::to_string(t), static_cast<long>(t));
    if (t > burn_in) {
      out.x.push_back(xt);
      out.fractions.push_back(share);
    }
    x3 = x2;
    x2 = x1;
    x1 = xt;
  }
  return out;
}

SeriesPanel BrockHommesModel::simulate(const ParamVector& params, std::size_t n_steps, std::size_t burn_in,
                                       std::uint64_t seed) const {
  auto path = simulate_detailed(params, n_steps, burn_in, seed);
  return SeriesPanel(1, n_steps, std::move(path.x), {"x"});
}

// ---------------------------------------------------------------------------
// SIR on a small-world network

std::size_t Graph::edge_count() const {
  std::size_t twice = 0;
  for (const auto& a : adj) twice += a.size();
  return twice / 2;
}

namespace {

bool linked(const Graph& g, std::uint32_t u, std::uint32_t v) {
  const auto& a = g.adj[u];
  return std::find(a.begin(), a.end(), v) != a.end();
}

void unlink(Graph& g, std::uint32_t u, std::uint32_t v) {
  auto& a = g.adj[u];
  a.erase(std::find(a.begin(), a.end(), v));
  auto& b = g.adj[v];
  b.erase(std::find(b.begin(), b.end(), u));
}

void link(Graph& g, std::uint32_t u, std::uint32_t v) {
  g.adj[u].push_back(v);
  g.adj[v].push_back(u);
}

}  // namespace

Graph watts_strogatz(std::size_t n, std::size_t k, double p, Rng& rng) {
  if (k % 2 != 0) throw ConfigError("small-world degree k must be even");
  if (k >= n) throw ConfigError("small-world degree k must be below the node count");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("rewiring probability must be in [0, 1]");
  Graph g;
  g.adj.resize(n);
  const auto nn = static_cast<std::uint32_t>(n);
  for (std::uint32_t j = 1; j <= k / 2; ++j)
    for (std::uint32_t u = 0; u < nn; ++u) link(g, u, (u + j) % nn);
  for (std::uint32_t j = 1; j <= k / 2; ++j)
    for (std::uint32_t u = 0; u < nn; ++u) {
      if (!(uniform01(rng) < p)) continue;
      if (g.adj[u].size() >= n - 1) continue;
      std::uint32_t w;
      do {
        w = static_cast<std::uint32_t>(uniform_index(rng, n));
      } while (w == u || linked(g, u, w));
      unlink(g, u, (u + j) % nn);
      link(g, u, w);
    }
  for (auto& a : g.adj) std::sort(a.begin(), a.end());
  return g;
}

namespace {

double* sir_field(SirConfig& c, const std::string& name) {
  if (name == "beta") return &c.infect;
  if (name == "gamma") return &c.recover;
  if (name == "p") return &c.rewire;
  if (name == "initial_infected") return &c.initial_infected;
  return nullptr;
}

}  // namespace

SirModel::SirModel(SirConfig config) : config_(std::move(config)) {
  if (config_.nodes < 2) throw ConfigError("sir: need at least two nodes");
  if (config_.degree % 2 != 0 || config_.degree >= config_.nodes)
    throw ConfigError("sir: degree must be even and below the node count");
  for (const auto& n : config_.calibrated)
    if (!sir_field(config_, n)) throw ConfigError("sir: unknown calibrated parameter '" + n + "'");
}

SirConfig SirModel::with_params(const ParamVector& params) const {
  check_arity(params);
  auto c = config_;
  for (std::size_t i = 0; i < params.size(); ++i) *sir_field(c, config_.calibrated[i]) = params[i];
  return c;
}

ParamVector SirModel::default_params() const {
  auto c = config_;
  ParamVector p;
  for (const auto& n : config_.calibrated) p.coords.push_back(*sir_field(c, n));
  return p;
}

SeriesPanel SirModel::simulate(const ParamVector& params, std::size_t n_steps, std::size_t burn_in,
                               std::uint64_t seed) const {
  const auto c = with_params(params);
  for (double v : {c.infect, c.recover, c.rewire, c.initial_infected})
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("sir: probabilities must lie in [0, 1]");
  Rng rng(seed);
  const auto graph = watts_strogatz(c.nodes, c.degree, c.rewire, rng);
  const std::size_t n = c.nodes;

  enum : std::uint8_t { kS = 0, kI = 1, kR = 2 };
  std::vector<std::uint8_t> state(n, kS);
  std::vector<std::uint32_t> order(n);
  for (std::uint32_t i = 0; i < n; ++i) order[i] = i;
  const auto seeds = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(c.initial_infected * n)), 1, n);
  for (std::size_t i = 0; i < seeds; ++i) {
    const auto r = i + static_cast<std::size_t>(uniform_index(rng, n - i));
    std::swap(order[i], order[r]);
    state[order[i]] = kI;
  }
  std::size_t s_count = n - seeds, i_count = seeds, r_count = 0;

  // (1 - beta)^m for every possible number of infected neighbours
  std::size_t max_degree = 0;
  for (const auto& a : graph.adj) max_degree = std::max(max_degree, a.size());
  std::vector<double> escape(max_degree + 1);
  for (std::size_t m = 0; m <= max_degree; ++m) escape[m] = std::pow(1.0 - c.infect, static_cast<double>(m));

  std::vector<double> values(3 * n_steps);
  std::vector<std::uint8_t> next(n);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t t = 1; t <= burn_in + n_steps; ++t) {
    next = state;
    for (std::size_t v = 0; v < n; ++v) {
      if (state[v] == kS) {
        std::size_t m = 0;
        for (auto u : graph.adj[v]) m += state[u] == kI;
        if (m > 0 && uniform01(rng) < 1.0 - escape[m]) {
          next[v] = kI;
          --s_count;
          ++i_count;
        }
      } else if (state[v] == kI) {
        if (uniform01(rng) < c.recover) {
          next[v] = kR;
          --i_count;
          ++r_count;
        }
      }
    }
    state.swap(next);
    if (t > burn_in) {
      const std::size_t k = t - burn_in - 1;
      values[k] = static_cast<double>(s_count) * inv;
      values[n_steps + k] = static_cast<double>(i_count) * inv;
      values[2 * n_steps + k] = static_cast<double>(r_count) * inv;
    }
  }
  return SeriesPanel(3, n_steps, std::move(values), {"S", "I", "R"});
}

// ---------------------------------------------------------------------------
// Synthetic landscapes

SyntheticModel::SyntheticModel(Landscape kind, std::size_t dims, double ripple_amplitude, double ripple_frequency)
    : kind_(kind), amplitude_(ripple_amplitude), frequency_(ripple_frequency) {
  if (dims == 0) throw ConfigError("synthetic landscape needs at least one dimension");
  for (std::size_t i = 0; i < dims; ++i) names_.push_back("x" + std::to_string(i + 1));
}

double SyntheticModel::value(std::span<const double> x) const {
  double f = 0.0;
  for (double v : x) {
    const double d = v - 0.3;
    f += d * d;
    if (kind_ == Landscape::Multimodal) f += amplitude_ * (1.0 - std::cos(2.0 * std::numbers::pi * frequency_ * d));
  }
  return f;
}

SeriesPanel SyntheticModel::simulate(const ParamVector& params, std::size_t n_steps, std::size_t, std::uint64_t) const {
  check_arity(params);
  return SeriesPanel(1, n_steps, std::vector<double>(n_steps, value(params.coords)), {"f"});
}

Landscape landscape_from_string(std::string_view name) {
  if (name == "sphere") return Landscape::Sphere;
  if (name == "multimodal") return Landscape::Multimodal;
  throw ConfigError("unknown synthetic landscape '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

std::uint64_t held_out_seed(std::uint64_t master_seed) {
  return derive_seed(master_seed, ~std::uint64_t{0}, ~std::uint64_t{0}, 0);
}

PseudoTrueTask make_pseudo_true_task(const Model& model, const ParameterSpace& space, const ParamVector& true_params,
                                     std::size_t n_steps, std::size_t burn_in, std::uint64_t seed) {
  if (space.size() != model.param_names().size())
    throw DomainError("space has " + std::to_string(space.size()) + " dimensions but the model calibrates " +
                      std::to_string(model.param_names().size()));
  if (!space.contains(true_params)) throw DomainError("true parameters are not a grid point of the space");
  return {model.simulate(true_params, n_steps, burn_in, held_out_seed(seed)), space, true_params};
}

}  // namespace calib
