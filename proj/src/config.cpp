#include "calib/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace calib {

namespace {

using Json = nlohmann::ordered_json;

const Json& empty_object() {
  static const Json e = Json::object();
  return e;
}

// One JSON object being read. Every accessed key is echoed, with its effective value, into out().
class Section {
 public:
  Section(const Json& in, std::string path) : in_(in), path_(std::move(path)) {
    if (!in_.is_object()) fail("", "expected an object");
  }

  std::string key_path(std::string_view key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }
  [[noreturn]] void fail(std::string_view key, const std::string& message) const {
    throw ConfigError("config: " + key_path(key) + ": " + message);
  }

  const Json* find(std::string_view key) {
    used_.emplace(key);
    auto it = in_.find(std::string(key));
    return it == in_.end() ? nullptr : &*it;
  }
  bool has(std::string_view key) const { return in_.contains(std::string(key)); }

  double real(std::string_view key, std::optional<double> def) {
    const auto* v = find(key);
    double x;
    if (!v) {
      if (!def) fail(key, "required");
      x = *def;
    } else if (v->is_number()) {
      x = v->get<double>();
    } else {
      fail(key, "expected a number");
    }
    out_[std::string(key)] = x;
    return x;
  }

  std::uint64_t u64(std::string_view key, std::optional<std::uint64_t> def) {
    const auto* v = find(key);
    std::uint64_t x;
    if (!v) {
      if (!def) fail(key, "required");
      x = *def;
    } else if (v->is_number_unsigned()) {
      x = v->get<std::uint64_t>();
    } else {
      fail(key, "expected a non-negative integer");
    }
    out_[std::string(key)] = x;
    return x;
  }

  std::size_t size(std::string_view key, std::optional<std::size_t> def) {
    return static_cast<std::size_t>(u64(key, def ? std::optional<std::uint64_t>(*def) : std::nullopt));
  }

  bool flag(std::string_view key, bool def) {
    const auto* v = find(key);
    bool x = def;
    if (v) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      x = v->get<bool>();
    }
    out_[std::string(key)] = x;
    return x;
  }

  std::string text(std::string_view key, std::optional<std::string> def) {
    const auto* v = find(key);
    std::string x;
    if (!v) {
      if (!def) fail(key, "required");
      x = *def;
    } else if (v->is_string()) {
      x = v->get<std::string>();
    } else {
      fail(key, "expected a string");
    }
    out_[std::string(key)] = x;
    return x;
  }

  std::vector<std::string> texts(std::string_view key, std::optional<std::vector<std::string>> def) {
    const auto* v = find(key);
    std::vector<std::string> x;
    if (!v) {
      if (!def) fail(key, "required");
      x = *def;
    } else {
      if (!v->is_array()) fail(key, "expected an array of strings");
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_string()) fail(std::string(key) + "[" + std::to_string(i) + "]", "expected a string");
        x.push_back((*v)[i].get<std::string>());
      }
    }
    out_[std::string(key)] = x;
    return x;
  }

  Section child(std::string_view key) {
    const auto* v = find(key);
    return Section(v ? *v : empty_object(), key_path(key));
  }

  /// Array of objects under key; an absent key yields an empty list unless required.
  std::vector<Section> children(std::string_view key, bool required) {
    const auto* v = find(key);
    std::vector<Section> out;
    if (!v) {
      if (required) fail(key, "required");
      return out;
    }
    if (!v->is_array()) fail(key, "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i)
      out.emplace_back((*v)[i], key_path(key) + "[" + std::to_string(i) + "]");
    return out;
  }

  void put(std::string_view key, Json value) {
    used_.emplace(key);
    out_[std::string(key)] = std::move(value);
  }
  void attach(std::string_view key, Section& child) { put(key, child.finish()); }
  void attach(std::string_view key, std::vector<Section>& list) {
    Json arr = Json::array();
    for (auto& s : list) arr.push_back(s.finish());
    put(key, std::move(arr));
  }

  /// Rejects keys that were never read and returns the echo.
  Json finish() {
    for (auto it = in_.begin(); it != in_.end(); ++it)
      if (!used_.count(it.key())) fail(it.key(), "unknown key");
    return out_;
  }

 private:
  const Json& in_;
  std::string path_;
  std::set<std::string, std::less<>> used_;
  Json out_ = Json::object();
};

template <class F>
auto rethrow_as_config(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind("config: ", 0) == 0) throw;
    throw ConfigError("config: " + where + ": " + msg);
  } catch (const DomainError& e) {
    throw ConfigError("config: " + where + ": " + e.what());
  } catch (const FormatError& e) {
    throw ConfigError("config: " + where + ": " + e.what());
  }
}

// Validation messages already start with the key path.
template <class F>
void with_config_prefix(F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ParameterSpace parse_space(std::vector<Section>& dims) {
  std::vector<ParameterDim> out;
  for (auto& d : dims) {
    const auto name = d.text("name", std::nullopt);
    const double lo = d.real("lower", std::nullopt);
    const double hi = d.real("upper", std::nullopt);
    if (!(hi > lo)) d.fail("upper", "must exceed lower");
    const double step = d.real("step", (hi - lo) / 100.0);
    out.push_back(rethrow_as_config(d.key_path(""), [&] { return make_dim(name, lo, hi, step); }));
  }
  if (out.empty()) throw ConfigError("config: space: at least one parameter is required");
  return rethrow_as_config("space", [&] { return ParameterSpace(std::move(out)); });
}

bool is_synthetic(const std::string& name) { return name == "sphere" || name == "multimodal"; }

std::shared_ptr<const Model> build_model(Section& m, const std::vector<std::string>& names) {
  const auto name = m.text("name", std::nullopt);
  if (name == "bh4") {
    BrockHommesConfig c;
    c.gross_return = m.real("gross_return", c.gross_return);
    if (m.has("types")) {
      auto types = m.children("types", true);
      c.types.clear();
      for (auto& t : types) c.types.push_back({t.real("g", std::nullopt), t.real("b", std::nullopt)});
      m.attach("types", types);
    } else {
      Json arr = Json::array();
      for (const auto& t : c.types) arr.push_back(Json{{"g", t.g}, {"b", t.b}});
      m.put("types", std::move(arr));
    }
    c.beta = m.real("beta", c.beta);
    c.memory = m.real("memory", c.memory);
    c.noise_sd = m.real("noise_sd", c.noise_sd);
    c.x0 = m.real("x0", c.x0);
    c.calibrated = names;
    return rethrow_as_config("space", [&] { return std::make_shared<BrockHommesModel>(c); });
  }
  if (name == "sir") {
    SirConfig c;
    c.nodes = m.size("nodes", c.nodes);
    c.degree = m.size("degree", c.degree);
    c.rewire = m.real("p", c.rewire);
    c.infect = m.real("beta", c.infect);
    c.recover = m.real("gamma", c.recover);
    c.initial_infected = m.real("initial_infected", c.initial_infected);
    c.calibrated = names;
    return rethrow_as_config("model", [&] { return std::make_shared<SirModel>(c); });
  }
  if (is_synthetic(name)) {
    const auto kind = landscape_from_string(name);
    double amp = 0.05, freq = 5.0;
    if (kind == Landscape::Multimodal) {
      amp = m.real("ripple_amplitude", amp);
      freq = m.real("ripple_frequency", freq);
    }
    return rethrow_as_config("model", [&] { return std::make_shared<SyntheticModel>(kind, names.size(), amp, freq); });
  }
  if (name == "external") {
    const auto argv = m.texts("command", std::nullopt);
    const auto dims = m.size("output_dims", 1);
    const auto timeout = m.size("timeout_ms", 60000);
    return rethrow_as_config("model", [&] {
      return std::make_shared<ExternalModel>(argv, names, dims, std::chrono::milliseconds(timeout));
    });
  }
  m.fail("name", "unknown model '" + name + "' (expected bh4, sir, sphere, multimodal or external)");
}

// Either one list of transforms for every dimension, or one list per dimension.
PreprocessConfig parse_transforms(Section& s, std::string_view key, std::size_t dims) {
  const auto* v = s.find(key);
  PreprocessConfig cfg;
  Json echo = Json::array();
  if (v) {
    const auto where = s.key_path(key);
    if (!v->is_array()) s.fail(key, "expected an array");
    auto parse_list = [&](const Json& list, const std::string& path) {
      if (!list.is_array()) throw ConfigError("config: " + path + ": expected an array of transform names");
      std::vector<Transform> out;
      for (std::size_t i = 0; i < list.size(); ++i) {
        const auto p = path + "[" + std::to_string(i) + "]";
        if (!list[i].is_string()) throw ConfigError("config: " + p + ": expected a string");
        out.push_back(rethrow_as_config(p, [&] { return Transform::parse(list[i].get<std::string>()); }));
      }
      return out;
    };
    const bool flat = std::all_of(v->begin(), v->end(), [](const Json& e) { return e.is_string(); });
    if (flat && !v->empty()) {
      cfg.per_dim.assign(dims, parse_list(*v, where));
    } else if (!v->empty()) {
      if (v->size() != dims)
        s.fail(key, "lists " + std::to_string(v->size()) + " dimensions, the panel has " + std::to_string(dims));
      for (std::size_t d = 0; d < dims; ++d) cfg.per_dim.push_back(parse_list((*v)[d], where + "[" + std::to_string(d) + "]"));
    }
  }
  for (const auto& list : cfg.per_dim) {
    Json l = Json::array();
    for (const auto& t : list) l.push_back(t.to_string());
    echo.push_back(std::move(l));
  }
  s.put(key, std::move(echo));
  return cfg;
}

StrategyConfig parse_strategy(Section& s) {
  StrategyConfig c;
  const auto kind = s.text("kind", "single");
  c.kind = rethrow_as_config(s.key_path("kind"), [&] { return strategy_kind_from_string(kind); });
  c.arms.clear();
  const auto arms = s.texts("arms", std::vector<std::string>{"RF"});
  for (std::size_t i = 0; i < arms.size(); ++i)
    c.arms.push_back(rethrow_as_config(s.key_path("arms") + "[" + std::to_string(i) + "]",
                                       [&] { return sampler_id_from_string(arms[i]); }));
  c.epsilon = s.real("epsilon", c.epsilon);
  c.alpha = s.real("alpha", c.alpha);
  return c;
}

SamplerOptions parse_samplers(Section& s) {
  SamplerOptions o;
  auto& sur = o.surrogate;
  sur.pool_size = s.size("pool_size", sur.pool_size);
  if (sur.pool_size < 1) s.fail("pool_size", "must be >= 1");

  auto f = s.child("forest");
  sur.forest.n_bins = f.size("n_bins", sur.forest.n_bins);
  sur.forest.n_trees = f.size("n_trees", sur.forest.n_trees);
  sur.forest.max_depth = f.size("max_depth", sur.forest.max_depth);
  sur.forest.min_samples_leaf = f.size("min_samples_leaf", sur.forest.min_samples_leaf);
  sur.forest.features_per_split = f.size("features_per_split", sur.forest.features_per_split);
  sur.forest.bootstrap = f.flag("bootstrap", sur.forest.bootstrap);
  if (sur.forest.n_bins < 2) f.fail("n_bins", "must be >= 2");
  if (sur.forest.n_trees < 1) f.fail("n_trees", "must be >= 1");
  if (sur.forest.min_samples_leaf < 1) f.fail("min_samples_leaf", "must be >= 1");
  s.attach("forest", f);

  auto b = s.child("boosted");
  sur.boosted.n_rounds = b.size("n_rounds", sur.boosted.n_rounds);
  sur.boosted.max_depth = b.size("max_depth", sur.boosted.max_depth);
  sur.boosted.learning_rate = b.real("learning_rate", sur.boosted.learning_rate);
  sur.boosted.min_samples_leaf = b.size("min_samples_leaf", sur.boosted.min_samples_leaf);
  if (!(sur.boosted.learning_rate > 0.0)) b.fail("learning_rate", "must be positive");
  if (sur.boosted.min_samples_leaf < 1) b.fail("min_samples_leaf", "must be >= 1");
  s.attach("boosted", b);

  auto g = s.child("gp");
  auto& gp = sur.gp;
  gp.max_points = g.size("max_points", gp.max_points);
  const auto acq = g.text("acquisition", "ei");
  if (acq == "ei") gp.acquisition = Acquisition::ExpectedImprovement;
  else if (acq == "mean") gp.acquisition = Acquisition::PosteriorMean;
  else if (acq == "lcb") gp.acquisition = Acquisition::LowerConfidenceBound;
  else g.fail("acquisition", "unknown acquisition '" + acq + "' (expected ei, mean or lcb)");
  gp.lcb_kappa = g.real("lcb_kappa", gp.lcb_kappa);
  gp.refine_passes = g.size("refine_passes", gp.refine_passes);
  gp.lengthscale_min = g.real("lengthscale_min", gp.lengthscale_min);
  gp.lengthscale_max = g.real("lengthscale_max", gp.lengthscale_max);
  gp.signal_var_min = g.real("signal_var_min", gp.signal_var_min);
  gp.signal_var_max = g.real("signal_var_max", gp.signal_var_max);
  gp.noise_var_min = g.real("noise_var_min", gp.noise_var_min);
  gp.noise_var_max = g.real("noise_var_max", gp.noise_var_max);
  if (gp.max_points < 2) g.fail("max_points", "must be >= 2");
  if (!(gp.lengthscale_min > 0.0 && gp.lengthscale_max >= gp.lengthscale_min))
    g.fail("lengthscale_max", "bounds must satisfy 0 < min <= max");
  if (!(gp.signal_var_min > 0.0 && gp.signal_var_max >= gp.signal_var_min))
    g.fail("signal_var_max", "bounds must satisfy 0 < min <= max");
  if (!(gp.noise_var_min > 0.0 && gp.noise_var_max >= gp.noise_var_min))
    g.fail("noise_var_max", "bounds must satisfy 0 < min <= max");
  s.attach("gp", g);

  auto bb = s.child("best_batch");
  auto& opt = o.best_batch;
  opt.delta = bb.real("delta", opt.delta);
  opt.elite_factor = bb.size("elite_factor", opt.elite_factor);
  opt.subset_fraction = bb.real("subset_fraction", opt.subset_fraction);
  opt.max_attempts = bb.size("max_attempts", opt.max_attempts);
  if (!(opt.delta >= 0.0)) bb.fail("delta", "must be >= 0");
  if (opt.elite_factor < 1) bb.fail("elite_factor", "must be >= 1");
  if (!(opt.subset_fraction > 0.0 && opt.subset_fraction <= 1.0)) bb.fail("subset_fraction", "must lie in (0, 1]");
  s.attach("best_batch", bb);
  return o;
}

SeriesPanel select_columns(const SeriesPanel& panel, const std::vector<std::string>& columns) {
  if (columns.empty()) return panel;
  std::vector<std::vector<double>> series;
  for (const auto& name : columns) {
    const auto it = std::find(panel.names().begin(), panel.names().end(), name);
    if (it == panel.names().end()) throw DomainError("no column named '" + name + "' in the data");
    const auto s = panel.series(static_cast<std::size_t>(it - panel.names().begin()));
    series.emplace_back(s.begin(), s.end());
  }
  return SeriesPanel::from_series(series, columns);
}

}  // namespace

SeriesPanel prepare_real(const RunSpec& spec, const SeriesPanel& raw) {
  return preprocess(select_columns(raw, spec.data_columns), spec.real_preprocessing);
}

std::size_t default_workers() {
  if (const char* env = std::getenv("CALIB_WORKERS"); env && *env) {
    char* end = nullptr;
    const auto n = std::strtoul(env, &end, 10);
    if (*end != '\0' || n == 0) throw ConfigError("CALIB_WORKERS: expected a positive integer, got '" + std::string(env) + "'");
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

RunSpec parse_run_spec(std::string_view json_text, const std::filesystem::path& base_dir,
                       const ConfigOverrides& overrides) {
  Json doc;
  try {
    doc = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  Section root(doc, "");
  RunSpec spec;
  auto& c = spec.calibration;

  if (root.has("description")) root.text("description", "");

  auto seeds = root.child("seeds");
  c.master_seed = seeds.u64("master_seed", 0);
  if (overrides.master_seed) {
    c.master_seed = *overrides.master_seed;
    seeds.put("master_seed", c.master_seed);
  }

  auto budget = root.child("budget");
  c.batch_size = budget.size("batch_size", c.batch_size);
  c.ensemble_size = budget.size("ensemble_size", c.ensemble_size);
  c.n_batches = budget.size("n_batches", c.n_batches);
  c.n_steps = budget.size("n_steps", c.n_steps);
  c.burn_in = budget.size("burn_in", c.burn_in);

  auto space_list = root.children("space", true);
  c.space = parse_space(space_list);

  auto model = root.child("model");
  c.model = build_model(model, c.space.names());
  const std::string model_name(c.model->name());

  auto data = root.child("data");
  const auto source = data.text("source", is_synthetic(model_name) ? std::optional<std::string>("zeros") : std::nullopt);
  SeriesPanel raw;
  if (source == "zeros") {
    raw = SeriesPanel(c.model->output_dims(), c.n_steps, std::vector<double>(c.model->output_dims() * c.n_steps, 0.0));
  } else if (source == "csv") {
    const auto rel = data.text("path", std::nullopt);
    const auto path = std::filesystem::absolute(base_dir / rel).lexically_normal();
    data.put("path", path.string());
    if (!std::filesystem::exists(path)) data.fail("path", "no such file: " + path.string());
    spec.data_columns = data.texts("columns", std::vector<std::string>{});
    const auto file = rethrow_as_config(data.key_path("path"), [&] { return read_panel_csv(path); });
    raw = rethrow_as_config(data.key_path("columns"), [&] { return select_columns(file, spec.data_columns); });
  } else if (source == "pseudo_true") {
    auto tp = data.child("true_params");
    std::vector<double> truth;
    for (const auto& name : c.space.names()) truth.push_back(tp.real(name, std::nullopt));
    data.attach("true_params", tp);
    const auto data_seed = data.u64("seed", c.master_seed);
    spec.true_params = ParamVector{truth};
    raw = rethrow_as_config(data.key_path("true_params"), [&] {
      return make_pseudo_true_task(*c.model, c.space, *spec.true_params, c.n_steps, c.burn_in, data_seed).real;
    });
  } else {
    data.fail("source", "unknown source '" + source + "' (expected zeros, csv or pseudo_true)");
  }

  auto pre = root.child("preprocessing");
  spec.real_preprocessing = parse_transforms(pre, "real", raw.dims());
  c.simulated_preprocessing = parse_transforms(pre, "simulated", c.model->output_dims());
  spec.real = rethrow_as_config("preprocessing.real", [&] { return preprocess(raw, spec.real_preprocessing); });
  spec.raw = std::move(raw);

  auto loss = root.child("loss");
  const auto kind = loss.text("kind", "moments");
  if (kind == "moments") {
    const double floor = loss.real("floor", kDefaultMomentFloor);
    if (!(floor > 0.0)) loss.fail("floor", "must be positive");
    c.loss = rethrow_as_config("loss", [&] { return std::make_shared<MomentsLoss>(spec.real, floor); });
  } else if (kind == "euclidean") {
    c.loss = std::make_shared<EuclideanLoss>(spec.real);
  } else {
    loss.fail("kind", "unknown loss '" + kind + "' (expected moments or euclidean)");
  }
  if (const auto* p = loss.find("failure_penalty"); p && !(p->is_string() && p->get<std::string>() == "inf")) {
    c.failure_penalty = loss.real("failure_penalty", std::nullopt);
  } else {
    loss.put("failure_penalty", "inf");
  }

  auto strategy = root.child("strategy");
  c.strategy = parse_strategy(strategy);

  auto samplers = root.child("samplers");
  c.samplers = parse_samplers(samplers);

  auto output = root.child("output");
  auto dir = std::filesystem::path(output.text("dir", "calib_output"));
  if (overrides.output_dir) dir = *overrides.output_dir;
  c.output_dir = std::filesystem::absolute(dir).lexically_normal();
  output.put("dir", c.output_dir.string());
  const auto workers = output.size("workers", 0);
  c.workers = overrides.workers ? *overrides.workers : workers > 0 ? workers : default_workers();
  if (c.workers == 0) throw ConfigError("--workers: must be >= 1");

  std::optional<Section> bench;
  std::vector<Section> bench_strategies;
  if (root.has("benchmark")) {
    bench.emplace(root.child("benchmark"));
    BenchmarkConfig b;
    b.base = c;
    bench_strategies = bench->children("strategies", true);
    for (auto& s : bench_strategies) {
      BenchmarkStrategy bs;
      bs.strategy = parse_strategy(s);
      bs.name = s.text("name", bs.strategy.label());
      b.strategies.push_back(std::move(bs));
    }
    b.repetitions = bench->size("repetitions", b.repetitions);
    if (bench->has("seeds")) {
      const auto* arr = bench->find("seeds");
      if (!arr->is_array()) bench->fail("seeds", "expected an array of seeds");
      for (const auto& v : *arr) {
        if (!v.is_number_unsigned()) bench->fail("seeds", "expected non-negative integers");
        b.seeds.push_back(v.get<std::uint64_t>());
      }
      bench->put("seeds", b.seeds);
    }
    with_config_prefix([&] { b.validate(); });
    spec.benchmark = std::move(b);
  }

  // Echo in a fixed, readable order.
  Json resolved = Json::object();
  if (doc.contains("description")) resolved["description"] = doc["description"];
  resolved["model"] = model.finish();
  {
    Json arr = Json::array();
    for (auto& d : space_list) arr.push_back(d.finish());
    resolved["space"] = std::move(arr);
  }
  resolved["data"] = data.finish();
  resolved["preprocessing"] = pre.finish();
  resolved["loss"] = loss.finish();
  resolved["strategy"] = strategy.finish();
  resolved["samplers"] = samplers.finish();
  resolved["budget"] = budget.finish();
  resolved["seeds"] = seeds.finish();
  resolved["output"] = output.finish();
  if (bench) {
    bench->attach("strategies", bench_strategies);
    resolved["benchmark"] = bench->finish();
  }
  root.finish();
  spec.resolved = resolved.dump(2) + "\n";

  with_config_prefix([&] { c.validate(); });
  return spec;
}

RunSpec load_run_spec(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_spec(buf.str(), path.parent_path(), overrides);
}

}  // namespace calib
