#include "calib/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "calib/kernels.hpp"
#include "calib/text.hpp"

namespace calib {

namespace {

constexpr double kConstantTolerance = 1e-12;

struct SeriesStats {
  double mean, var, skew, kurt;
  std::array<double, kMaxLag> acf;
};

SeriesStats series_stats(std::span<const double> x) {
  const auto n = static_cast<double>(x.size());
  SeriesStats s{};
  s.mean = kernels::sum(x) / n;
  const auto c = kernels::central_sums(x, s.mean);
  s.var = c.s2 / n;
  // Zero-variance series: higher moments and autocorrelations are reported as 0.
  if (s.var <= 0.0 || std::sqrt(s.var) <= kConstantTolerance * std::abs(s.mean)) return s;
  s.skew = (c.s3 / n) / (s.var * std::sqrt(s.var));
  s.kurt = (c.s4 / n) / (s.var * s.var) - 3.0;
  for (std::size_t k = 1; k <= kMaxLag; ++k)
    s.acf[k - 1] = std::clamp(kernels::lagged_product(x, k, s.mean) / n / s.var, -1.0, 1.0);
  return s;
}

void put(MomentRow& row, std::size_t offset, const SeriesStats& s) {
  row[offset + 0] = s.mean;
  row[offset + 1] = s.var;
  row[offset + 2] = s.skew;
  row[offset + 3] = s.kurt;
  for (std::size_t k = 0; k < kMaxLag; ++k) row[offset + 4 + k] = s.acf[k];
}

void check_ensemble(const SeriesPanel& real, std::span<const SeriesPanel> simulated, bool same_steps) {
  if (simulated.empty()) throw DomainError("loss: empty simulated ensemble");
  for (const auto& sim : simulated) {
    if (sim.dims() != real.dims())
      throw DomainError("loss: simulated panel has " + std::to_string(sim.dims()) + " dimensions, real has " +
                        std::to_string(real.dims()));
    if (same_steps && sim.steps() != real.steps())
      throw DomainError("loss: simulated panel has " + std::to_string(sim.steps()) + " steps, real has " +
                        std::to_string(real.steps()));
  }
}

}  // namespace

SeriesPanel::SeriesPanel(std::size_t dims, std::size_t steps, std::vector<double> values,
                         std::vector<std::string> names)
    : dims_(dims), steps_(steps), values_(std::move(values)), names_(std::move(names)) {
  if (values_.size() != dims_ * steps_) throw DomainError("SeriesPanel: value count does not match D x T");
  if (!names_.empty() && names_.size() != dims_) throw DomainError("SeriesPanel: one name per dimension expected");
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (!std::isfinite(values_[i]))
      throw DomainError("SeriesPanel: non-finite value in dimension " + std::to_string(i / std::max<std::size_t>(steps_, 1)) +
                        " at step " + std::to_string(i % std::max<std::size_t>(steps_, 1)));
}

SeriesPanel SeriesPanel::from_series(const std::vector<std::vector<double>>& series, std::vector<std::string> names) {
  const std::size_t steps = series.empty() ? 0 : series.front().size();
  std::vector<double> values;
  values.reserve(series.size() * steps);
  for (const auto& s : series) {
    if (s.size() != steps) throw DomainError("SeriesPanel: series lengths differ");
    values.insert(values.end(), s.begin(), s.end());
  }
  return SeriesPanel(series.size(), steps, std::move(values), std::move(names));
}

const std::array<std::string_view, kMomentCount>& moment_names() {
  static const std::array<std::string_view, kMomentCount> names{
      "mean",         "variance",     "skewness",     "kurtosis",     "acf1",         "acf2",
      "acf3",         "acf4",         "acf5",         "diff_mean",    "diff_variance", "diff_skewness",
      "diff_kurtosis", "diff_acf1",   "diff_acf2",    "diff_acf3",    "diff_acf4",    "diff_acf5"};
  return names;
}

MomentRow compute_moments(std::span<const double> series) {
  if (series.size() < kMinMomentLength)
    throw DomainError("compute_moments: series of length " + std::to_string(series.size()) + " is shorter than " +
                      std::to_string(kMinMomentLength));
  for (double v : series)
    if (!std::isfinite(v)) throw DomainError("compute_moments: non-finite value");
  MomentRow row{};
  put(row, 0, series_stats(series));
  std::vector<double> diff(series.size() - 1);
  for (std::size_t t = 0; t + 1 < series.size(); ++t) diff[t] = series[t + 1] - series[t];
  put(row, 9, series_stats(diff));
  return row;
}

std::vector<MomentRow> panel_moments(const SeriesPanel& panel) {
  std::vector<MomentRow> out;
  out.reserve(panel.dims());
  for (std::size_t d = 0; d < panel.dims(); ++d) out.push_back(compute_moments(panel.series(d)));
  return out;
}

WeightSpec relative_weights(std::span<const MomentRow> real_moments, double floor) {
  if (!(floor > 0.0) || !std::isfinite(floor)) throw DomainError("moment weight floor must be positive and finite");
  WeightSpec spec;
  spec.floor = floor;
  spec.weights.reserve(real_moments.size());
  for (const auto& m : real_moments) {
    MomentRow w{};
    for (std::size_t i = 0; i < kMomentCount; ++i)
      w[i] = 1.0 / (static_cast<double>(kMomentCount) * std::max(m[i] * m[i], floor * floor));
    spec.weights.push_back(w);
  }
  return spec;
}

WeightSpec relative_weights(const SeriesPanel& real, double floor) {
  return relative_weights(panel_moments(real), floor);
}

double moments_distance(std::span<const MomentRow> real_moments, std::span<const MomentRow> sim_moments,
                        const WeightSpec& weights) {
  const auto dims = real_moments.size();
  if (dims == 0 || sim_moments.size() != dims || weights.weights.size() != dims)
    throw DomainError("moments_distance: dimension mismatch");
  double total = 0.0;
  for (std::size_t d = 0; d < dims; ++d) {
    double contribution = 0.0;
    for (std::size_t i = 0; i < kMomentCount; ++i) {
      const double g = real_moments[d][i] - sim_moments[d][i];
      contribution += g * g * weights.weights[d][i];
    }
    total += contribution;
  }
  return total / static_cast<double>(dims);
}

double moments_loss(const SeriesPanel& real, std::span<const SeriesPanel> simulated, const WeightSpec& weights) {
  check_ensemble(real, simulated, false);
  if (weights.weights.size() != real.dims()) throw DomainError("moments_loss: one weight row per dimension expected");
  for (const auto& row : weights.weights)
    for (double w : row)
      if (!(w > 0.0) || !std::isfinite(w)) throw DomainError("moments_loss: weights must be positive and finite");
  const auto real_m = panel_moments(real);
  double sum = 0.0;
  for (const auto& sim : simulated) sum += moments_distance(real_m, panel_moments(sim), weights);
  return sum / static_cast<double>(simulated.size());
}

double euclidean_loss(const SeriesPanel& real, std::span<const SeriesPanel> simulated) {
  check_ensemble(real, simulated, true);
  const auto n = static_cast<double>(real.values().size());
  double sum = 0.0;
  for (const auto& sim : simulated) sum += std::sqrt(kernels::squared_distance(real.values(), sim.values()) / n);
  return sum / static_cast<double>(simulated.size());
}

MomentsLoss::MomentsLoss(SeriesPanel real, double floor)
    : LossFunction(std::move(real)), real_moments_(panel_moments(real_)), weights_(relative_weights(real_moments_, floor)) {}

double MomentsLoss::member_loss(const SeriesPanel& simulated) const {
  if (simulated.dims() != real_.dims()) throw DomainError("moments loss: dimension mismatch");
  return moments_distance(real_moments_, panel_moments(simulated), weights_);
}

double EuclideanLoss::member_loss(const SeriesPanel& simulated) const {
  const SeriesPanel* one = &simulated;
  return euclidean_loss(real_, std::span<const SeriesPanel>(one, 1));
}

HpResult hp_filter(std::span<const double> x, double lambda) {
  const std::size_t n = x.size();
  if (n < 4) throw DomainError("hp_filter: series needs at least 4 observations");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("hp_filter: lambda must be positive");
  for (std::size_t t = 0; t < n; ++t)
    if (!std::isfinite(x[t])) throw DomainError("hp_filter: non-finite value at index " + std::to_string(t));

  // Solved through the dual system (I + lambda D D^T) z = D x with cycle = lambda D^T z, D the
  // (n-2) x n second-difference operator. Linear inputs give D x = 0 and therefore a zero cycle
  // even when lambda is huge, which the primal system only reaches up to its conditioning.
  const std::size_t m = n - 2;
  std::vector<double> a0(m, 1.0 + 6.0 * lambda), a1(m, -4.0 * lambda), a2(m, lambda);  // a1[i] = B(i, i-1)

  // B = L D L^T with unit lower-triangular L of bandwidth 2.
  std::vector<double> dg(m), l1(m, 0.0), l2(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (i >= 2) l2[i] = a2[i] / dg[i - 2];
    if (i >= 1) l1[i] = (a1[i] - (i >= 2 ? l2[i] * l1[i - 1] * dg[i - 2] : 0.0)) / dg[i - 1];
    dg[i] = a0[i] - (i >= 1 ? l1[i] * l1[i] * dg[i - 1] : 0.0) - (i >= 2 ? l2[i] * l2[i] * dg[i - 2] : 0.0);
  }

  std::vector<double> z(m);
  for (std::size_t r = 0; r < m; ++r) z[r] = x[r] - 2.0 * x[r + 1] + x[r + 2];
  for (std::size_t i = 1; i < m; ++i) z[i] -= l1[i] * z[i - 1] + (i >= 2 ? l2[i] * z[i - 2] : 0.0);
  for (std::size_t i = 0; i < m; ++i) z[i] /= dg[i];
  for (std::size_t i = m - 1; i-- > 0;) z[i] -= l1[i + 1] * z[i + 1] + (i + 2 < m ? l2[i + 2] * z[i + 2] : 0.0);

  HpResult out;
  out.cycle.assign(n, 0.0);
  out.trend.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    double v = 0.0;
    if (t < m) v += z[t];
    if (t >= 1 && t - 1 < m) v -= 2.0 * z[t - 1];
    if (t >= 2 && t - 2 < m) v += z[t - 2];
    out.cycle[t] = lambda * v;
    out.trend[t] = x[t] - out.cycle[t];
  }
  return out;
}

double hp_lambda_for_frequency(double observations_per_quarter) {
  if (!(observations_per_quarter > 0.0)) throw DomainError("hp_lambda_for_frequency: ratio must be positive");
  return kDefaultHpLambda * std::pow(observations_per_quarter, 4.0);
}

Transform Transform::parse(std::string_view text) {
  Transform t;
  auto name = text;
  std::string_view arg;
  if (const auto colon = text.find(':'); colon != std::string_view::npos) {
    name = text.substr(0, colon);
    arg = text.substr(colon + 1);
  }
  if (name == "identity") t.kind = Kind::Identity;
  else if (name == "log") t.kind = Kind::Log;
  else if (name == "log_difference") t.kind = Kind::LogDifference;
  else if (name == "de_mean") t.kind = Kind::DeMean;
  else if (name == "hp_cycle") {
    t.kind = Kind::HpCycle;
    if (!arg.empty()) {
      try {
        std::size_t used = 0;
        t.lambda = std::stod(std::string(arg), &used);
        if (used != arg.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("transform '" + std::string(text) + "': malformed lambda");
      }
      if (!(t.lambda > 0.0)) throw ConfigError("transform '" + std::string(text) + "': lambda must be positive");
    }
    return t;
  } else {
    throw ConfigError("unknown transform '" + std::string(text) +
                      "' (expected identity, log, hp_cycle[:lambda], log_difference, de_mean)");
  }
  if (!arg.empty()) throw ConfigError("transform '" + std::string(name) + "' takes no argument");
  return t;
}

std::string Transform::to_string() const {
  switch (kind) {
    case Kind::Identity: return "identity";
    case Kind::Log: return "log";
    case Kind::LogDifference: return "log_difference";
    case Kind::DeMean: return "de_mean";
    case Kind::HpCycle: return "hp_cycle:" + format_real(lambda);
  }
  return "identity";
}

bool PreprocessConfig::empty() const {
  for (const auto& list : per_dim)
    for (const auto& t : list)
      if (t.kind != Transform::Kind::Identity) return false;
  return true;
}

SeriesPanel preprocess(const SeriesPanel& raw, const PreprocessConfig& config) {
  if (config.empty()) return raw;
  if (config.per_dim.size() != raw.dims())
    throw DomainError("preprocess: config lists " + std::to_string(config.per_dim.size()) +
                      " dimensions, panel has " + std::to_string(raw.dims()));
  std::vector<std::vector<double>> out(raw.dims());
  for (std::size_t d = 0; d < raw.dims(); ++d) {
    const auto label = raw.names().empty() ? std::to_string(d) : "'" + raw.names()[d] + "'";
    auto s = std::vector<double>(raw.series(d).begin(), raw.series(d).end());
    for (const auto& t : config.per_dim[d]) {
      switch (t.kind) {
        case Transform::Kind::Identity: break;
        case Transform::Kind::Log:
          for (std::size_t i = 0; i < s.size(); ++i) {
            if (!(s[i] > 0.0))
              throw DomainError("preprocess: log of non-positive value in dimension " + label + " at index " +
                                std::to_string(i));
            s[i] = std::log(s[i]);
          }
          break;
        case Transform::Kind::LogDifference: {
          if (s.size() < 2) throw DomainError("preprocess: log_difference needs two observations in dimension " + label);
          std::vector<double> r(s.size() - 1);
          for (std::size_t i = 0; i < s.size(); ++i)
            if (!(s[i] > 0.0))
              throw DomainError("preprocess: log of non-positive value in dimension " + label + " at index " +
                                std::to_string(i));
          for (std::size_t i = 0; i + 1 < s.size(); ++i) r[i] = std::log(s[i + 1]) - std::log(s[i]);
          s = std::move(r);
          break;
        }
        case Transform::Kind::DeMean: {
          if (s.empty()) break;
          const double m = kernels::sum(s) / static_cast<double>(s.size());
          for (auto& v : s) v -= m;
          break;
        }
        case Transform::Kind::HpCycle: s = hp_filter(s, t.lambda).cycle; break;
      }
    }
    out[d] = std::move(s);
  }
  std::size_t t_min = out.front().size();
  for (const auto& s : out) t_min = std::min(t_min, s.size());
  for (auto& s : out) s.erase(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(s.size() - t_min));
  return SeriesPanel::from_series(out, raw.names());
}

SeriesPanel parse_panel_csv(std::string_view text) {
  std::vector<std::string> names;
  std::vector<std::vector<double>> cols;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (header) {
      for (auto f : fields) {
        const auto name = trim(f);
        if (name.empty()) throw DomainError("csv line 1: empty column name");
        names.emplace_back(name);
      }
      cols.resize(names.size());
      header = false;
      continue;
    }
    if (fields.size() != names.size())
      throw DomainError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(names.size()) +
                        " fields, found " + std::to_string(fields.size()));
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto f = trim(fields[c]);
      double v;
      if (f.empty()) throw DomainError("csv line " + std::to_string(line_no) + ": missing value in column '" + names[c] + "'");
      if (!parse_real(f, v) || !std::isfinite(v))
        throw DomainError("csv line " + std::to_string(line_no) + ": malformed value '" + std::string(f) +
                          "' in column '" + names[c] + "'");
      cols[c].push_back(v);
    }
  }
  if (names.empty()) throw DomainError("csv: missing header row");
  if (cols.front().empty()) throw DomainError("csv: no data rows");
  return SeriesPanel::from_series(cols, std::move(names));
}

SeriesPanel read_panel_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open csv file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_panel_csv(buf.str());
}

std::string format_panel_csv(const SeriesPanel& panel) {
  std::string out;
  for (std::size_t d = 0; d < panel.dims(); ++d) {
    if (d) out += ',';
    out += panel.names().empty() ? "x" + std::to_string(d) : panel.names()[d];
  }
  out += '\n';
  for (std::size_t t = 0; t < panel.steps(); ++t) {
    for (std::size_t d = 0; d < panel.dims(); ++d) {
      if (d) out += ',';
      out += format_real(panel.at(d, t));
    }
    out += '\n';
  }
  return out;
}

void write_panel_csv(const SeriesPanel& panel, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_panel_csv(panel);
}

}  // namespace calib
