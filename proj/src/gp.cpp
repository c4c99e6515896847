#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "calib/kernels.hpp"
#include "calib/surrogates.hpp"

namespace calib {

namespace {

constexpr double kMaxJitter = 1e-4;

// In-place lower Cholesky of a row-major n x n matrix. Returns false if not positive definite.
bool cholesky(std::vector<double>& a, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double* rj = a.data() + j * n;
    const double djj = rj[j] - kernels::dot({rj, j}, {rj, j});
    if (!(djj > 0.0) || !std::isfinite(djj)) return false;
    const double ljj = std::sqrt(djj);
    rj[j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double* ri = a.data() + i * n;
      ri[j] = (ri[j] - kernels::dot({ri, j}, {rj, j})) / ljj;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
  return true;
}

// Solves L v = b in place.
void forward_solve(const std::vector<double>& l, std::size_t n, std::span<double> b) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ri = l.data() + i * n;
    b[i] = (b[i] - kernels::dot({ri, i}, {b.data(), i})) / ri[i];
  }
}

// Solves L^T x = v in place.
void backward_solve(const std::vector<double>& l, std::size_t n, std::span<double> v) {
  for (std::size_t i = n; i-- > 0;) {
    const double* ri = l.data() + i * n;
    v[i] /= ri[i];
    const double xi = v[i];
    for (std::size_t k = 0; k < i; ++k) v[k] -= ri[k] * xi;
  }
}

/// Everything needed to evaluate the likelihood for many hyperparameter settings.
struct LikelihoodWorkspace {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<std::vector<double>> diff;  // per dimension, n*n pairwise differences
  std::span<const double> y;
  std::vector<double> mat;
  std::vector<double> tmp;

  LikelihoodWorkspace(const FeatureMatrix& x, std::span<const double> targets)
      : n(x.rows()), d(x.cols()), diff(x.cols()), y(targets), mat(n * n), tmp(n) {
    for (std::size_t f = 0; f < d; ++f) {
      auto& s = diff[f];
      s.resize(n * n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s[i * n + j] = x(i, f) - x(j, f);
    }
  }

  // Factorizes C + (ratio + jitter) I, escalating jitter as needed; returns the jitter used or -1.
  double factor(const std::vector<double>& lengthscales, double ratio) {
    std::vector<double> base(n * n, 0.0);
    for (std::size_t f = 0; f < d; ++f)
      kernels::accumulate_weighted_sq_diff(base, diff[f], 0.0, 1.0 / (lengthscales[f] * lengthscales[f]));
    for (double& v : base) v = std::exp(-0.5 * v);
    double jitter = 0.0;
    while (true) {
      mat = base;
      for (std::size_t i = 0; i < n; ++i) mat[i * n + i] += ratio + jitter;
      if (cholesky(mat, n)) return jitter;
      jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
      if (jitter > kMaxJitter * (1 + 1e-9)) return -1.0;
    }
  }

  // yT (C + rI)^-1 y and log det(C + rI) from the current factor.
  std::pair<double, double> quad_logdet() {
    std::copy(y.begin(), y.end(), tmp.begin());
    forward_solve(mat, n, tmp);
    double logdet = 0.0;
    for (std::size_t i = 0; i < n; ++i) logdet += std::log(mat[i * n + i]);
    return {kernels::dot(tmp, tmp), 2.0 * logdet};
  }
};

double lml_at_scale(double quad, double logdet, double s, std::size_t n) {
  const double nn = static_cast<double>(n);
  return -0.5 * quad / s - 0.5 * logdet - 0.5 * nn * std::log(s) - 0.5 * nn * std::log(2.0 * std::numbers::pi);
}

struct Candidate {
  std::vector<double> lengthscales;
  double ratio = 0.0;  // noise / signal
  double signal = 1.0;
  double lml = -std::numeric_limits<double>::infinity();
};

// Profiles the signal variance in closed form within the configured box.
Candidate evaluate(LikelihoodWorkspace& ws, const GpConfig& cfg, std::vector<double> ls, double ratio) {
  Candidate c;
  c.lengthscales = std::move(ls);
  c.ratio = ratio;
  const double s_lo = std::max(cfg.signal_var_min, cfg.noise_var_min / ratio);
  const double s_hi = std::min(cfg.signal_var_max, cfg.noise_var_max / ratio);
  if (s_lo > s_hi * (1 + 1e-12)) return c;
  const double jitter = ws.factor(c.lengthscales, ratio);
  if (jitter < 0.0) return c;
  const auto [quad, logdet] = ws.quad_logdet();
  c.signal = std::clamp(quad / static_cast<double>(ws.n), s_lo, s_hi);
  c.lml = lml_at_scale(quad, logdet, c.signal, ws.n);
  return c;
}

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    g[i] = std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)));
  }
  return g;
}

}  // namespace

double gp_log_marginal_likelihood(const FeatureMatrix& x, std::span<const double> y, const GpHyperparameters& hyper) {
  if (hyper.lengthscales.size() != x.cols()) throw DomainError("one lengthscale per input dimension is required");
  if (!(hyper.signal_var > 0.0) || !(hyper.noise_var >= 0.0)) throw DomainError("GP variances must be positive");
  LikelihoodWorkspace ws(x, y);
  if (ws.factor(hyper.lengthscales, hyper.noise_var / hyper.signal_var) < 0.0)
    throw SingularKernelError("GP kernel matrix is not positive definite even with maximal jitter");
  const auto [quad, logdet] = ws.quad_logdet();
  return lml_at_scale(quad, logdet, hyper.signal_var, ws.n);
}

GaussianProcessModel GaussianProcessModel::fit(const FeatureMatrix& x, std::span<const double> y,
                                               const GpConfig& config) {
  if (y.size() != x.rows()) throw DomainError("GP targets length mismatch");
  if (x.cols() == 0) throw DomainError("GP needs at least one input dimension");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (std::isfinite(y[i])) keep.push_back(i);
  if (keep.empty()) throw InsufficientDataError("GP needs at least one finite target");
  if (config.max_points > 0 && keep.size() > config.max_points) {
    std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) { return y[a] < y[b]; });
    keep.resize(config.max_points);
    std::sort(keep.begin(), keep.end());
  }

  GaussianProcessModel m;
  m.n_ = keep.size();
  const std::size_t n = m.n_, d = x.cols();
  m.x_ = FeatureMatrix(n, d);
  m.y_.resize(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += y[keep[i]];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (y[keep[i]] - mean) * (y[keep[i]] - mean);
  var /= static_cast<double>(n);
  m.y_mean_ = mean;
  m.y_scale_ = var > 0.0 ? std::sqrt(var) : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < d; ++f) m.x_(i, f) = x(keep[i], f);
    m.y_[i] = (y[keep[i]] - mean) / m.y_scale_;
  }
  m.columns_.assign(d, std::vector<double>(n));
  for (std::size_t f = 0; f < d; ++f)
    for (std::size_t i = 0; i < n; ++i) m.columns_[f][i] = m.x_(i, f);

  LikelihoodWorkspace ws(m.x_, m.y_);
  Candidate best;
  if (config.fixed) {
    const auto& h = *config.fixed;
    if (h.lengthscales.size() != d) throw DomainError("one lengthscale per input dimension is required");
    if (!(h.signal_var > 0.0) || !(h.noise_var >= 0.0)) throw DomainError("GP variances must be positive");
    best.lengthscales = h.lengthscales;
    best.ratio = h.noise_var / h.signal_var;
    best.signal = h.signal_var;
  } else {
    const double r_lo = config.noise_var_min / config.signal_var_max;
    const double r_hi = config.noise_var_max / config.signal_var_min;
    const auto ls_grid = log_grid(config.lengthscale_min, config.lengthscale_max, 7);
    const auto r_grid = log_grid(std::max(r_lo, 1e-6), std::min(r_hi, 1.0), 5);
    for (double l : ls_grid)
      for (double r : r_grid) {
        auto c = evaluate(ws, config, std::vector<double>(d, l), r);
        if (c.lml > best.lml) best = std::move(c);
      }
    if (!std::isfinite(best.lml))
      throw SingularKernelError("GP kernel matrix is not positive definite for any hyperparameter candidate");
    // coordinate refinement: per-dimension lengthscales, then the noise ratio
    for (std::size_t pass = 0; pass < config.refine_passes; ++pass) {
      for (std::size_t f = 0; f < d; ++f)
        for (double factor : {0.5, 2.0}) {
          auto ls = best.lengthscales;
          ls[f] = std::clamp(ls[f] * factor, config.lengthscale_min, config.lengthscale_max);
          if (ls[f] == best.lengthscales[f]) continue;
          auto c = evaluate(ws, config, std::move(ls), best.ratio);
          if (c.lml > best.lml) best = std::move(c);
        }
      for (double factor : {0.1, 10.0}) {
        const double r = std::clamp(best.ratio * factor, r_lo, r_hi);
        if (r == best.ratio) continue;
        auto c = evaluate(ws, config, best.lengthscales, r);
        if (c.lml > best.lml) best = std::move(c);
      }
    }
  }

  m.jitter_ = ws.factor(best.lengthscales, best.ratio);
  if (m.jitter_ < 0.0) throw SingularKernelError("GP kernel matrix is not positive definite even with maximal jitter");
  const auto [quad, logdet] = ws.quad_logdet();
  m.lml_ = lml_at_scale(quad, logdet, best.signal, n);
  m.chol_ = std::move(ws.mat);
  m.hyper_ = {best.lengthscales, best.signal, best.ratio * best.signal};
  m.alpha_ = m.y_;
  forward_solve(m.chol_, n, m.alpha_);
  backward_solve(m.chol_, n, m.alpha_);
  return m;
}

void GaussianProcessModel::kernel_row(std::span<const double> x, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t f = 0; f < columns_.size(); ++f) {
    const double l = hyper_.lengthscales[f];
    kernels::accumulate_weighted_sq_diff(out, columns_[f], x[f], 1.0 / (l * l));
  }
  for (double& v : out) v = std::exp(-0.5 * v);
}

GpPosterior GaussianProcessModel::posterior_standardized(std::span<const double> x) const {
  if (x.size() != columns_.size()) throw DomainError("GP input has the wrong dimension");
  std::vector<double> k(n_);
  kernel_row(x, k);
  // alpha_ solves (C + rI) a = y, so the mean needs no signal scaling
  const double mean = kernels::dot(k, alpha_);
  forward_solve(chol_, n_, k);
  const double var = hyper_.signal_var * (1.0 - kernels::dot(k, k));
  return {mean, std::max(var, 0.0)};
}

GpPosterior GaussianProcessModel::posterior(std::span<const double> x) const {
  const auto p = posterior_standardized(x);
  return {y_mean_ + y_scale_ * p.mean, y_scale_ * y_scale_ * p.variance};
}

double expected_improvement(double mean, double sd, double best) {
  const double gap = best - mean;
  if (!(sd > 0.0)) return std::max(gap, 0.0);
  const double z = gap / sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(gap * cdf + sd * pdf, 0.0);
}

double expected_improvement(const GaussianProcessModel& model, std::span<const double> x, double best) {
  const auto p = model.posterior(x);
  return expected_improvement(p.mean, std::sqrt(p.variance), best);
}

}  // namespace calib
