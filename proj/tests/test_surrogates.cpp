#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "calib/core.hpp"
#include "calib/surrogates.hpp"
#include "oracles.hpp"

using namespace calib;

namespace {

FeatureMatrix random_inputs(Rng& rng, std::size_t n, std::size_t d) {
  FeatureMatrix x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = uniform01(rng);
  return x;
}

double bowl(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += (v - 0.3) * (v - 0.3);
  return s;
}

std::vector<double> targets(const FeatureMatrix& x, double (*f)(std::span<const double>)) {
  std::vector<double> y(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) y[i] = f(x.row(i));
  return y;
}

std::vector<std::vector<double>> rows_of(const FeatureMatrix& x) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < x.rows(); ++i) out.emplace_back(x.row(i).begin(), x.row(i).end());
  return out;
}

}  // namespace

TEST_CASE("unlimited regression tree interpolates distinct training points") {
  Rng rng(3);
  const auto x = random_inputs(rng, 60, 2);
  const auto y = targets(x, bowl);
  const std::vector<double> w(60, 1.0);
  auto tree = RegressionTree::fit_regression(x, SortedColumns(x), y, w, {}, rng);
  for (std::size_t i = 0; i < 60; ++i) CHECK(tree.predict(x.row(i)) == doctest::Approx(y[i]).epsilon(1e-12));
  CHECK(tree.leaf_count() == 60);
}

TEST_CASE("tree respects depth and leaf-size limits") {
  Rng rng(5);
  const auto x = random_inputs(rng, 200, 3);
  const auto y = targets(x, bowl);
  const std::vector<double> w(200, 1.0);
  TreeConfig cfg;
  cfg.max_depth = 3;
  auto shallow = RegressionTree::fit_regression(x, SortedColumns(x), y, w, cfg, rng);
  CHECK(shallow.depth() <= 3);
  CHECK(shallow.leaf_count() <= 8);

  cfg.max_depth = 0;
  cfg.min_samples_leaf = 7;
  auto bushy = RegressionTree::fit_regression(x, SortedColumns(x), y, w, cfg, rng);
  std::map<std::size_t, int> per_leaf;
  for (std::size_t i = 0; i < 200; ++i) ++per_leaf[bushy.leaf_of(x.row(i))];
  for (auto [leaf, count] : per_leaf) CHECK(count >= 7);
}

TEST_CASE("classifier tree separates a threshold rule") {
  Rng rng(9);
  const auto x = random_inputs(rng, 100, 2);
  std::vector<int> labels(100);
  for (std::size_t i = 0; i < 100; ++i) labels[i] = x(i, 1) > 0.5 ? 1 : 0;
  const std::vector<double> w(100, 1.0);
  auto tree = RegressionTree::fit_classifier(x, SortedColumns(x), labels, 2, w, {}, rng);
  CHECK(tree.leaf_count() == 2);
  CHECK(tree.nodes()[0].feature == 1);
  for (std::size_t i = 0; i < 100; ++i) CHECK(tree.leaf_value(x.row(i))[static_cast<std::size_t>(labels[i])] == 1.0);
}

TEST_CASE("zero-weight samples are ignored") {
  const auto x = FeatureMatrix::from_rows({{0.0}, {1.0}, {2.0}, {3.0}});
  const std::vector<double> y{1.0, 1.0, 100.0, 1.0};
  const std::vector<double> w{1.0, 2.0, 0.0, 1.0};
  Rng rng(1);
  auto tree = RegressionTree::fit_regression(x, SortedColumns(x), y, w, {}, rng);
  CHECK(tree.leaf_count() == 1);
  CHECK(tree.predict(std::vector<double>{2.0}) == 1.0);
}

TEST_CASE("quantile bins: equal-frequency on distinct losses") {
  std::vector<double> losses(100);
  for (std::size_t i = 0; i < 100; ++i) losses[i] = static_cast<double>((i * 37) % 100);
  const auto bins = quantile_bins(losses, 10);
  REQUIRE(bins.count() == 10);
  std::vector<int> sizes(10, 0);
  for (std::size_t i = 0; i < 100; ++i) {
    ++sizes[static_cast<std::size_t>(bins.labels[i])];
    CHECK(bins.labels[i] == static_cast<int>(losses[i]) / 10);
    CHECK(bins.bin_of(losses[i]) == static_cast<std::size_t>(bins.labels[i]));
  }
  for (int s : sizes) CHECK(s == 10);
  CHECK(bins.edges[1] == 9.5);
}

TEST_CASE("quantile bins: ties share a bin and empty bins vanish") {
  const std::vector<double> all_equal(30, 2.5);
  const auto one = quantile_bins(all_equal, 10);
  CHECK(one.count() == 1);
  for (int l : one.labels) CHECK(l == 0);

  const std::vector<double> few{3.0, 1.0, 2.0};
  CHECK(quantile_bins(few, 10).count() == 3);

  std::vector<double> heavy_ties(20, 0.0);
  for (std::size_t i = 15; i < 20; ++i) heavy_ties[i] = static_cast<double>(i);
  const auto b = quantile_bins(heavy_ties, 10);
  for (std::size_t i = 1; i < 15; ++i) CHECK(b.labels[i] == b.labels[0]);
  std::vector<bool> used(b.count(), false);
  for (int l : b.labels) used[static_cast<std::size_t>(l)] = true;
  CHECK(std::all_of(used.begin(), used.end(), [](bool u) { return u; }));
}

TEST_CASE("quantile bins property: monotone in loss, consistent with edges") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 200);
    std::vector<double> losses(n);
    // coarse rounding forces ties
    for (auto& v : losses) v = std::round(uniform01(rng) * 40.0) / 4.0;
    const auto bins = quantile_bins(losses, 1 + uniform_index(rng, 12));
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(bins.bin_of(losses[i]) == static_cast<std::size_t>(bins.labels[i]));
      for (std::size_t j = 0; j < n; ++j)
        if (losses[i] < losses[j]) CHECK(bins.labels[i] <= bins.labels[j]);
    }
  }
}

TEST_CASE("forest scores rank good regions low") {
  Rng rng(11);
  const auto x = random_inputs(rng, 300, 2);
  const auto y = targets(x, bowl);
  auto forest = ForestClassifier::fit(x, y, {}, rng);
  CHECK(forest.trees().size() == 100);
  CHECK(forest.n_bins() == 10);
  const std::vector<double> good{0.3, 0.3}, bad{0.95, 0.95};
  CHECK(forest.score(good) < 2.0);
  CHECK(forest.score(bad) > 7.0);

  Rng probe(12);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> p{uniform01(probe), uniform01(probe)};
    const auto proba = forest.predict_proba(p);
    double total = 0.0;
    for (double v : proba) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(forest.score(p) >= 0.0);
    CHECK(forest.score(p) <= 9.0);
  }
}

TEST_CASE("forest fit is a pure function of the rng state") {
  Rng a(21), b(21);
  Rng data(4);
  const auto x = random_inputs(data, 80, 3);
  const auto y = targets(x, bowl);
  ForestConfig cfg;
  cfg.n_trees = 10;
  auto fa = ForestClassifier::fit(x, y, cfg, a);
  auto fb = ForestClassifier::fit(x, y, cfg, b);
  for (std::size_t i = 0; i < 80; ++i) CHECK(fa.score(x.row(i)) == fb.score(x.row(i)));
}

TEST_CASE("boosting: base is the mean and training error never rises") {
  Rng rng(31);
  const auto x = random_inputs(rng, 150, 3);
  const auto y = targets(x, bowl);
  auto model = BoostedTreesRegressor::fit(x, y, {}, rng);
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= 150.0;
  CHECK(model.base_prediction() == doctest::Approx(mean).epsilon(1e-14));
  const auto& mse = model.training_mse();
  REQUIRE(mse.size() == 201);
  for (std::size_t r = 1; r < mse.size(); ++r) CHECK(mse[r] <= mse[r - 1] + 1e-15);
  CHECK(mse.back() < 0.05 * mse.front());

  BoostedConfig none;
  none.n_rounds = 0;
  auto flat = BoostedTreesRegressor::fit(x, y, none, rng);
  CHECK(flat.predict(x.row(0)) == flat.base_prediction());
}

TEST_CASE("boosting property: monotone training error over random problems") {
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + uniform_index(rng, 40);
    const auto x = random_inputs(rng, n, 1 + uniform_index(rng, 4));
    std::vector<double> y(n);
    for (auto& v : y) v = standard_normal(rng);
    BoostedConfig cfg;
    cfg.n_rounds = 20;
    cfg.learning_rate = 0.05 + 0.9 * uniform01(rng);
    auto model = BoostedTreesRegressor::fit(x, y, cfg, rng);
    const auto& mse = model.training_mse();
    for (std::size_t r = 1; r < mse.size(); ++r) CHECK(mse[r] <= mse[r - 1] * (1 + 1e-12) + 1e-15);
  }
}

TEST_CASE("GP posterior matches a dense inverse") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 5 + uniform_index(rng, 30);
    const std::size_t d = 1 + uniform_index(rng, 3);
    const auto x = random_inputs(rng, n, d);
    std::vector<double> y(n);
    for (auto& v : y) v = standard_normal(rng);
    GpHyperparameters h;
    for (std::size_t f = 0; f < d; ++f) h.lengthscales.push_back(0.1 + uniform01(rng));
    h.signal_var = 0.5 + uniform01(rng);
    h.noise_var = 0.01 + 0.1 * uniform01(rng);
    GpConfig cfg;
    cfg.fixed = h;
    auto gp = GaussianProcessModel::fit(x, y, cfg);
    CHECK(gp.jitter() == 0.0);

    oracle::DenseGpInput in{rows_of(x), gp.standardized_targets(), h.lengthscales, h.signal_var, h.noise_var};
    for (int q = 0; q < 5; ++q) {
      std::vector<double> xs(d);
      for (auto& v : xs) v = uniform01(rng);
      const auto [mean, var] = oracle::dense_gp_posterior(in, xs);
      const auto p = gp.posterior_standardized(xs);
      CHECK(p.mean == doctest::Approx(mean).epsilon(1e-8).scale(1.0));
      CHECK(p.variance == doctest::Approx(var).epsilon(1e-8).scale(1.0));
      const auto raw = gp.posterior(xs);
      CHECK(raw.mean == doctest::Approx(gp.target_mean() + gp.target_scale() * mean).epsilon(1e-8));
    }
    CHECK(gp.log_marginal_likelihood() == doctest::Approx(oracle::dense_gp_log_likelihood(in)).epsilon(1e-8));
    CHECK(gp_log_marginal_likelihood(x, gp.standardized_targets(), h) == doctest::Approx(gp.log_marginal_likelihood()));
  }
}

TEST_CASE("GP limits: far points revert to the prior, tiny noise interpolates") {
  Rng rng(43);
  const auto x = random_inputs(rng, 12, 2);
  const auto y = targets(x, bowl);
  GpConfig cfg;
  cfg.fixed = GpHyperparameters{{0.3, 0.3}, 1.3, 1e-10};
  auto gp = GaussianProcessModel::fit(x, y, cfg);
  const std::vector<double> far{50.0, -50.0};
  const auto p = gp.posterior(far);
  CHECK(p.mean == doctest::Approx(gp.target_mean()).epsilon(1e-12));
  CHECK(p.variance == doctest::Approx(1.3 * gp.target_scale() * gp.target_scale()).epsilon(1e-12));
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(gp.posterior(x.row(i)).mean - y[i]) < 1e-6);
}

TEST_CASE("GP keeps the best points and ignores failed ones") {
  Rng rng(44);
  auto x = random_inputs(rng, 40, 1);
  auto y = targets(x, bowl);
  y[3] = std::numeric_limits<double>::infinity();
  GpConfig cfg;
  cfg.max_points = 10;
  cfg.fixed = GpHyperparameters{{0.2}, 1.0, 1e-4};
  auto gp = GaussianProcessModel::fit(x, y, cfg);
  CHECK(gp.size() == 10);
  auto finite = y;
  finite.erase(finite.begin() + 3);
  std::sort(finite.begin(), finite.end());
  for (std::size_t i = 0; i < gp.size(); ++i) {
    const double raw = gp.target_mean() + gp.target_scale() * gp.standardized_targets()[i];
    CHECK(raw <= finite[9] + 1e-12);
  }
}

TEST_CASE("GP hyperparameter search stays in bounds and beats the starting grid") {
  Rng rng(45);
  const auto x = random_inputs(rng, 60, 2);
  const auto y = targets(x, bowl);
  GpConfig cfg;
  auto gp = GaussianProcessModel::fit(x, y, cfg);
  const auto& h = gp.hyperparameters();
  for (double l : h.lengthscales) {
    CHECK(l >= cfg.lengthscale_min);
    CHECK(l <= cfg.lengthscale_max);
  }
  CHECK(h.signal_var >= cfg.signal_var_min * (1 - 1e-12));
  CHECK(h.signal_var <= cfg.signal_var_max * (1 + 1e-12));
  CHECK(h.noise_var >= cfg.noise_var_min * (1 - 1e-9));
  CHECK(h.noise_var <= cfg.noise_var_max * (1 + 1e-9));
  for (double l : {0.01, 0.1, 1.0, 10.0})
    for (double noise : {1e-6, 1e-3, 0.1}) {
      const GpHyperparameters other{{l, l}, 1.0, noise};
      CHECK(gp.log_marginal_likelihood() >= gp_log_marginal_likelihood(gp.inputs(), gp.standardized_targets(), other));
    }
  // smooth bowl: the fit should predict well away from the data
  const std::vector<double> probe{0.31, 0.28};
  CHECK(std::abs(gp.posterior(probe).mean - bowl(probe)) < 0.02);
}

TEST_CASE("GP reports a singular kernel for non-finite inputs") {
  auto x = FeatureMatrix::from_rows({{0.1}, {std::nan("")}, {0.7}});
  const std::vector<double> y{1.0, 2.0, 3.0};
  GpConfig cfg;
  cfg.fixed = GpHyperparameters{{0.3}, 1.0, 1e-6};
  CHECK_THROWS_AS(GaussianProcessModel::fit(x, y, cfg), SingularKernelError);
}

TEST_CASE("expected improvement closed form") {
  CHECK(expected_improvement(0.0, 1.0, 0.0) == doctest::Approx(0.3989422804014327));
  CHECK(expected_improvement(2.0, 0.0, 1.0) == 0.0);
  CHECK(expected_improvement(0.5, 0.0, 1.0) == 0.5);
  // EI(mu, s, best) = s * EI(0, 1, (best - mu) / s)
  CHECK(expected_improvement(1.0, 2.0, 2.0) == doctest::Approx(2.0 * expected_improvement(0.0, 1.0, 0.5)));
  Rng rng(50);
  for (int i = 0; i < 200; ++i) {
    const double mu = standard_normal(rng), best = standard_normal(rng);
    const double s1 = 0.01 + uniform01(rng), s2 = s1 + uniform01(rng);
    const double ei = expected_improvement(mu, s1, best);
    CHECK(ei >= 0.0);
    CHECK(ei >= best - mu - 1e-15);
    CHECK(expected_improvement(mu, s2, best) >= ei - 1e-15);
  }
}
