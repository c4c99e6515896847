#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "calib/core.hpp"

namespace calib {

/// Dense row-major matrix of training inputs (one row per point).
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  static FeatureMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Sample indices sorted by each feature; computed once and shared by every tree of a fit.
class SortedColumns {
 public:
  explicit SortedColumns(const FeatureMatrix& x);
  std::span<const std::size_t> order(std::size_t feature) const { return orders_[feature]; }

 private:
  std::vector<std::vector<std::size_t>> orders_;
};

struct TreeConfig {
  std::size_t max_depth = 0;  ///< 0 grows until leaves are pure or too small
  std::size_t min_samples_leaf = 1;
  std::size_t features_per_split = 0;  ///< random candidate features per node; 0 uses all
};

/// Binary CART tree. Leaves hold either a single mean (regression) or a class-count vector.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;  ///< -1 for leaves
    double threshold = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
    std::size_t value_offset = 0;
  };

  /// Squared-error tree. `weights` are non-negative integer multiplicities (bootstrap counts).
  static RegressionTree fit_regression(const FeatureMatrix& x, const SortedColumns& sorted, std::span<const double> y,
                                       std::span<const double> weights, const TreeConfig& config, Rng& rng);
  /// Gini tree over labels 0..n_classes-1.
  static RegressionTree fit_classifier(const FeatureMatrix& x, const SortedColumns& sorted,
                                       std::span<const int> labels, std::size_t n_classes,
                                       std::span<const double> weights, const TreeConfig& config, Rng& rng);

  std::size_t leaf_of(std::span<const double> x) const;
  std::span<const double> leaf_value(std::span<const double> x) const;
  double predict(std::span<const double> x) const { return leaf_value(x)[0]; }

  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t leaf_count() const;
  std::size_t depth() const;
  std::size_t value_width() const { return width_; }

 private:
  friend class TreeBuilder;
  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::size_t width_ = 1;
  std::size_t n_features_ = 0;
};

/// Rank-based quantile discretization of losses: bin 0 holds the lowest losses.
struct QuantileBins {
  std::vector<int> labels;
  std::vector<double> edges;  ///< K+1 strictly increasing boundaries
  std::size_t count() const { return edges.size() - 1; }
  std::size_t bin_of(double loss) const;
};

QuantileBins quantile_bins(std::span<const double> losses, std::size_t max_bins);

struct ForestConfig {
  std::size_t n_bins = 10;
  std::size_t n_trees = 100;
  std::size_t max_depth = 0;
  std::size_t min_samples_leaf = 2;
  std::size_t features_per_split = 0;  ///< 0 means ceil(sqrt(d))
  bool bootstrap = true;
};

class ForestClassifier {
 public:
  static ForestClassifier fit(const FeatureMatrix& x, std::span<const double> losses, const ForestConfig& config,
                              Rng& rng);

  /// Class probabilities averaged over trees.
  std::vector<double> predict_proba(std::span<const double> x) const;
  /// Expected bin index E[bin | x]; lower is better, always within [0, K-1].
  double score(std::span<const double> x) const;

  std::size_t n_bins() const { return bins_.count(); }
  const QuantileBins& bins() const { return bins_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }

 private:
  std::vector<RegressionTree> trees_;
  QuantileBins bins_;
  std::size_t n_features_ = 0;
};

double predict_score_forest(const ForestClassifier& model, std::span<const double> x);

struct BoostedConfig {
  std::size_t n_rounds = 200;
  std::size_t max_depth = 3;
  double learning_rate = 0.1;
  std::size_t min_samples_leaf = 1;
};

/// Squared-error gradient boosting: F_r = F_{r-1} + eta * tree_r fitted to the residuals.
class BoostedTreesRegressor {
 public:
  static BoostedTreesRegressor fit(const FeatureMatrix& x, std::span<const double> y, const BoostedConfig& config,
                                   Rng& rng);

  double predict(std::span<const double> x) const;
  double base_prediction() const { return base_; }
  double learning_rate() const { return eta_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }
  /// Training mean-squared error after 0, 1, ..., n_rounds rounds.
  const std::vector<double>& training_mse() const { return mse_; }

 private:
  std::vector<RegressionTree> trees_;
  double base_ = 0.0;
  double eta_ = 0.1;
  std::size_t n_features_ = 0;
  std::vector<double> mse_;
};

double predict_boosted(const BoostedTreesRegressor& model, std::span<const double> x);

enum class Acquisition { ExpectedImprovement, PosteriorMean, LowerConfidenceBound };

struct GpHyperparameters {
  std::vector<double> lengthscales;
  double signal_var = 1.0;
  double noise_var = 1e-6;
};

struct GpConfig {
  std::size_t max_points = 500;
  /// When set, skips the marginal-likelihood search and uses these values.
  std::optional<GpHyperparameters> fixed;
  double lengthscale_min = 0.01;
  double lengthscale_max = 10.0;
  double signal_var_min = 0.1;
  double signal_var_max = 10.0;
  double noise_var_min = 1e-6;
  double noise_var_max = 1.0;
  std::size_t refine_passes = 2;
  Acquisition acquisition = Acquisition::ExpectedImprovement;
  double lcb_kappa = 2.0;
};

struct GpPosterior {
  double mean = 0.0;
  double variance = 0.0;
};

/// Squared-exponential GP on unit-cube inputs with standardized targets.
class GaussianProcessModel {
 public:
  /// Keeps the `max_points` lowest-loss rows, standardizes targets, selects hyperparameters
  /// by log marginal likelihood unless fixed, and caches the Cholesky factor.
  static GaussianProcessModel fit(const FeatureMatrix& x, std::span<const double> y, const GpConfig& config);

  /// Posterior in the units of the training targets.
  GpPosterior posterior(std::span<const double> x) const;
  /// Posterior in standardized target units.
  GpPosterior posterior_standardized(std::span<const double> x) const;

  const GpHyperparameters& hyperparameters() const { return hyper_; }
  double log_marginal_likelihood() const { return lml_; }
  double target_mean() const { return y_mean_; }
  double target_scale() const { return y_scale_; }
  double jitter() const { return jitter_; }
  std::size_t size() const { return n_; }
  /// Training inputs and standardized targets actually used (after the max_points cap).
  const FeatureMatrix& inputs() const { return x_; }
  const std::vector<double>& standardized_targets() const { return y_; }

 private:
  FeatureMatrix x_;
  std::vector<std::vector<double>> columns_;  // x_ by feature, for vectorized kernel rows
  std::vector<double> y_;
  std::vector<double> chol_;  // row-major lower factor of K + noise * I
  std::vector<double> alpha_;
  GpHyperparameters hyper_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double jitter_ = 0.0;
  double lml_ = 0.0;
  std::size_t n_ = 0;

  void kernel_row(std::span<const double> x, std::span<double> out) const;
};

/// Log marginal likelihood of standardized targets under fixed hyperparameters.
double gp_log_marginal_likelihood(const FeatureMatrix& x, std::span<const double> y, const GpHyperparameters& hyper);

/// Closed-form expected improvement for minimization.
double expected_improvement(double mean, double sd, double best);
double expected_improvement(const GaussianProcessModel& model, std::span<const double> x, double best);

}  // namespace calib
