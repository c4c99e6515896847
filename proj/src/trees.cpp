#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "calib/surrogates.hpp"

namespace calib {

FeatureMatrix FeatureMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  FeatureMatrix m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw DomainError("feature rows have different lengths");
    std::copy(rows[i].begin(), rows[i].end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  return m;
}

SortedColumns::SortedColumns(const FeatureMatrix& x) : orders_(x.cols()) {
  for (std::size_t f = 0; f < x.cols(); ++f) {
    auto& o = orders_[f];
    o.resize(x.rows());
    std::iota(o.begin(), o.end(), std::size_t{0});
    std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
  }
}

/// Grows one tree by recursive best-split search over presorted index ranges. Every
/// node owns the same [begin, end) slice in each feature's order array.
class TreeBuilder {
 public:
  TreeBuilder(const FeatureMatrix& x, const SortedColumns& sorted, std::span<const double> weights,
              const TreeConfig& config, Rng& rng, std::span<const double> y, std::span<const int> labels,
              std::size_t n_classes)
      : x_(x), w_(weights), cfg_(config), rng_(rng), y_(y), labels_(labels), k_(n_classes) {
    const std::size_t n = x.rows();
    if (w_.size() != n) throw DomainError("tree weights length mismatch");
    if (n == 0 || x.cols() == 0) throw InsufficientDataError("tree needs at least one sample and one feature");
    orders_.resize(x.cols());
    for (std::size_t f = 0; f < x.cols(); ++f) {
      for (std::size_t i : sorted.order(f))
        if (w_[i] > 0.0) orders_[f].push_back(i);
    }
    if (orders_[0].empty()) throw InsufficientDataError("tree has no samples with positive weight");
    goes_left_.assign(n, 0);
    scratch_.resize(orders_[0].size());
    left_counts_.resize(k_);
    node_counts_.resize(k_);
    tree_.width_ = classification() ? k_ : 1;
    tree_.n_features_ = x.cols();
    features_.resize(x.cols());
    std::iota(features_.begin(), features_.end(), std::size_t{0});
  }

  RegressionTree build() {
    grow(0, orders_[0].size(), 0);
    return std::move(tree_);
  }

 private:
  const FeatureMatrix& x_;
  std::span<const double> w_;
  const TreeConfig& cfg_;
  Rng& rng_;
  std::span<const double> y_;
  std::span<const int> labels_;
  std::size_t k_;
  std::vector<std::vector<std::size_t>> orders_;
  std::vector<char> goes_left_;
  std::vector<std::size_t> scratch_;
  std::vector<double> left_counts_;
  std::vector<double> node_counts_;
  std::vector<std::size_t> features_;
  RegressionTree tree_;

  bool classification() const { return k_ > 0; }

  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double score = -std::numeric_limits<double>::infinity();
  };

  std::size_t make_leaf(std::size_t b, std::size_t e) {
    RegressionTree::Node node;
    node.value_offset = tree_.values_.size();
    const auto& idx = orders_[0];
    if (classification()) {
      std::vector<double> counts(k_, 0.0);
      double total = 0.0;
      for (std::size_t p = b; p < e; ++p) {
        counts[static_cast<std::size_t>(labels_[idx[p]])] += w_[idx[p]];
        total += w_[idx[p]];
      }
      for (double c : counts) tree_.values_.push_back(c / total);
    } else {
      double s = 0.0, wsum = 0.0;
      for (std::size_t p = b; p < e; ++p) {
        s += w_[idx[p]] * y_[idx[p]];
        wsum += w_[idx[p]];
      }
      tree_.values_.push_back(s / wsum);
    }
    tree_.nodes_.push_back(node);
    return tree_.nodes_.size() - 1;
  }

  // Parent impurity term and purity flag for the node.
  std::pair<double, bool> node_summary(std::size_t b, std::size_t e) {
    const auto& idx = orders_[0];
    if (classification()) {
      std::fill(node_counts_.begin(), node_counts_.end(), 0.0);
      double total = 0.0;
      for (std::size_t p = b; p < e; ++p) {
        node_counts_[static_cast<std::size_t>(labels_[idx[p]])] += w_[idx[p]];
        total += w_[idx[p]];
      }
      double sq = 0.0, mx = 0.0;
      for (double c : node_counts_) {
        sq += c * c;
        mx = std::max(mx, c);
      }
      return {sq / total, mx == total};
    }
    double s = 0.0, wsum = 0.0;
    double lo = y_[idx[b]], hi = lo;
    for (std::size_t p = b; p < e; ++p) {
      s += w_[idx[p]] * y_[idx[p]];
      wsum += w_[idx[p]];
      lo = std::min(lo, y_[idx[p]]);
      hi = std::max(hi, y_[idx[p]]);
    }
    return {s * s / wsum, lo == hi};
  }

  // Best threshold on one feature; returns false when the feature is constant in the node.
  bool scan_feature(std::size_t f, std::size_t b, std::size_t e, Split& best) {
    const auto& idx = orders_[f];
    if (x_(idx[b], f) == x_(idx[e - 1], f)) return false;
    const std::size_t min_leaf = std::max<std::size_t>(cfg_.min_samples_leaf, 1);
    const std::size_t count = e - b;

    double w_total = 0.0, s_total = 0.0;
    for (std::size_t p = b; p < e; ++p) {
      w_total += w_[idx[p]];
      if (!classification()) s_total += w_[idx[p]] * y_[idx[p]];
    }
    double wl = 0.0, sl = 0.0;
    double sq_l = 0.0, sq_r = 0.0;
    if (classification()) {
      std::fill(left_counts_.begin(), left_counts_.end(), 0.0);
      for (double c : node_counts_) sq_r += c * c;
    }
    for (std::size_t p = b; p + 1 < e; ++p) {
      const std::size_t i = idx[p];
      const double wi = w_[i];
      wl += wi;
      if (classification()) {
        const auto c = static_cast<std::size_t>(labels_[i]);
        const double cl = left_counts_[c];
        const double cr = node_counts_[c] - cl;
        sq_l += 2.0 * wi * cl + wi * wi;
        sq_r += -2.0 * wi * cr + wi * wi;
        left_counts_[c] = cl + wi;
      } else {
        sl += wi * y_[i];
      }
      const double xv = x_(i, f);
      const double xn = x_(idx[p + 1], f);
      if (xv == xn) continue;
      const std::size_t n_left = p - b + 1;
      if (n_left < min_leaf || count - n_left < min_leaf) continue;
      const double wr = w_total - wl;
      double score;
      if (classification()) {
        score = sq_l / wl + sq_r / wr;
      } else {
        const double sr = s_total - sl;
        score = sl * sl / wl + sr * sr / wr;
      }
      if (score > best.score) {
        best.score = score;
        best.feature = static_cast<int>(f);
        double mid = xv + 0.5 * (xn - xv);
        if (!(mid < xn)) mid = xv;
        best.threshold = mid;
      }
    }
    return true;
  }

  std::size_t grow(std::size_t b, std::size_t e, std::size_t depth) {
    const std::size_t count = e - b;
    const std::size_t min_leaf = std::max<std::size_t>(cfg_.min_samples_leaf, 1);
    if ((cfg_.max_depth != 0 && depth >= cfg_.max_depth) || count < 2 * min_leaf) return make_leaf(b, e);
    const auto [parent, pure] = node_summary(b, e);
    if (pure) return make_leaf(b, e);

    const std::size_t d = features_.size();
    const std::size_t want = (cfg_.features_per_split == 0 || cfg_.features_per_split >= d) ? d : cfg_.features_per_split;
    Split best;
    std::size_t informative = 0;
    if (want == d) {
      for (std::size_t f = 0; f < d; ++f) scan_feature(f, b, e, best);
    } else {
      // Draw features without replacement until `want` non-constant ones were scanned.
      for (std::size_t j = 0; j < d && informative < want; ++j) {
        const std::size_t r = j + static_cast<std::size_t>(uniform_index(rng_, d - j));
        std::swap(features_[j], features_[r]);
        if (scan_feature(features_[j], b, e, best)) ++informative;
      }
    }
    if (best.feature < 0 || !(best.score > parent + 1e-12 * std::max(1.0, std::abs(parent)))) return make_leaf(b, e);

    const auto f = static_cast<std::size_t>(best.feature);
    for (std::size_t p = b; p < e; ++p) {
      const std::size_t i = orders_[f][p];
      goes_left_[i] = x_(i, f) <= best.threshold ? 1 : 0;
    }
    std::size_t n_left = 0;
    for (auto& order : orders_) {
      std::size_t l = b, r = 0;
      for (std::size_t p = b; p < e; ++p) {
        const std::size_t i = order[p];
        if (goes_left_[i])
          order[l++] = i;
        else
          scratch_[r++] = i;
      }
      std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(r),
                order.begin() + static_cast<std::ptrdiff_t>(l));
      n_left = l - b;
    }

    const std::size_t self = tree_.nodes_.size();
    tree_.nodes_.push_back({best.feature, best.threshold, 0, 0, 0});
    const std::size_t left = grow(b, b + n_left, depth + 1);
    const std::size_t right = grow(b + n_left, e, depth + 1);
    tree_.nodes_[self].left = left;
    tree_.nodes_[self].right = right;
    return self;
  }
};

RegressionTree RegressionTree::fit_regression(const FeatureMatrix& x, const SortedColumns& sorted,
                                              std::span<const double> y, std::span<const double> weights,
                                              const TreeConfig& config, Rng& rng) {
  if (y.size() != x.rows()) throw DomainError("regression targets length mismatch");
  for (double v : y)
    if (!std::isfinite(v)) throw DomainError("regression targets must be finite");
  return TreeBuilder(x, sorted, weights, config, rng, y, {}, 0).build();
}

RegressionTree RegressionTree::fit_classifier(const FeatureMatrix& x, const SortedColumns& sorted,
                                              std::span<const int> labels, std::size_t n_classes,
                                              std::span<const double> weights, const TreeConfig& config, Rng& rng) {
  if (labels.size() != x.rows()) throw DomainError("class labels length mismatch");
  if (n_classes == 0) throw DomainError("classifier needs at least one class");
  for (int c : labels)
    if (c < 0 || static_cast<std::size_t>(c) >= n_classes) throw DomainError("class label out of range");
  return TreeBuilder(x, sorted, weights, config, rng, {}, labels, n_classes).build();
}

std::size_t RegressionTree::leaf_of(std::span<const double> x) const {
  if (x.size() != n_features_) throw DomainError("tree input has the wrong dimension");
  std::size_t n = 0;
  while (nodes_[n].feature >= 0) {
    const auto& node = nodes_[n];
    n = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
  }
  return n;
}

std::span<const double> RegressionTree::leaf_value(std::span<const double> x) const {
  const auto& leaf = nodes_[leaf_of(x)];
  return {values_.data() + leaf.value_offset, width_};
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.feature < 0; }));
}

std::size_t RegressionTree::depth() const {
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  std::size_t deepest = 0;
  while (!stack.empty()) {
    auto [n, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (nodes_[n].feature >= 0) {
      stack.emplace_back(nodes_[n].left, d + 1);
      stack.emplace_back(nodes_[n].right, d + 1);
    }
  }
  return deepest;
}

std::size_t QuantileBins::bin_of(double loss) const {
  // edges[1..K-1] separate the bins
  const auto first = edges.begin() + 1;
  const auto last = edges.end() - 1;
  return static_cast<std::size_t>(std::upper_bound(first, last, loss) - first);
}

QuantileBins quantile_bins(std::span<const double> losses, std::size_t max_bins) {
  const std::size_t n = losses.size();
  if (n == 0) throw InsufficientDataError("quantile bins need at least one loss");
  if (max_bins == 0) throw DomainError("quantile bins need K >= 1");
  for (double v : losses)
    if (!std::isfinite(v)) throw DomainError("quantile bins need finite losses");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });

  const std::size_t k = std::min(max_bins, n);
  std::vector<int> raw(n);
  for (std::size_t r = 0; r < n; ++r) {
    int bin = static_cast<int>(r * k / n);
    // ties share the bin of their lowest-ranked member
    if (r > 0 && losses[order[r]] == losses[order[r - 1]]) bin = raw[order[r - 1]];
    raw[order[r]] = bin;
  }
  // compact away bins emptied by tie merging
  std::vector<int> remap(k, -1);
  int next = 0;
  for (std::size_t r = 0; r < n; ++r) {
    auto& m = remap[static_cast<std::size_t>(raw[order[r]])];
    if (m < 0) m = next++;
  }
  QuantileBins out;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = remap[static_cast<std::size_t>(raw[i])];

  const auto kk = static_cast<std::size_t>(next);
  std::vector<double> lo(kk, std::numeric_limits<double>::infinity());
  std::vector<double> hi(kk, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = static_cast<std::size_t>(out.labels[i]);
    lo[b] = std::min(lo[b], losses[i]);
    hi[b] = std::max(hi[b], losses[i]);
  }
  out.edges.push_back(lo[0]);
  for (std::size_t b = 1; b < kk; ++b) {
    const double mid = hi[b - 1] + 0.5 * (lo[b] - hi[b - 1]);
    out.edges.push_back(mid > hi[b - 1] ? mid : lo[b]);  // adjacent doubles have no midpoint
  }
  // a single-valued last bin would give a zero-width interval
  out.edges.push_back(hi[kk - 1] > out.edges.back() ? hi[kk - 1]
                                                    : std::nextafter(hi[kk - 1], std::numeric_limits<double>::infinity()));
  return out;
}

ForestClassifier ForestClassifier::fit(const FeatureMatrix& x, std::span<const double> losses,
                                       const ForestConfig& config, Rng& rng) {
  if (losses.size() != x.rows()) throw DomainError("forest losses length mismatch");
  if (config.n_trees == 0) throw DomainError("forest needs at least one tree");
  ForestClassifier model;
  model.bins_ = quantile_bins(losses, config.n_bins);
  model.n_features_ = x.cols();
  const SortedColumns sorted(x);

  TreeConfig tc;
  tc.max_depth = config.max_depth;
  tc.min_samples_leaf = config.min_samples_leaf;
  tc.features_per_split = config.features_per_split != 0
                              ? config.features_per_split
                              : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(x.cols()))));

  const std::size_t n = x.rows();
  std::vector<double> weights(n, 1.0);
  model.trees_.reserve(config.n_trees);
  for (std::size_t t = 0; t < config.n_trees; ++t) {
    if (config.bootstrap) {
      std::fill(weights.begin(), weights.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) weights[uniform_index(rng, n)] += 1.0;
    }
    model.trees_.push_back(
        RegressionTree::fit_classifier(x, sorted, model.bins_.labels, model.bins_.count(), weights, tc, rng));
  }
  return model;
}

std::vector<double> ForestClassifier::predict_proba(std::span<const double> x) const {
  std::vector<double> p(n_bins(), 0.0);
  for (const auto& tree : trees_) {
    const auto leaf = tree.leaf_value(x);
    for (std::size_t k = 0; k < p.size(); ++k) p[k] += leaf[k];
  }
  for (double& v : p) v /= static_cast<double>(trees_.size());
  return p;
}

double ForestClassifier::score(std::span<const double> x) const {
  const auto p = predict_proba(x);
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += static_cast<double>(k) * p[k];
  return std::clamp(s, 0.0, static_cast<double>(p.size() - 1));
}

double predict_score_forest(const ForestClassifier& model, std::span<const double> x) { return model.score(x); }

BoostedTreesRegressor BoostedTreesRegressor::fit(const FeatureMatrix& x, std::span<const double> y,
                                                 const BoostedConfig& config, Rng& rng) {
  const std::size_t n = x.rows();
  if (y.size() != n) throw DomainError("boosting targets length mismatch");
  if (n == 0) throw InsufficientDataError("boosting needs at least one sample");
  if (!(config.learning_rate > 0.0 && config.learning_rate <= 1.0)) throw DomainError("learning rate must be in (0, 1]");
  if (config.max_depth == 0) throw DomainError("boosting trees need max_depth >= 1");

  BoostedTreesRegressor model;
  model.eta_ = config.learning_rate;
  model.n_features_ = x.cols();
  double s = 0.0;
  for (double v : y) {
    if (!std::isfinite(v)) throw DomainError("boosting targets must be finite");
    s += v;
  }
  model.base_ = s / static_cast<double>(n);

  const SortedColumns sorted(x);
  TreeConfig tc;
  tc.max_depth = config.max_depth;
  tc.min_samples_leaf = config.min_samples_leaf;
  const std::vector<double> weights(n, 1.0);
  std::vector<double> fitted(n, model.base_);
  std::vector<double> residual(n);

  auto mse = [&] {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += (y[i] - fitted[i]) * (y[i] - fitted[i]);
    return acc / static_cast<double>(n);
  };
  model.mse_.push_back(mse());
  model.trees_.reserve(config.n_rounds);
  for (std::size_t r = 0; r < config.n_rounds; ++r) {
    for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - fitted[i];
    auto tree = RegressionTree::fit_regression(x, sorted, residual, weights, tc, rng);
    for (std::size_t i = 0; i < n; ++i) fitted[i] += model.eta_ * tree.predict(x.row(i));
    model.trees_.push_back(std::move(tree));
    model.mse_.push_back(mse());
  }
  return model;
}

double BoostedTreesRegressor::predict(std::span<const double> x) const {
  if (x.size() != n_features_) throw DomainError("boosting input has the wrong dimension");
  double f = base_;
  for (const auto& t : trees_) f += eta_ * t.predict(x);
  return f;
}

double predict_boosted(const BoostedTreesRegressor& model, std::span<const double> x) { return model.predict(x); }

}  // namespace calib
