#include "dtmix/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dtmix/parallel.hpp"
#include "dtmix/simulator.hpp"

namespace dtmix {

namespace {

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int mtry, int min_leaf, std::mt19937_64& rng)
      : x_(x), y_(y), mtry_(mtry), min_leaf_(min_leaf), rng_(rng) {
    features_.resize(static_cast<std::size_t>(x.cols()));
    std::iota(features_.begin(), features_.end(), 0);
  }

  void grow(RegressionTree& tree, std::vector<int> rows) {
    tree.nodes.clear();
    rows_ = std::move(rows);
    tree.nodes.emplace_back();
    struct Task {
      int node;
      std::size_t begin;
      std::size_t end;
    };
    std::vector<Task> stack{{0, 0, rows_.size()}};
    while (!stack.empty()) {
      const Task task = stack.back();
      stack.pop_back();
      double sum = 0.0;
      for (std::size_t i = task.begin; i < task.end; ++i) sum += y_[rows_[i]];
      const double n = static_cast<double>(task.end - task.begin);
      tree.nodes[static_cast<std::size_t>(task.node)].value = sum / n;
      const Split split = best_split(task.begin, task.end, sum);
      if (split.feature < 0) continue;
      // Partition rows in place.
      const auto mid = std::partition(rows_.begin() + static_cast<std::ptrdiff_t>(task.begin),
                                      rows_.begin() + static_cast<std::ptrdiff_t>(task.end),
                                      [&](int r) { return x_(r, split.feature) <= split.threshold; });
      const auto m = static_cast<std::size_t>(mid - rows_.begin());
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& node = tree.nodes[static_cast<std::size_t>(task.node)];
      node.feature = split.feature;
      node.threshold = split.threshold;
      node.left = left;
      node.right = left + 1;
      stack.push_back({left + 1, m, task.end});
      stack.push_back({left, task.begin, m});
    }
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  Split best_split(std::size_t begin, std::size_t end, double sum) {
    Split best;
    const std::size_t n = end - begin;
    if (n < 2 * static_cast<std::size_t>(min_leaf_)) return best;
    // Partial Fisher-Yates draw of mtry candidate features.
    const std::size_t p = features_.size();
    const auto draws = static_cast<std::size_t>(mtry_);
    for (std::size_t k = 0; k < draws; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, p - 1);
      std::swap(features_[k], features_[pick(rng_)]);
    }
    const double total = static_cast<double>(n);
    const double base = sum * sum / total;
    order_.assign(rows_.begin() + static_cast<std::ptrdiff_t>(begin), rows_.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t k = 0; k < draws; ++k) {
      const int f = features_[k];
      std::sort(order_.begin(), order_.end(), [&](int a, int b) { return x_(a, f) < x_(b, f); });
      double left_sum = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += y_[order_[i]];
        const std::size_t nl = i + 1;
        if (nl < static_cast<std::size_t>(min_leaf_) || n - nl < static_cast<std::size_t>(min_leaf_)) continue;
        const double a = x_(order_[i], f);
        const double b = x_(order_[i + 1], f);
        if (!(a < b)) continue;
        const double right_sum = sum - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(nl) +
                            right_sum * right_sum / static_cast<double>(n - nl) - base;
        if (gain > best.gain * (1.0 + 1e-12) + 1e-300) {
          best.feature = f;
          best.threshold = 0.5 * (a + b);
          if (!(best.threshold < b)) best.threshold = a;
          best.gain = gain;
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  int mtry_;
  int min_leaf_;
  std::mt19937_64& rng_;
  std::vector<int> features_;
  std::vector<int> rows_;
  std::vector<int> order_;
};

RegressionTree grow_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int mtry, int min_leaf,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto n = static_cast<int>(x.rows());
  RegressionTree tree;
  tree.in_bag.assign(static_cast<std::size_t>(n), 0);
  std::vector<int> rows(static_cast<std::size_t>(n));
  std::uniform_int_distribution<int> draw(0, n - 1);
  for (auto& r : rows) {
    r = draw(rng);
    ++tree.in_bag[static_cast<std::size_t>(r)];
  }
  TreeBuilder(x, y, mtry, min_leaf, rng).grow(tree, std::move(rows));
  return tree;
}

}  // namespace

int ForestConfig::resolved_mtry(int p) const { return mtry > 0 ? mtry : std::max(1, p / 3); }

void ForestConfig::validate(int p) const {
  if (n_trees < 1) throw std::invalid_argument("n_trees must be >= 1");
  if (min_leaf < 1) throw std::invalid_argument("min_leaf must be >= 1");
  if (p < 1) throw std::invalid_argument("forest needs at least one feature");
  const int m = resolved_mtry(p);
  if (m < 1 || m > p) throw std::invalid_argument("mtry must lie in [1, p]");
}

double RegressionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  std::size_t k = 0;
  while (nodes[k].feature >= 0) {
    k = static_cast<std::size_t>(x[nodes[k].feature] <= nodes[k].threshold ? nodes[k].left : nodes[k].right);
  }
  return nodes[k].value;
}

Eigen::VectorXd RegressionForest::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
  if (trees_.empty()) throw std::logic_error("empty forest");
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict(x.row(r));
    out[r] = s / static_cast<double>(trees_.size());
  }
  return out;
}

ForestFit train_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ForestConfig& config) {
  if (x.rows() != y.size()) throw std::invalid_argument("predictor and response rows differ");
  if (x.rows() < 2) throw std::invalid_argument("forest needs at least two rows");
  if (x.rows() > std::numeric_limits<int>::max()) throw std::invalid_argument("too many rows");
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("non-finite forest input");
  const auto p = static_cast<int>(x.cols());
  config.validate(p);
  const int mtry = config.resolved_mtry(p);

  std::vector<RegressionTree> trees(static_cast<std::size_t>(config.n_trees));
  parallel_for(trees.size(), config.threads, [&](std::size_t t) {
    trees[t] = grow_tree(x, y, mtry, config.min_leaf, derive_seed(config.seed, t));
  });

  ForestFit fit;
  const Eigen::Index n = x.rows();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
  Eigen::VectorXi count = Eigen::VectorXi::Zero(n);
  for (const auto& tree : trees) {
    for (Eigen::Index r = 0; r < n; ++r) {
      if (tree.in_bag[static_cast<std::size_t>(r)] != 0) continue;
      sum[r] += tree.predict(x.row(r));
      ++count[r];
    }
  }
  fit.oob_prediction.resize(n);
  fit.never_oob.assign(static_cast<std::size_t>(n), false);
  double sse = 0.0;
  Eigen::Index used = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    if (count[r] == 0) {
      fit.oob_prediction[r] = std::numeric_limits<double>::quiet_NaN();
      fit.never_oob[static_cast<std::size_t>(r)] = true;
      continue;
    }
    fit.oob_prediction[r] = sum[r] / count[r];
    sse += (fit.oob_prediction[r] - y[r]) * (fit.oob_prediction[r] - y[r]);
    ++used;
  }
  fit.oob_mse = used > 0 ? sse / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
  fit.mean_mse = (y.array() - y.mean()).square().mean();
  fit.constant_response = (y.array() == y[0]).all();
  fit.forest = RegressionForest(std::move(trees));
  return fit;
}

Importance permutation_importance(const RegressionForest& forest, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& y, std::uint64_t seed, int threads) {
  const auto& trees = forest.trees();
  const Eigen::Index p = x.cols();
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd increase = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(trees.size()), p);
  std::vector<bool> has_oob(trees.size(), false);
  parallel_for(trees.size(), threads, [&](std::size_t t) {
    const auto& tree = trees[t];
    if (tree.in_bag.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("forest was trained on other rows");
    std::vector<Eigen::Index> oob;
    for (Eigen::Index r = 0; r < n; ++r)
      if (tree.in_bag[static_cast<std::size_t>(r)] == 0) oob.push_back(r);
    if (oob.empty()) return;
    has_oob[t] = true;
    std::mt19937_64 rng(derive_seed(seed, t));
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(oob.size()), p);
    for (std::size_t k = 0; k < oob.size(); ++k) sub.row(static_cast<Eigen::Index>(k)) = x.row(oob[k]);
    auto mse = [&](const Eigen::MatrixXd& rows) {
      double s = 0.0;
      for (std::size_t k = 0; k < oob.size(); ++k) {
        const double e = tree.predict(rows.row(static_cast<Eigen::Index>(k))) - y[oob[k]];
        s += e * e;
      }
      return s / static_cast<double>(oob.size());
    };
    const double base = mse(sub);
    std::vector<Eigen::Index> perm(oob.size());
    for (Eigen::Index j = 0; j < p; ++j) {
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const Eigen::VectorXd original = sub.col(j);
      for (std::size_t k = 0; k < perm.size(); ++k) sub(static_cast<Eigen::Index>(k), j) = original[perm[k]];
      increase(static_cast<Eigen::Index>(t), j) = mse(sub) - base;
      sub.col(j) = original;
    }
  });
  Importance out;
  out.value = Eigen::VectorXd::Zero(p);
  out.std_error = Eigen::VectorXd::Zero(p);
  const auto used = static_cast<double>(std::count(has_oob.begin(), has_oob.end(), true));
  if (used == 0) return out;
  for (std::size_t t = 0; t < trees.size(); ++t)
    if (has_oob[t]) out.value += increase.row(static_cast<Eigen::Index>(t)).transpose();
  out.value /= used;
  if (used > 1) {
    for (std::size_t t = 0; t < trees.size(); ++t) {
      if (!has_oob[t]) continue;
      out.std_error += (increase.row(static_cast<Eigen::Index>(t)).transpose() - out.value).array().square().matrix();
    }
    out.std_error = (out.std_error / (used - 1.0) / used).cwiseSqrt();
  }
  return out;
}

FeatureCurve select_feature_count(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  const ForestConfig& config, std::vector<int> folds, double step) {
  const auto n = x.rows();
  const auto p = static_cast<int>(x.cols());
  config.validate(p);
  if (!(step > 0.0 && step < 1.0)) throw std::invalid_argument("step must lie in (0, 1)");
  if (folds.empty()) {
    folds.resize(static_cast<std::size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) folds[static_cast<std::size_t>(r)] = static_cast<int>(r % 5);
    std::mt19937_64 rng(derive_seed(config.seed, 0xF01D));
    std::shuffle(folds.begin(), folds.end(), rng);
  }
  if (folds.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("fold ids must cover every row");

  FeatureCurve curve;
  for (int k = p; k >= 1;) {
    curve.k.push_back(k);
    const int next = static_cast<int>(std::floor(k * step));
    k = next < k ? next : k - 1;
  }
  std::vector<double> sse(curve.k.size(), 0.0);
  const int n_folds = *std::max_element(folds.begin(), folds.end()) + 1;
  for (int f = 0; f < n_folds; ++f) {
    std::vector<Eigen::Index> train;
    std::vector<Eigen::Index> test;
    for (Eigen::Index r = 0; r < n; ++r) (folds[static_cast<std::size_t>(r)] == f ? test : train).push_back(r);
    if (test.empty() || train.size() < 2) continue;
    const Eigen::MatrixXd x_train = x(train, Eigen::all);
    const Eigen::VectorXd y_train = y(train);
    ForestConfig fold_config = config;
    fold_config.seed = derive_seed(config.seed, static_cast<std::uint64_t>(f) + 1);
    const ForestFit full = train_forest(x_train, y_train, fold_config);
    const Importance imp = permutation_importance(full.forest, x_train, y_train, fold_config.seed, config.threads);
    std::vector<int> rank(static_cast<std::size_t>(p));
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) { return imp.value[a] > imp.value[b]; });
    for (std::size_t s = 0; s < curve.k.size(); ++s) {
      const std::vector<int> cols(rank.begin(), rank.begin() + curve.k[s]);
      ForestConfig sub = fold_config;
      sub.mtry = config.mtry > 0 ? std::min(config.mtry, curve.k[s]) : 0;
      const Eigen::VectorXd pred = s == 0 ? full.forest.predict(x(test, Eigen::all))
                                          : train_forest(x_train(Eigen::all, cols), y_train, sub).forest.predict(x(test, cols));
      sse[s] += (pred - y(test)).squaredNorm();
    }
  }
  for (std::size_t s = 0; s < curve.k.size(); ++s) curve.cv_mse.push_back(sse[s] / static_cast<double>(n));
  std::size_t best = 0;
  for (std::size_t s = 1; s < curve.k.size(); ++s)
    if (curve.cv_mse[s] <= curve.cv_mse[best]) best = s;
  curve.best_k = curve.k[best];
  return curve;
}

}  // namespace dtmix
