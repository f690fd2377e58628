#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace dtmix {

struct ForestConfig {
  int n_trees = 50000;
  int mtry = 0;      // 0 selects max(1, floor(p / 3))
  int min_leaf = 5;  // smallest terminal node
  std::uint64_t seed = 1;
  int threads = 1;

  int resolved_mtry(int p) const;
  void validate(int p) const;
};

// Regression tree grown on a bootstrap sample.
struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;
  std::vector<std::uint16_t> in_bag;  // bootstrap multiplicity per training row

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

class RegressionForest {
 public:
  RegressionForest() = default;
  explicit RegressionForest(std::vector<RegressionTree> trees) : trees_(std::move(trees)) {}

  const std::vector<RegressionTree>& trees() const { return trees_; }
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;

 private:
  std::vector<RegressionTree> trees_;
};

struct ForestFit {
  RegressionForest forest;
  Eigen::VectorXd oob_prediction;  // NaN where a row was never out of bag
  std::vector<bool> never_oob;
  double oob_mse = 0.0;   // over rows with an OOB prediction
  double mean_mse = 0.0;  // mean-predictor MSE, denominator n
  bool constant_response = false;
};

// Trains a regression forest with variance-reduction splits and reports
// out-of-bag predictions.
ForestFit train_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ForestConfig& config);

struct Importance {
  Eigen::VectorXd value;      // mean OOB MSE increase over trees
  Eigen::VectorXd std_error;  // across-tree standard error
};

// Permutation importance: per tree, OOB MSE after permuting one column among
// that tree's OOB rows minus the unpermuted OOB MSE, averaged over trees.
Importance permutation_importance(const RegressionForest& forest, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& y, std::uint64_t seed, int threads = 1);

struct FeatureCurve {
  std::vector<int> k;          // descending feature counts, first entry p
  std::vector<double> cv_mse;
  int best_k = 0;
};

// Cross-validated MSE of forests restricted to the top-k features by
// importance ranked within each training fold. `folds` gives a fold id per
// row; empty selects 5 random folds.
FeatureCurve select_feature_count(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  const ForestConfig& config, std::vector<int> folds = {},
                                  double step = 0.5);

}  // namespace dtmix
