#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dtmix/estimator.hpp"

namespace dtmix {

// Empirical best predictor of a family effect from that family's earlier
// observations; 0 without any x_A > 0 or when sigma is 0.
double predict_random_effect(const NodeFit& fit, std::span<const NodeObservation> prior,
                             const SeriesTables& tables, const QuadratureSpec& quad = {});

// Fitted split probability psi = logistic(beta' C + u_hat), clamped.
double fitted_mean(const NodeFit& fit, double u_hat, const NodeObservation& obs);

// Posterior mean (x_c + nu psi) / (x_A + nu) of the split probability.
double shrink_proportion(const NodeFit& fit, double u_hat, const NodeObservation& obs);

// shrink_proportion - psi; 0 when x_A = 0.
double residual(const NodeFit& fit, double u_hat, const NodeObservation& obs);

struct ShrinkageOptions {
  double min_age_days = 250.0;
  double age_divisor = 100.0;
  // Condition the family effect on observations up to and including the
  // current sample in collection order, instead of strictly earlier times.
  bool inclusive_prior = false;
};

// Per-sample longitudinal position: age in days plus a tie-breaking order.
struct SampleTiming {
  double age_days = 0.0;
  double order = 0.0;
};

// Residual matrix over retained samples (rows, ordered by family then time)
// and internal nodes (columns).
struct ResidualTable {
  std::vector<std::size_t> rows;  // count-table row of each output row
  Eigen::MatrixXd residuals;
  Eigen::MatrixXd u_hat;
  Eigen::MatrixXi n_prior;        // prior observations with x_A > 0 behind each u_hat
};

// Fits to use when predicting the samples of family `family`.
using FitsProvider = std::function<const std::vector<std::optional<NodeFit>>&(int family)>;

// Rolling empirical Bayes residuals. `samples` and `timing` are in
// count-table row order.
ResidualTable rolling_residuals(const PhyloTree& tree, const NodeCountTable& counts,
                                std::span<const SampleCovariates> samples,
                                std::span<const SampleTiming> timing, const FitsProvider& fits,
                                const SeriesTables& tables, const ShrinkageOptions& options = {},
                                const QuadratureSpec& quad = {}, int threads = 1);

// Same, with fits from leave-one-family-out training: the fits used for
// family i come from all samples outside family i.
ResidualTable rolling_residuals_cv(const PhyloTree& tree, const NodeCountTable& counts,
                                   std::span<const SampleCovariates> samples,
                                   std::span<const SampleTiming> timing, const SeriesTables& tables,
                                   const EstimatorOptions& estimator, const ShrinkageOptions& options = {},
                                   int threads = 1);

}  // namespace dtmix
