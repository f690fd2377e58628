#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dtmix/phylo.hpp"

namespace dtmix {

// ---- taxonomy ---------------------------------------------------------------

struct TaxonomyTable {
  std::vector<std::string> ranks;
  // Per node id (leaves, then internal nodes) and rank: the taxon holding
  // more than the threshold share of descendant counts, if any.
  std::vector<std::vector<std::optional<std::string>>> taxa;
  std::vector<std::vector<double>> share;  // share of the leading taxon
};

// `otu_taxa[leaf][rank]` names the taxon of each leaf (empty when
// unassigned); `leaf_counts[leaf]` weighs the vote.
TaxonomyTable label_node_taxonomy(const PhyloTree& tree, const std::vector<std::string>& ranks,
                                  const std::vector<std::vector<std::string>>& otu_taxa,
                                  std::span<const double> leaf_counts, double threshold = 0.8);

// ---- short-term weight change -------------------------------------------------

struct Measurement {
  double age_days = 0.0;
  double y = 0.0;
};

// Forward per-day change to the earliest later measurement 5 to 30 days
// ahead. `series` is one subject's measurements; output is aligned to it.
std::vector<std::optional<double>> compute_delta(std::span<const Measurement> series,
                                                 double min_gap = 5.0, double max_gap = 30.0);

// Backward per-day change against the most recent earlier measurement, or
// against the earliest measurement when `earliest` is set.
std::vector<std::optional<double>> compute_backward_z(std::span<const Measurement> series,
                                                      bool earliest = false);

struct OlsFit {
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::VectorXd std_error;
  Eigen::VectorXd t_value;
  Eigen::VectorXd p_value;
  std::vector<bool> dropped;  // aliased columns, coefficient fixed at 0
  double r2 = 0.0;
  double adj_r2 = 0.0;
  double sigma = 0.0;
  int n = 0;
  int rank = 0;
  bool rank_deficient = false;
};

// Least squares of y on the columns of x (the intercept is a column).
OlsFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> names);

struct ForecastRow {
  double delta = 0.0;
  double e = 0.0;  // relative MWAZ
  double y = 0.0;  // WAZ
  double t = 0.0;  // age in days
  double z = 0.0;
  int sex = 0;     // 1 = male
};

struct SubgroupFit {
  std::string label;
  int n = 0;
  std::optional<OlsFit> full;
  std::optional<OlsFit> reduced;
};

struct ForecastModel {
  OlsFit full;     // delta ~ 1 + e + y + t + z
  OlsFit reduced;  // without e
  double delta_r2 = 0.0;
  std::vector<SubgroupFit> subgroups;  // t <= threshold, t > threshold, male, female
};

// Requires more than 6 rows for the full model; subgroups that are too
// small are reported without fits.
ForecastModel fit_forecast(std::span<const ForecastRow> rows, double age_threshold = 400.0);

// Partial residual delta - a0 - a2 y - a3 t - a4 z against e.
std::vector<std::pair<double, double>> partial_residuals(const ForecastModel& model,
                                                         std::span<const ForecastRow> rows);

}  // namespace dtmix
