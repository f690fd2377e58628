#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtmix/kernel.hpp"
#include "dtmix/lbfgs.hpp"
#include "dtmix/phylo.hpp"

namespace dtmix {

struct EstimatorOptions {
  double beta_bound = 20.0;
  double nu_min = 1e-4;
  double nu_max = 1e6;
  double sigma_min = 1e-3;
  double sigma_max = 10.0;
  double sigma_init = 0.3;
  int series_threshold = SeriesTables::kDefaultThreshold;  // for tables built internally
  int series_order = SeriesTables::kDefaultOrder;
  LbfgsOptions optimizer;
  QuadratureSpec quadrature;

  void validate() const;
};

// Maximum-likelihood fit of one node.
struct NodeFit {
  NodeParams params;
  NodeParams stabilizer;     // (beta, nu) of the sigma = 0 fit, sigma = 0
  double loglik = 0.0;       // full log-likelihood at params, binomial terms included
  double dm_loglik = 0.0;    // full log-likelihood at the stabilizer
  int iterations = 0;
  bool converged = false;
  bool used_dm_fallback = false;
  bool at_boundary = false;  // some parameter sits on its box bound
  bool degenerate = false;   // no observation with x_A > 0
  double stabilizer_gap = 0.0;  // max |l_ij(params, 0) - l_ij(stabilizer, 0)|
};

// sigma = 0 fit of (beta, nu). Degenerate data give beta = 0, nu = 1.
NodeFit fit_dm(const NodeData& data, const SeriesTables& tables, const EstimatorOptions& options = {});

// Full fit of (beta, nu, sigma): DM stabilizer, marginal maximization with
// sigma >= sigma_min and the DM fallback when the bound is hit. `start`
// replaces the default initial point (beta, nu from the DM fit, sigma_init).
NodeFit fit_node(const NodeData& data, const SeriesTables& tables, const EstimatorOptions& options = {},
                 const std::optional<NodeParams>& start = std::nullopt);

// Per-sample covariates in count-table row order.
struct SampleCovariates {
  double t = 0.0;  // scaled age
  double s = 0.0;
  int family = 0;
};

// Observations at internal node `index` for the given rows.
NodeData node_data(const PhyloTree& tree, const NodeCountTable& counts,
                   std::span<const SampleCovariates> samples, std::size_t index);
NodeData node_data(const PhyloTree& tree, const NodeCountTable& counts,
                   std::span<const SampleCovariates> samples, std::size_t index,
                   std::span<const std::size_t> rows);

struct TreeFit {
  std::vector<std::optional<NodeFit>> nodes;  // by internal index
  std::vector<std::string> errors;            // empty when the node fit succeeded

  std::size_t failed() const;
};

// Fits every internal node independently on up to `threads` workers.
TreeFit fit_tree(const PhyloTree& tree, const NodeCountTable& counts,
                 std::span<const SampleCovariates> samples, const SeriesTables& tables,
                 const EstimatorOptions& options = {}, int threads = 1);

// Tables large enough for direct table lookups up to `max_count`.
SeriesTables tables_for(std::int64_t max_count, int threshold = SeriesTables::kDefaultThreshold,
                        int order = SeriesTables::kDefaultOrder);

}  // namespace dtmix
