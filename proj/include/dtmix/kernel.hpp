#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dtmix/quadrature.hpp"
#include "dtmix/series.hpp"

namespace dtmix {

// Per-node parameters theta_A = (beta, nu, sigma). beta multiplies the design
// row (1, t, s) where t is the scaled age.
struct NodeParams {
  Eigen::Vector3d beta = Eigen::Vector3d::Zero();
  double nu = 1.0;
  double sigma = 0.0;

  bool valid() const { return nu > 0.0 && sigma >= 0.0 && beta.allFinite(); }
};

// Counts at one internal node for one sample.
struct NodeObservation {
  std::int64_t x_c = 0;  // first-child count
  std::int64_t x_A = 0;  // node total
  double t = 0.0;        // scaled age
  double s = 0.0;        // sex indicator
  int family = 0;

  std::int64_t x_d() const { return x_A - x_c; }
  Eigen::Vector3d design() const { return {1.0, t, s}; }
};

// Observations at one node grouped by family, families in ascending index.
struct NodeData {
  std::vector<std::vector<NodeObservation>> families;

  static NodeData group(std::span<const NodeObservation> observations);
  std::size_t observation_count() const;
  std::int64_t max_count() const;
  bool informative() const;  // any x_A > 0
};

using Gradient = Eigen::Matrix<double, 5, 1>;  // (beta0, beta1, beta2, nu, sigma)

inline constexpr double kPsiClamp = 1e-12;

// Logistic mean clamped to [kPsiClamp, 1 - kPsiClamp].
double logistic_mean(double eta);

// Log Dirichlet-binomial pmf of x_c given x_A, including the binomial coefficient.
double dm_log_pmf(const NodeObservation& obs, double psi, double nu, const SeriesTables& tables);

// l_ij without the binomial coefficient, at random effect u.
double node_cond_loglik(const NodeObservation& obs, const NodeParams& params, double u,
                        const SeriesTables& tables);

// l_ij and its partial derivatives with respect to nu and to the linear
// predictor gamma = beta' C + u.
struct NodeTerm {
  double value = 0.0;
  double d_nu = 0.0;
  double d_gamma = 0.0;
};
NodeTerm node_cond_terms(const NodeObservation& obs, double nu, double gamma,
                         const SeriesTables& tables);

struct MarginalEval {
  double value = 0.0;
  Gradient gradient = Gradient::Zero();
};

// Stabilized marginal log-likelihood
//   sum_i log int phi_sigma(u) exp{ sum_j l_ij(theta, u) - l_ij(stabilizer, 0) } du
// The normal density is normalized, so families without counts contribute 0
// and the sigma -> 0 limit is the plain DM log-likelihood difference, which
// is what sigma == 0 evaluates exactly.
double marginal_loglik(const NodeData& data, const NodeParams& params,
                       const NodeParams& stabilizer, const SeriesTables& tables,
                       const QuadratureSpec& quad = {});

// Gradient of marginal_loglik in (beta, nu, sigma). The sigma component uses
// the substitution u = sigma v; at sigma == 0 it is reported as 0 (the
// one-sided derivative of an even function of sigma).
Gradient marginal_grad(const NodeData& data, const NodeParams& params,
                       const NodeParams& stabilizer, const SeriesTables& tables,
                       const QuadratureSpec& quad = {});

// Value and gradient from a single set of quadratures.
MarginalEval marginal_eval(const NodeData& data, const NodeParams& params,
                           const NodeParams& stabilizer, const SeriesTables& tables,
                           const QuadratureSpec& quad = {});

// Posterior mean of the family effect u given one family's observations:
// the ratio of integrals of u and 1 against phi_sigma(u) prod_j f(x_j | u).
double posterior_mean_effect(std::span<const NodeObservation> family, const NodeParams& params,
                             const SeriesTables& tables, const QuadratureSpec& quad = {});

// Sum over observations of l_ij(params, u = 0) - l_ij(stabilizer, 0).
double dm_loglik_difference(const NodeData& data, const NodeParams& params,
                            const NodeParams& stabilizer, const SeriesTables& tables);

// Sum over observations of the full log pmf (with binomial coefficients) at u = 0.
double dm_loglik_full(const NodeData& data, const NodeParams& params, const SeriesTables& tables);

}  // namespace dtmix
