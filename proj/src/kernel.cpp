#include "dtmix/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <boost/math/tools/toms748_solve.hpp>

namespace dtmix {

namespace {

constexpr double kHalfLogTwoPi = 0.91893853320467274178;

double log_binomial(std::int64_t n, std::int64_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

void check_obs(const NodeObservation& obs) {
  if (obs.x_A < 0 || obs.x_c < 0 || obs.x_c > obs.x_A) {
    throw std::invalid_argument("node observation requires 0 <= x_c <= x_A");
  }
}

double logistic(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

// l_ij - offset and its derivatives; offset carries g(nu, x_A) and any
// stabilizing constant, h_total is h(nu, x_A).
NodeTerm node_terms(const NodeObservation& obs, double nu, double gamma, double offset,
                    double h_total, const SeriesTables& tables) {
  double psi = logistic(gamma);
  double psi_c = logistic(-gamma);
  bool clamped = false;
  if (psi < kPsiClamp) {
    psi = kPsiClamp;
    psi_c = 1.0 - kPsiClamp;
    clamped = true;
  } else if (psi_c < kPsiClamp) {
    psi_c = kPsiClamp;
    psi = 1.0 - kPsiClamp;
    clamped = true;
  }
  NodeTerm t;
  double h_c = 0.0;
  double h_d = 0.0;
  if (obs.x_c > 0) {
    const RisingSums c = rising_sums(nu * psi, obs.x_c, tables);
    t.value += c.log_sum;
    h_c = c.recip_sum;
  }
  if (obs.x_d() > 0) {
    const RisingSums d = rising_sums(nu * psi_c, obs.x_d(), tables);
    t.value += d.log_sum;
    h_d = d.recip_sum;
  }
  t.value -= offset;
  t.d_nu = psi * h_c + psi_c * h_d - h_total;
  t.d_gamma = clamped ? 0.0 : nu * psi * psi_c * (h_c - h_d);
  return t;
}

// One family's observations prepared for a fixed theta: linear predictors and
// the u-independent parts of l_ij folded into a single offset.
class FamilyModel {
 public:
  struct Point {
    double log_weight = 0.0;  // -v^2/2 + sum_j (l_j - stabilizer_j)
    double d_gamma = 0.0;     // sum_j dl_j/dgamma
    Eigen::Vector3d d_beta = Eigen::Vector3d::Zero();
    double d_nu = 0.0;
  };

  FamilyModel(std::span<const NodeObservation> family, const NodeParams& params,
              const NodeParams* stabilizer, const SeriesTables& tables)
      : nu_(params.nu), sigma_(params.sigma), tables_(tables) {
    for (const auto& obs : family) {
      check_obs(obs);
      if (obs.x_A == 0) continue;
      Prepared p;
      p.obs = obs;
      p.eta = params.beta.dot(obs.design());
      const RisingSums total = rising_sums(nu_, obs.x_A, tables);
      p.offset = total.log_sum;
      p.h_total = total.recip_sum;
      if (stabilizer != nullptr) p.offset += node_cond_loglik(obs, *stabilizer, 0.0, tables);
      obs_.push_back(p);
    }
  }

  bool empty() const { return obs_.empty(); }

  Point at(double v, bool with_gradient) const {
    Point out;
    out.log_weight = -0.5 * v * v;
    for (const auto& p : obs_) {
      const double gamma = p.eta + sigma_ * v;
      const NodeTerm term = terms(p, gamma);
      out.log_weight += term.value;
      out.d_gamma += term.d_gamma;
      if (with_gradient) {
        out.d_beta += term.d_gamma * p.obs.design();
        out.d_nu += term.d_nu;
      }
    }
    return out;
  }

  // d/dv of log_weight
  double slope(double v) const {
    double s = 0.0;
    for (const auto& p : obs_) s += terms(p, p.eta + sigma_ * v).d_gamma;
    return -v + sigma_ * s;
  }

 private:
  struct Prepared {
    NodeObservation obs;
    double eta = 0.0;
    double offset = 0.0;
    double h_total = 0.0;
  };

  NodeTerm terms(const Prepared& p, double gamma) const {
    return node_terms(p.obs, nu_, gamma, p.offset, p.h_total, tables_);
  }

  double nu_;
  double sigma_;
  const SeriesTables& tables_;
  std::vector<Prepared> obs_;
};

// Mode and curvature scale of the log integrand in v.
struct Laplace {
  double center = 0.0;
  double scale = 1.0;
};

Laplace locate(const FamilyModel& model) {
  auto slope = [&](double v) { return model.slope(v); };
  const double s0 = slope(0.0);
  Laplace out;
  if (s0 == 0.0) {
    out.center = 0.0;
  } else {
    // slope(v) -> -v for large |v|, so a sign change always exists.
    const double dir = s0 > 0.0 ? 1.0 : -1.0;
    double near = 0.0;
    double far = dir;
    double s_far = slope(far);
    while (s_far * dir > 0.0) {
      near = far;
      far *= 2.0;
      s_far = slope(far);
      if (std::abs(far) > 1e6) throw std::runtime_error("random-effect mode search diverged");
    }
    double lo = std::min(near, far);
    double hi = std::max(near, far);
    double f_lo = slope(lo);
    double f_hi = slope(hi);
    if (f_lo == 0.0) {
      out.center = lo;
    } else if (f_hi == 0.0) {
      out.center = hi;
    } else {
      boost::uintmax_t iters = 200;
      const auto root = boost::math::tools::toms748_solve(
          slope, lo, hi, f_lo, f_hi, boost::math::tools::eps_tolerance<double>(48), iters);
      out.center = 0.5 * (root.first + root.second);
    }
  }
  const double delta = 1e-4;
  const double curvature = (slope(out.center + delta) - slope(out.center - delta)) / (2.0 * delta);
  if (curvature < -1e-12) out.scale = std::clamp(1.0 / std::sqrt(-curvature), 1e-8, 2.0);
  return out;
}

std::vector<double> breakpoints(const Laplace& lap, const QuadratureSpec& quad) {
  const double c = lap.center;
  const double s = lap.scale;
  const double core = quad.core_half_width * s;
  const double inner = std::min(3.0, quad.core_half_width) * s;
  std::vector<double> pts;
  if (c - core > -quad.prior_half_width) pts.push_back(-quad.prior_half_width);
  pts.insert(pts.end(), {c - core, c - inner, c + inner, c + core});
  if (c + core < quad.prior_half_width) pts.push_back(quad.prior_half_width);
  return pts;
}

template <int N>
QuadratureResult<N> checked(QuadratureResult<N> r, const QuadratureSpec& quad) {
  if (!r.converged) throw QuadratureError(quad.rel_tol, r.relative_error);
  return r;
}

// log int phi(v) exp{log_weight(v)} dv and, optionally, the posterior
// expectations of the score components.
MarginalEval family_eval(const FamilyModel& model, const QuadratureSpec& quad, bool with_gradient) {
  MarginalEval out;
  const Laplace lap = locate(model);
  const double peak = model.at(lap.center, false).log_weight;
  const auto pts = breakpoints(lap, quad);

  if (!with_gradient) {
    auto f = [&](double v) {
      Eigen::Matrix<double, 1, 1> r;
      r[0] = std::exp(model.at(v, false).log_weight - peak);
      return r;
    };
    const auto q = checked(integrate_adaptive<1>(f, pts, quad), quad);
    out.value = peak + std::log(q.value[0]) - kHalfLogTwoPi;
    return out;
  }

  auto f = [&](double v) {
    const auto p = model.at(v, true);
    const double w = std::exp(p.log_weight - peak);
    Eigen::Matrix<double, 6, 1> r;
    r << w, w * p.d_beta, w * p.d_nu, w * v * p.d_gamma;
    return r;
  };
  const auto q = checked(integrate_adaptive<6>(f, pts, quad), quad);
  out.value = peak + std::log(q.value[0]) - kHalfLogTwoPi;
  out.gradient = q.value.tail<5>() / q.value[0];
  return out;
}

MarginalEval evaluate(const NodeData& data, const NodeParams& params,
                      const NodeParams& stabilizer, const SeriesTables& tables,
                      const QuadratureSpec& quad, bool with_gradient) {
  if (!params.valid()) throw std::invalid_argument("invalid node parameters");
  if (!stabilizer.valid()) throw std::invalid_argument("invalid stabilizer parameters");
  quad.validate();
  MarginalEval total;
  for (const auto& family : data.families) {
    FamilyModel model(family, params, &stabilizer, tables);
    if (model.empty()) continue;
    if (params.sigma == 0.0) {
      const auto p = model.at(0.0, with_gradient);
      total.value += p.log_weight;
      if (with_gradient) {
        total.gradient.head<3>() += p.d_beta;
        total.gradient[3] += p.d_nu;
      }
      continue;
    }
    const MarginalEval fam = family_eval(model, quad, with_gradient);
    total.value += fam.value;
    total.gradient += fam.gradient;
  }
  return total;
}

}  // namespace

NodeData NodeData::group(std::span<const NodeObservation> observations) {
  std::map<int, std::vector<NodeObservation>> by_family;
  for (const auto& obs : observations) by_family[obs.family].push_back(obs);
  NodeData out;
  out.families.reserve(by_family.size());
  for (auto& [id, obs] : by_family) out.families.push_back(std::move(obs));
  return out;
}

std::size_t NodeData::observation_count() const {
  std::size_t n = 0;
  for (const auto& f : families) n += f.size();
  return n;
}

std::int64_t NodeData::max_count() const {
  std::int64_t m = 0;
  for (const auto& f : families)
    for (const auto& o : f) m = std::max(m, o.x_A);
  return m;
}

bool NodeData::informative() const {
  for (const auto& f : families)
    for (const auto& o : f)
      if (o.x_A > 0) return true;
  return false;
}

double logistic_mean(double eta) {
  return std::clamp(logistic(eta), kPsiClamp, 1.0 - kPsiClamp);
}

double dm_log_pmf(const NodeObservation& obs, double psi, double nu, const SeriesTables& tables) {
  check_obs(obs);
  if (!(psi > 0.0 && psi < 1.0)) throw std::domain_error("dm_log_pmf requires 0 < psi < 1");
  if (!(nu > 0.0)) throw std::domain_error("dm_log_pmf requires nu > 0");
  if (obs.x_A == 0) return 0.0;
  double value = -log_rising_sum(nu, obs.x_A, tables);
  if (obs.x_c > 0) value += log_rising_sum(nu * psi, obs.x_c, tables);
  if (obs.x_d() > 0) value += log_rising_sum(nu * (1.0 - psi), obs.x_d(), tables);
  return value + log_binomial(obs.x_A, obs.x_c);
}

NodeTerm node_cond_terms(const NodeObservation& obs, double nu, double gamma,
                         const SeriesTables& tables) {
  check_obs(obs);
  if (!(nu > 0.0)) throw std::domain_error("node likelihood requires nu > 0");
  if (obs.x_A == 0) return {};
  const RisingSums total = rising_sums(nu, obs.x_A, tables);
  return node_terms(obs, nu, gamma, total.log_sum, total.recip_sum, tables);
}

double node_cond_loglik(const NodeObservation& obs, const NodeParams& params, double u,
                        const SeriesTables& tables) {
  if (!params.valid()) throw std::invalid_argument("invalid node parameters");
  const double gamma = params.beta.dot(obs.design()) + u;
  return node_cond_terms(obs, params.nu, gamma, tables).value;
}

double marginal_loglik(const NodeData& data, const NodeParams& params,
                       const NodeParams& stabilizer, const SeriesTables& tables,
                       const QuadratureSpec& quad) {
  return evaluate(data, params, stabilizer, tables, quad, false).value;
}

Gradient marginal_grad(const NodeData& data, const NodeParams& params,
                       const NodeParams& stabilizer, const SeriesTables& tables,
                       const QuadratureSpec& quad) {
  return evaluate(data, params, stabilizer, tables, quad, true).gradient;
}

MarginalEval marginal_eval(const NodeData& data, const NodeParams& params,
                           const NodeParams& stabilizer, const SeriesTables& tables,
                           const QuadratureSpec& quad) {
  return evaluate(data, params, stabilizer, tables, quad, true);
}

double posterior_mean_effect(std::span<const NodeObservation> family, const NodeParams& params,
                             const SeriesTables& tables, const QuadratureSpec& quad) {
  if (!params.valid()) throw std::invalid_argument("invalid node parameters");
  if (params.sigma == 0.0) return 0.0;
  FamilyModel model(family, params, nullptr, tables);
  if (model.empty()) return 0.0;
  quad.validate();
  const Laplace lap = locate(model);
  const double peak = model.at(lap.center, false).log_weight;
  const auto pts = breakpoints(lap, quad);
  auto f = [&](double v) {
    const double w = std::exp(model.at(v, false).log_weight - peak);
    return Eigen::Vector2d(w, w * v);
  };
  const auto q = checked(integrate_adaptive<2>(f, pts, quad), quad);
  return params.sigma * q.value[1] / q.value[0];
}

double dm_loglik_difference(const NodeData& data, const NodeParams& params,
                            const NodeParams& stabilizer, const SeriesTables& tables) {
  NodeParams flat = params;
  flat.sigma = 0.0;
  return evaluate(data, flat, stabilizer, tables, QuadratureSpec{}, false).value;
}

double dm_loglik_full(const NodeData& data, const NodeParams& params, const SeriesTables& tables) {
  double total = 0.0;
  for (const auto& family : data.families) {
    for (const auto& obs : family) {
      if (obs.x_A == 0) continue;
      total += node_cond_loglik(obs, params, 0.0, tables) + log_binomial(obs.x_A, obs.x_c);
    }
  }
  return total;
}

}  // namespace dtmix
