#include "dtmix/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dtmix/parallel.hpp"

namespace dtmix {

namespace {

NodeParams unpack(const Eigen::VectorXd& z) {
  NodeParams p;
  p.beta = z.head<3>();
  p.nu = std::exp(z[3]);
  p.sigma = z.size() > 4 ? std::exp(z[4]) : 0.0;
  return p;
}

bool near(double x, double bound) { return std::abs(x - bound) <= 1e-9 * std::max(1.0, std::abs(bound)); }

bool on_box(const NodeParams& p, const EstimatorOptions& o) {
  const bool beta = (p.beta.cwiseAbs().array() >= o.beta_bound * (1.0 - 1e-9)).any();
  return beta || near(p.nu, o.nu_min) || near(p.nu, o.nu_max) || near(p.sigma, o.sigma_max) ||
         (p.sigma > 0.0 && near(p.sigma, o.sigma_min));
}

double stabilizer_gap(const NodeData& data, const NodeParams& p, const NodeParams& s,
                      const SeriesTables& tables) {
  double gap = 0.0;
  for (const auto& family : data.families) {
    for (const auto& obs : family) {
      if (obs.x_A == 0) continue;
      gap = std::max(gap, std::abs(node_cond_loglik(obs, p, 0.0, tables) -
                                   node_cond_loglik(obs, s, 0.0, tables)));
    }
  }
  return gap;
}

// Moves coordinates whose descent direction leads out of the box onto the
// bound when that does not raise the objective. Catches flat ridges, such as
// separated data, where the relative-change test stops short of the bound.
template <typename F>
void settle_on_bounds(F& fg, LbfgsResult& r, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  Eigen::VectorXd g(r.x.size());
  for (Eigen::Index k = 0; k < r.x.size(); ++k) {
    if (r.gradient[k] == 0.0 || r.x[k] <= lo[k] || r.x[k] >= hi[k]) continue;
    Eigen::VectorXd z = r.x;
    z[k] = r.gradient[k] < 0.0 ? hi[k] : lo[k];
    double f;
    try {
      f = fg(z, g);
    } catch (const std::exception&) {
      continue;
    }
    if (std::isfinite(f) && f <= r.value) {
      r.x = z;
      r.value = f;
      r.gradient = g;
    }
  }
}

NodeParams dm_start(const NodeData& data) {
  double xc = 0.0;
  double xa = 0.0;
  for (const auto& family : data.families) {
    for (const auto& obs : family) {
      xc += static_cast<double>(obs.x_c);
      xa += static_cast<double>(obs.x_A);
    }
  }
  const double p = (xc + 0.5) / (xa + 1.0);
  NodeParams start;
  start.beta = {std::log(p / (1.0 - p)), 0.0, 0.0};
  start.nu = 10.0;
  return start;
}

}  // namespace

void EstimatorOptions::validate() const {
  if (!(beta_bound > 0.0)) throw std::invalid_argument("beta bound must be positive");
  if (!(nu_min > 0.0 && nu_max > nu_min)) throw std::invalid_argument("need 0 < nu_min < nu_max");
  if (!(sigma_min > 0.0 && sigma_max > sigma_min)) throw std::invalid_argument("need 0 < sigma_min < sigma_max");
  if (!(sigma_init >= sigma_min && sigma_init <= sigma_max)) {
    throw std::invalid_argument("initial sigma outside its bounds");
  }
  if (optimizer.max_iterations < 1 || optimizer.memory < 1) throw std::invalid_argument("invalid optimizer settings");
  quadrature.validate();
}

NodeFit fit_dm(const NodeData& data, const SeriesTables& tables, const EstimatorOptions& options) {
  options.validate();
  NodeFit fit;
  if (!data.informative()) {
    fit.degenerate = true;
    fit.converged = true;
    return fit;
  }
  const NodeParams start = dm_start(data);
  auto fg = [&](const Eigen::VectorXd& z, Eigen::VectorXd& g) {
    const NodeParams p = unpack(z);
    const MarginalEval e = marginal_eval(data, p, start, tables, options.quadrature);
    g.head<3>() = -e.gradient.head<3>();
    g[3] = -e.gradient[3] * p.nu;
    return -e.value;
  };
  Eigen::VectorXd z0(4);
  z0 << start.beta, std::log(start.nu);
  Eigen::VectorXd lo(4);
  Eigen::VectorXd hi(4);
  lo << Eigen::Vector3d::Constant(-options.beta_bound), std::log(options.nu_min);
  hi << Eigen::Vector3d::Constant(options.beta_bound), std::log(options.nu_max);
  LbfgsResult r = minimize_box(fg, z0, lo, hi, options.optimizer);
  settle_on_bounds(fg, r, lo, hi);

  fit.params = unpack(r.x);
  fit.stabilizer = fit.params;
  fit.iterations = r.iterations;
  fit.converged = r.converged;
  fit.at_boundary = on_box(fit.params, options);
  fit.loglik = dm_loglik_full(data, fit.params, tables);
  fit.dm_loglik = fit.loglik;
  return fit;
}

NodeFit fit_node(const NodeData& data, const SeriesTables& tables, const EstimatorOptions& options,
                 const std::optional<NodeParams>& start) {
  NodeFit dm = fit_dm(data, tables, options);
  if (dm.degenerate) return dm;
  const NodeParams stab = dm.stabilizer;

  auto fg = [&](const Eigen::VectorXd& z, Eigen::VectorXd& g) {
    const NodeParams p = unpack(z);
    const MarginalEval e = marginal_eval(data, p, stab, tables, options.quadrature);
    g.head<3>() = -e.gradient.head<3>();
    g[3] = -e.gradient[3] * p.nu;
    g[4] = -e.gradient[4] * p.sigma;
    return -e.value;
  };
  NodeParams init = start.value_or(stab);
  if (!start) init.sigma = options.sigma_init;
  Eigen::VectorXd lo(5);
  Eigen::VectorXd hi(5);
  lo << Eigen::Vector3d::Constant(-options.beta_bound), std::log(options.nu_min), std::log(options.sigma_min);
  hi << Eigen::Vector3d::Constant(options.beta_bound), std::log(options.nu_max), std::log(options.sigma_max);
  Eigen::VectorXd z0(5);
  z0 << init.beta, std::log(init.nu), std::log(std::clamp(init.sigma, options.sigma_min, options.sigma_max));
  z0 = z0.cwiseMax(lo).cwiseMin(hi);
  LbfgsResult r = minimize_box(fg, z0, lo, hi, options.optimizer);
  settle_on_bounds(fg, r, lo, hi);

  NodeFit fit;
  fit.stabilizer = stab;
  fit.dm_loglik = dm.loglik;
  fit.iterations = dm.iterations + r.iterations;
  fit.converged = dm.converged && r.converged;
  fit.params = unpack(r.x);
  double stabilized = -r.value;

  // At the sigma floor, or below the sigma = 0 maximum, the DM fit wins.
  const bool at_floor = r.x[4] <= lo[4] + 1e-10;
  bool fallback = stabilized < 0.0;
  if (at_floor && !fallback) {
    NodeParams flat = fit.params;
    flat.sigma = 0.0;
    fallback = dm_loglik_difference(data, flat, stab, tables) > stabilized;
  }
  if (fallback) {
    fit.params = stab;
    fit.used_dm_fallback = true;
    fit.converged = dm.converged;
    stabilized = 0.0;
  }
  fit.loglik = stabilized + dm.loglik;
  fit.at_boundary = on_box(fit.params, options);
  fit.stabilizer_gap = stabilizer_gap(data, fit.params, stab, tables);
  return fit;
}

NodeData node_data(const PhyloTree& tree, const NodeCountTable& counts,
                   std::span<const SampleCovariates> samples, std::size_t index) {
  std::vector<std::size_t> rows(samples.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return node_data(tree, counts, samples, index, rows);
}

NodeData node_data(const PhyloTree& tree, const NodeCountTable& counts,
                   std::span<const SampleCovariates> samples, std::size_t index,
                   std::span<const std::size_t> rows) {
  if (samples.size() != counts.sample_count()) {
    throw std::invalid_argument("covariate rows do not match the count table");
  }
  const auto& node = tree.internal(index);
  std::vector<NodeObservation> obs;
  obs.reserve(rows.size());
  for (std::size_t r : rows) {
    NodeObservation o;
    o.x_c = counts.count(r, node.first);
    o.x_A = counts.internal_count(r, index);
    o.t = samples[r].t;
    o.s = samples[r].s;
    o.family = samples[r].family;
    obs.push_back(o);
  }
  return NodeData::group(obs);
}

std::size_t TreeFit::failed() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return !n; }));
}

TreeFit fit_tree(const PhyloTree& tree, const NodeCountTable& counts,
                 std::span<const SampleCovariates> samples, const SeriesTables& tables,
                 const EstimatorOptions& options, int threads) {
  options.validate();
  TreeFit out;
  out.nodes.resize(tree.internal_count());
  out.errors.resize(tree.internal_count());
  parallel_for(tree.internal_count(), threads, [&](std::size_t a) {
    try {
      out.nodes[a] = fit_node(node_data(tree, counts, samples, a), tables, options);
    } catch (const std::exception& e) {
      out.errors[a] = e.what();
    }
  });
  return out;
}

SeriesTables tables_for(std::int64_t max_count, int threshold, int order) {
  return SeriesTables(std::max<std::int64_t>(max_count + threshold + 2, 64), threshold, order);
}

}  // namespace dtmix
