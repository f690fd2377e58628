#include "dtmix/shrinkage.hpp"

#include <algorithm>
#include <stdexcept>

#include "dtmix/parallel.hpp"

namespace dtmix {

double predict_random_effect(const NodeFit& fit, std::span<const NodeObservation> prior,
                             const SeriesTables& tables, const QuadratureSpec& quad) {
  return posterior_mean_effect(prior, fit.params, tables, quad);
}

double fitted_mean(const NodeFit& fit, double u_hat, const NodeObservation& obs) {
  return logistic_mean(fit.params.beta.dot(obs.design()) + u_hat);
}

double shrink_proportion(const NodeFit& fit, double u_hat, const NodeObservation& obs) {
  if (!fit.params.valid()) throw std::invalid_argument("invalid node parameters");
  if (obs.x_A < 0 || obs.x_c < 0 || obs.x_c > obs.x_A) {
    throw std::invalid_argument("node observation requires 0 <= x_c <= x_A");
  }
  const double psi = fitted_mean(fit, u_hat, obs);
  if (obs.x_A == 0) return psi;
  const double nu = fit.params.nu;
  return (static_cast<double>(obs.x_c) + nu * psi) / (static_cast<double>(obs.x_A) + nu);
}

double residual(const NodeFit& fit, double u_hat, const NodeObservation& obs) {
  if (obs.x_A == 0) return 0.0;
  return shrink_proportion(fit, u_hat, obs) - fitted_mean(fit, u_hat, obs);
}

namespace {

// Count-table rows of each family, sorted by collection time.
std::vector<std::vector<std::size_t>> family_rows(std::span<const SampleCovariates> samples,
                                                  std::span<const SampleTiming> timing) {
  int n_fam = 0;
  for (const auto& s : samples) {
    if (s.family < 0) throw std::invalid_argument("negative family index");
    n_fam = std::max(n_fam, s.family + 1);
  }
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(n_fam));
  for (std::size_t r = 0; r < samples.size(); ++r) out[static_cast<std::size_t>(samples[r].family)].push_back(r);
  for (auto& rows : out) {
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      if (timing[a].age_days != timing[b].age_days) return timing[a].age_days < timing[b].age_days;
      return timing[a].order < timing[b].order;
    });
  }
  return out;
}

}  // namespace

ResidualTable rolling_residuals(const PhyloTree& tree, const NodeCountTable& counts,
                                std::span<const SampleCovariates> samples,
                                std::span<const SampleTiming> timing, const FitsProvider& fits,
                                const SeriesTables& tables, const ShrinkageOptions& options,
                                const QuadratureSpec& quad, int threads) {
  if (samples.size() != counts.sample_count() || timing.size() != samples.size()) {
    throw std::invalid_argument("sample metadata does not match the count table");
  }
  const auto by_family = family_rows(samples, timing);
  ResidualTable out;
  for (const auto& rows : by_family)
    for (std::size_t r : rows)
      if (timing[r].age_days >= options.min_age_days) out.rows.push_back(r);

  const auto n_rows = static_cast<Eigen::Index>(out.rows.size());
  const auto n_nodes = static_cast<Eigen::Index>(tree.internal_count());
  out.residuals = Eigen::MatrixXd::Zero(n_rows, n_nodes);
  out.u_hat = Eigen::MatrixXd::Zero(n_rows, n_nodes);
  out.n_prior = Eigen::MatrixXi::Zero(n_rows, n_nodes);

  // Output row of every retained count-table row.
  std::vector<Eigen::Index> out_row(samples.size(), -1);
  for (std::size_t k = 0; k < out.rows.size(); ++k) out_row[out.rows[k]] = static_cast<Eigen::Index>(k);

  for (std::size_t f = 0; f < by_family.size(); ++f) {
    const auto& rows = by_family[f];
    if (rows.empty()) continue;
    const auto& family_fits = fits(static_cast<int>(f));
    if (family_fits.size() != tree.internal_count()) throw std::invalid_argument("fit count does not match the tree");
    parallel_for(tree.internal_count(), threads, [&](std::size_t a) {
      if (!family_fits[a]) throw std::runtime_error("missing fit for node " + PhyloTree::node_name(a));
      const NodeFit& fit = *family_fits[a];
      std::vector<NodeObservation> obs(rows.size());
      for (std::size_t j = 0; j < rows.size(); ++j) {
        const std::size_t r = rows[j];
        obs[j].x_c = counts.count(r, tree.internal(a).first);
        obs[j].x_A = counts.internal_count(r, a);
        obs[j].t = samples[r].t;
        obs[j].s = samples[r].s;
        obs[j].family = samples[r].family;
      }
      for (std::size_t j = 0; j < rows.size(); ++j) {
        const Eigen::Index k = out_row[rows[j]];
        if (k < 0) continue;
        std::size_t end = j + 1;
        if (!options.inclusive_prior) {
          end = 0;
          while (end < j && timing[rows[end]].age_days < timing[rows[j]].age_days) ++end;
        }
        const std::span<const NodeObservation> prior(obs.data(), end);
        const double u = predict_random_effect(fit, prior, tables, quad);
        out.u_hat(k, static_cast<Eigen::Index>(a)) = u;
        out.n_prior(k, static_cast<Eigen::Index>(a)) =
            static_cast<int>(std::count_if(prior.begin(), prior.end(), [](const auto& o) { return o.x_A > 0; }));
        out.residuals(k, static_cast<Eigen::Index>(a)) = residual(fit, u, obs[j]);
      }
    });
  }
  return out;
}

ResidualTable rolling_residuals_cv(const PhyloTree& tree, const NodeCountTable& counts,
                                   std::span<const SampleCovariates> samples,
                                   std::span<const SampleTiming> timing, const SeriesTables& tables,
                                   const EstimatorOptions& estimator, const ShrinkageOptions& options,
                                   int threads) {
  const auto by_family = family_rows(samples, timing);
  std::vector<std::vector<std::optional<NodeFit>>> fold_fits(by_family.size());
  for (std::size_t f = 0; f < by_family.size(); ++f) {
    if (by_family[f].empty()) continue;
    std::vector<std::size_t> train;
    for (std::size_t r = 0; r < samples.size(); ++r)
      if (samples[r].family != static_cast<int>(f)) train.push_back(r);
    auto& fits = fold_fits[f];
    fits.resize(tree.internal_count());
    std::vector<std::string> errors(tree.internal_count());
    parallel_for(tree.internal_count(), threads, [&](std::size_t a) {
      try {
        fits[a] = fit_node(node_data(tree, counts, samples, a, train), tables, estimator);
      } catch (const std::exception& e) {
        errors[a] = e.what();
      }
    });
    for (std::size_t a = 0; a < errors.size(); ++a) {
      if (!errors[a].empty()) {
        throw std::runtime_error("fold " + std::to_string(f) + ", node " + PhyloTree::node_name(a) + ": " + errors[a]);
      }
    }
  }
  return rolling_residuals(
      tree, counts, samples, timing, [&](int f) -> const std::vector<std::optional<NodeFit>>& { return fold_fits[static_cast<std::size_t>(f)]; },
      tables, options, estimator.quadrature, threads);
}

}  // namespace dtmix
