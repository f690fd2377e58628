#include "dtmix/learner.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <map>
#include <tuple>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

namespace dtmix {

TaxonomyTable label_node_taxonomy(const PhyloTree& tree, const std::vector<std::string>& ranks,
                                  const std::vector<std::vector<std::string>>& otu_taxa,
                                  std::span<const double> leaf_counts, double threshold) {
  if (otu_taxa.size() != tree.leaf_count() || leaf_counts.size() != tree.leaf_count()) {
    throw std::invalid_argument("taxonomy and counts must cover every leaf");
  }
  for (const auto& row : otu_taxa)
    if (row.size() != ranks.size()) throw std::invalid_argument("taxonomy row has the wrong number of ranks");
  if (!(threshold >= 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must lie in [0, 1)");

  TaxonomyTable out;
  out.ranks = ranks;
  out.taxa.resize(tree.node_count(), std::vector<std::optional<std::string>>(ranks.size()));
  out.share.resize(tree.node_count(), std::vector<double>(ranks.size(), 0.0));
  for (std::size_t id = 0; id < tree.node_count(); ++id) {
    const auto leaves = tree.leafset(static_cast<PhyloTree::NodeId>(id));
    for (std::size_t k = 0; k < ranks.size(); ++k) {
      std::map<std::string, double> votes;
      double total = 0.0;
      for (int leaf : leaves) {
        const double w = leaf_counts[static_cast<std::size_t>(leaf)];
        total += w;
        const std::string& taxon = otu_taxa[static_cast<std::size_t>(leaf)][k];
        if (!taxon.empty()) votes[taxon] += w;
      }
      if (!(total > 0.0)) continue;
      for (const auto& [taxon, w] : votes) {
        const double s = w / total;
        if (s > out.share[id][k]) out.share[id][k] = s;
        if (s > threshold) out.taxa[id][k] = taxon;
      }
    }
  }
  return out;
}

std::vector<std::optional<double>> compute_delta(std::span<const Measurement> series, double min_gap,
                                                 double max_gap) {
  std::vector<std::optional<double>> out(series.size());
  for (std::size_t j = 0; j < series.size(); ++j) {
    const Measurement* best = nullptr;
    for (const auto& m : series) {
      const double gap = m.age_days - series[j].age_days;
      if (gap < min_gap || gap > max_gap) continue;
      if (best == nullptr || m.age_days < best->age_days) best = &m;
    }
    if (best != nullptr) out[j] = (best->y - series[j].y) / (best->age_days - series[j].age_days);
  }
  return out;
}

std::vector<std::optional<double>> compute_backward_z(std::span<const Measurement> series, bool earliest) {
  std::vector<std::optional<double>> out(series.size());
  for (std::size_t j = 0; j < series.size(); ++j) {
    const Measurement* pick = nullptr;
    for (const auto& m : series) {
      if (!(m.age_days < series[j].age_days)) continue;
      if (pick == nullptr || (earliest ? m.age_days < pick->age_days : m.age_days > pick->age_days)) pick = &m;
    }
    if (pick != nullptr) out[j] = (series[j].y - pick->y) / (series[j].age_days - pick->age_days);
  }
  return out;
}

OlsFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> names) {
  if (x.rows() != y.size()) throw std::invalid_argument("design and response rows differ");
  if (names.size() != static_cast<std::size_t>(x.cols())) throw std::invalid_argument("one name per column");
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> pivot(x);
  pivot.setThreshold(1e-10);
  const Eigen::Index rank = pivot.rank();
  OlsFit fit;
  fit.names = std::move(names);
  fit.n = static_cast<int>(n);
  fit.rank = static_cast<int>(rank);
  fit.rank_deficient = rank < p;
  fit.dropped.assign(static_cast<std::size_t>(p), true);
  std::vector<Eigen::Index> kept;
  for (Eigen::Index k = 0; k < rank; ++k) kept.push_back(pivot.colsPermutation().indices()[k]);
  std::sort(kept.begin(), kept.end());
  for (Eigen::Index k : kept) fit.dropped[static_cast<std::size_t>(k)] = false;
  if (n <= rank) throw std::invalid_argument("not enough rows for the regression");

  const Eigen::MatrixXd xk = x(Eigen::all, kept);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(xk);
  const Eigen::VectorXd beta = qr.solve(y);
  const Eigen::VectorXd resid = y - xk * beta;
  const double sse = resid.squaredNorm();
  const double sst = (y.array() - y.mean()).square().sum();
  const double dof = static_cast<double>(n - rank);
  fit.sigma = std::sqrt(sse / dof);
  fit.r2 = sst > 0.0 ? std::clamp(1.0 - sse / sst, 0.0, 1.0) : 1.0;
  fit.adj_r2 = 1.0 - (1.0 - fit.r2) * static_cast<double>(n - 1) / dof;
  fit.adj_r2 = std::min(fit.adj_r2, fit.r2);

  const Eigen::MatrixXd r = qr.matrixQR().topRows(rank).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(rank, rank));
  const Eigen::VectorXd var = (r_inv * r_inv.transpose()).diagonal() * (sse / dof);

  fit.coef = Eigen::VectorXd::Zero(p);
  fit.std_error = Eigen::VectorXd::Zero(p);
  fit.t_value = Eigen::VectorXd::Zero(p);
  fit.p_value = Eigen::VectorXd::Constant(p, 1.0);
  const boost::math::students_t dist(dof);
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const Eigen::Index c = kept[k];
    fit.coef[c] = beta[static_cast<Eigen::Index>(k)];
    fit.std_error[c] = std::sqrt(var[static_cast<Eigen::Index>(k)]);
    if (fit.std_error[c] > 0.0) {
      fit.t_value[c] = fit.coef[c] / fit.std_error[c];
      fit.p_value[c] = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(fit.t_value[c])));
    } else {
      fit.t_value[c] = fit.coef[c] == 0.0 ? 0.0 : std::copysign(INFINITY, fit.coef[c]);
      fit.p_value[c] = fit.coef[c] == 0.0 ? 1.0 : 0.0;
    }
  }
  return fit;
}

namespace {

std::pair<OlsFit, OlsFit> forecast_pair(std::span<const ForecastRow> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(n, 5);
  Eigen::VectorXd d(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    x.row(r) << 1.0, row.e, row.y, row.t, row.z;
    d[r] = row.delta;
  }
  OlsFit full = fit_ols(x, d, {"intercept", "e", "y", "t", "z"});
  const std::vector<Eigen::Index> reduced_cols{0, 2, 3, 4};
  OlsFit reduced = fit_ols(x(Eigen::all, reduced_cols), d, {"intercept", "y", "t", "z"});
  return {std::move(full), std::move(reduced)};
}

constexpr std::size_t kMinRows = 7;

}  // namespace

ForecastModel fit_forecast(std::span<const ForecastRow> rows, double age_threshold) {
  if (rows.size() < kMinRows) {
    throw std::invalid_argument("forecast model needs more than 6 rows, got " + std::to_string(rows.size()));
  }
  ForecastModel model;
  std::tie(model.full, model.reduced) = forecast_pair(rows);
  model.delta_r2 = model.full.r2 - model.reduced.r2;

  const std::pair<std::string, std::function<bool(const ForecastRow&)>> groups[] = {
      {"t<=" + std::to_string(static_cast<int>(age_threshold)), [&](const ForecastRow& r) { return r.t <= age_threshold; }},
      {"t>" + std::to_string(static_cast<int>(age_threshold)), [&](const ForecastRow& r) { return r.t > age_threshold; }},
      {"male", [](const ForecastRow& r) { return r.sex == 1; }},
      {"female", [](const ForecastRow& r) { return r.sex == 0; }},
  };
  for (const auto& [label, keep] : groups) {
    std::vector<ForecastRow> sub;
    std::copy_if(rows.begin(), rows.end(), std::back_inserter(sub), keep);
    SubgroupFit g;
    g.label = label;
    g.n = static_cast<int>(sub.size());
    if (sub.size() >= kMinRows) {
      auto [full, reduced] = forecast_pair(sub);
      g.full = std::move(full);
      g.reduced = std::move(reduced);
    }
    model.subgroups.push_back(std::move(g));
  }
  return model;
}

std::vector<std::pair<double, double>> partial_residuals(const ForecastModel& model,
                                                         std::span<const ForecastRow> rows) {
  const auto& a = model.full.coef;
  std::vector<std::pair<double, double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.emplace_back(r.e, r.delta - a[0] - a[2] * r.y - a[3] * r.t - a[4] * r.z);
  return out;
}

}  // namespace dtmix
