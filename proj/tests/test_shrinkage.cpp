#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "dtmix/shrinkage.hpp"
#include "dtmix/simulator.hpp"

using namespace dtmix;

namespace {

const SeriesTables& tables() {
  static const SeriesTables t = tables_for(2000);
  return t;
}

NodeFit fit_with(Eigen::Vector3d beta, double nu, double sigma) {
  NodeFit f;
  f.params.beta = beta;
  f.params.nu = nu;
  f.params.sigma = sigma;
  return f;
}

NodeObservation obs(std::int64_t x_c, std::int64_t x_A, double t = 0.0, double s = 0.0) {
  NodeObservation o;
  o.x_c = x_c;
  o.x_A = x_A;
  o.t = t;
  o.s = s;
  return o;
}

struct Cohort {
  PhyloTree tree = parse_newick("(a,(b,c));");
  NodeCountTable counts;
  std::vector<SampleCovariates> cov;
  std::vector<SampleTiming> timing;
};

Cohort cohort(std::uint64_t seed, bool zeros = false) {
  Cohort c;
  std::mt19937_64 rng(seed);
  std::poisson_distribution<int> pois(15);
  const int families = 4;
  const int per = 6;
  CountMatrix otu(families * per, 3);
  for (int f = 0; f < families; ++f) {
    const double shift = 0.8 * (f - 1.5);
    for (int j = 0; j < per; ++j) {
      const int r = f * per + j;
      otu(r, 0) = zeros ? 0 : pois(rng);
      otu(r, 1) = zeros ? 0 : static_cast<int>(pois(rng) * std::exp(shift));
      otu(r, 2) = zeros ? 0 : pois(rng);
      // Rows out of time order, with tied ages.
      const double age = 40.0 * ((std::min(j, 2) * 5 + (j > 2 ? j - 2 : 0)) % per);
      c.cov.push_back({age / 100.0, static_cast<double>(f % 2), f});
      c.timing.push_back({age, static_cast<double>(j)});
    }
  }
  c.counts = aggregate_counts(c.tree, otu);
  return c;
}

std::vector<std::optional<NodeFit>> fixed_fits() {
  return {fit_with({-0.2, 0.05, 0.1}, 6.0, 0.7), fit_with({0.3, -0.1, 0.0}, 12.0, 0.4)};
}

}  // namespace

TEST_CASE("shrinkage: closed forms") {
  const NodeFit f = fit_with({0.0, 0.0, 0.0}, 10.0, 0.5);
  CHECK(std::abs(shrink_proportion(f, 0.0, obs(3, 10)) - 0.4) <= 1e-12);
  CHECK(std::abs(residual(f, 0.0, obs(3, 10)) + 0.1) <= 1e-12);
  CHECK(shrink_proportion(f, 0.0, obs(0, 0)) == 0.5);
  CHECK(residual(f, 0.0, obs(0, 0)) == 0.0);
  CHECK(shrink_proportion(f, 0.0, obs(300000000, 1000000000)) == doctest::Approx(0.3).epsilon(1e-7));
  CHECK_THROWS_AS(shrink_proportion(f, 0.0, obs(4, 3)), std::invalid_argument);
}

TEST_CASE("shrinkage: child-order flip negates the residual") {
  const NodeFit f = fit_with({0.4, -0.2, 0.3}, 7.0, 0.5);
  const NodeFit g = fit_with({-0.4, 0.2, -0.3}, 7.0, 0.5);
  for (int x = 0; x <= 12; ++x) {
    const double a = residual(f, 0.25, obs(x, 12, 1.5, 1.0));
    const double b = residual(g, -0.25, obs(12 - x, 12, 1.5, 1.0));
    CHECK(a == doctest::Approx(-b).epsilon(1e-12));
  }
}

TEST_CASE("shrinkage: convex-combination identity on simulated data") {
  SimConfig c;
  c.n_families = 20;
  const SimDataset data = simulate_dataset(c, 17);
  const NodeFit f = fit_with(c.beta, c.nu, c.sigma);
  for (const auto& o : data.observations) {
    const double u = data.u[static_cast<std::size_t>(o.obs.family)];
    const double psi = fitted_mean(f, u, o.obs);
    const double q = shrink_proportion(f, u, o.obs);
    const double r = residual(f, u, o.obs);
    CHECK(std::abs(r) < 1.0);
    if (o.obs.x_A == 0) {
      CHECK(r == 0.0);
      CHECK(q == psi);
      continue;
    }
    const double xa = static_cast<double>(o.obs.x_A);
    CHECK(std::abs(q * (xa + c.nu) - (static_cast<double>(o.obs.x_c) + c.nu * psi)) <= 1e-12 * (xa + c.nu));
    const double ratio = static_cast<double>(o.obs.x_c) / xa;
    CHECK(q >= std::min(ratio, psi) - 1e-15);
    CHECK(q <= std::max(ratio, psi) + 1e-15);
    CHECK(std::abs(r - (q - psi)) <= 1e-15);
  }
}

TEST_CASE("predict_random_effect: degenerate cases and Monte Carlo oracle") {
  const NodeFit f = fit_with({-0.5, 0.1, 0.2}, 8.0, 0.6);
  CHECK(predict_random_effect(f, {}, tables()) == 0.0);
  const std::vector<NodeObservation> empty{obs(0, 0, 1.0), obs(0, 0, 2.0)};
  CHECK(predict_random_effect(f, empty, tables()) == 0.0);
  const std::vector<NodeObservation> one{obs(4, 6, 1.2, 1.0)};
  CHECK(predict_random_effect(fit_with({-0.5, 0.1, 0.2}, 8.0, 0.0), one, tables()) == 0.0);
  const auto mc = oracle::posterior_mean_mc(one, f.params, 1000000, 31);
  const double u = predict_random_effect(f, one, tables());
  CHECK(std::abs(u - mc.value) <= 3.0 * mc.std_error);
  CHECK(u > 0.0);
}

TEST_CASE("rolling_residuals: recomputation oracle and causality") {
  const Cohort c = cohort(5);
  const auto fits = fixed_fits();
  ShrinkageOptions opt;
  opt.min_age_days = 0.0;
  const FitsProvider provider = [&](int) -> const std::vector<std::optional<NodeFit>>& { return fits; };
  const ResidualTable table = rolling_residuals(c.tree, c.counts, c.cov, c.timing, provider, tables(), opt);
  REQUIRE(table.rows.size() == c.cov.size());

  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const std::size_t r = table.rows[k];
    if (k > 0) {
      const std::size_t prev = table.rows[k - 1];
      const bool ordered = c.cov[prev].family < c.cov[r].family ||
                           (c.cov[prev].family == c.cov[r].family &&
                            (c.timing[prev].age_days < c.timing[r].age_days ||
                             (c.timing[prev].age_days == c.timing[r].age_days && c.timing[prev].order < c.timing[r].order)));
      CHECK(ordered);
    }
    for (std::size_t a = 0; a < 2; ++a) {
      // Same-family observations strictly earlier in time.
      std::vector<NodeObservation> prior;
      for (std::size_t q = 0; q < c.cov.size(); ++q) {
        if (c.cov[q].family != c.cov[r].family || c.timing[q].age_days >= c.timing[r].age_days) continue;
        prior.push_back(obs(c.counts.count(q, c.tree.internal(a).first), c.counts.internal_count(q, a), c.cov[q].t,
                            c.cov[q].s));
      }
      const double u = predict_random_effect(*fits[a], prior, tables());
      const NodeObservation self =
          obs(c.counts.count(r, c.tree.internal(a).first), c.counts.internal_count(r, a), c.cov[r].t, c.cov[r].s);
      const auto col = static_cast<Eigen::Index>(a);
      const auto row = static_cast<Eigen::Index>(k);
      CHECK(table.u_hat(row, col) == doctest::Approx(u).epsilon(1e-12));
      CHECK(table.residuals(row, col) == doctest::Approx(residual(*fits[a], u, self)).epsilon(1e-12));
      if (prior.empty()) CHECK(table.u_hat(row, col) == 0.0);
    }
  }

  // Dropping everything from the last time point onward leaves earlier rows unchanged.
  double last = 0.0;
  for (const auto& t : c.timing) last = std::max(last, t.age_days);
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < c.cov.size(); ++r)
    if (c.timing[r].age_days < last) keep.push_back(r);
  CountMatrix sub(static_cast<Eigen::Index>(keep.size()), 3);
  std::vector<SampleCovariates> cov;
  std::vector<SampleTiming> timing;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    sub.row(static_cast<Eigen::Index>(k)) = c.counts.matrix().row(static_cast<Eigen::Index>(keep[k])).head(3);
    cov.push_back(c.cov[keep[k]]);
    timing.push_back(c.timing[keep[k]]);
  }
  const ResidualTable trimmed =
      rolling_residuals(c.tree, aggregate_counts(c.tree, sub), cov, timing, provider, tables(), opt);
  for (std::size_t k = 0; k < trimmed.rows.size(); ++k) {
    const std::size_t original = keep[trimmed.rows[k]];
    const auto pos = std::find(table.rows.begin(), table.rows.end(), original) - table.rows.begin();
    CHECK(trimmed.u_hat.row(static_cast<Eigen::Index>(k)) == table.u_hat.row(pos));
  }
}

TEST_CASE("rolling_residuals: min age, inclusive prior and all-zero counts") {
  const Cohort c = cohort(6);
  const auto fits = fixed_fits();
  const FitsProvider provider = [&](int) -> const std::vector<std::optional<NodeFit>>& { return fits; };
  ShrinkageOptions opt;
  opt.min_age_days = 100.0;
  const ResidualTable table = rolling_residuals(c.tree, c.counts, c.cov, c.timing, provider, tables(), opt);
  for (std::size_t r : table.rows) CHECK(c.timing[r].age_days >= 100.0);
  CHECK(table.rows.size() < c.cov.size());

  opt.inclusive_prior = true;
  const ResidualTable incl = rolling_residuals(c.tree, c.counts, c.cov, c.timing, provider, tables(), opt);
  CHECK((incl.n_prior.array() > table.n_prior.array()).any());

  const Cohort z = cohort(6, true);
  ShrinkageOptions all;
  all.min_age_days = 0.0;
  const ResidualTable zero = rolling_residuals(z.tree, z.counts, z.cov, z.timing, provider, tables(), all);
  CHECK(zero.residuals.isZero(0.0));
  CHECK(zero.u_hat.isZero(0.0));

  std::vector<std::optional<NodeFit>> missing{fits[0], std::nullopt};
  const FitsProvider bad = [&](int) -> const std::vector<std::optional<NodeFit>>& { return missing; };
  CHECK_THROWS(rolling_residuals(c.tree, c.counts, c.cov, c.timing, bad, tables(), opt));
}

TEST_CASE("rolling_residuals_cv: test family never enters its own training set") {
  const Cohort c = cohort(8);
  ShrinkageOptions opt;
  opt.min_age_days = 0.0;
  const EstimatorOptions est;
  const ResidualTable cv = rolling_residuals_cv(c.tree, c.counts, c.cov, c.timing, tables(), est, opt);

  // Manual fold for family 2 only.
  std::vector<std::size_t> train;
  for (std::size_t r = 0; r < c.cov.size(); ++r)
    if (c.cov[r].family != 2) train.push_back(r);
  std::vector<std::optional<NodeFit>> fold(2);
  for (std::size_t a = 0; a < 2; ++a) fold[a] = fit_node(node_data(c.tree, c.counts, c.cov, a, train), tables(), est);
  const FitsProvider provider = [&](int) -> const std::vector<std::optional<NodeFit>>& { return fold; };
  const ResidualTable manual = rolling_residuals(c.tree, c.counts, c.cov, c.timing, provider, tables(), opt);
  int rows = 0;
  for (std::size_t k = 0; k < cv.rows.size(); ++k) {
    if (c.cov[cv.rows[k]].family != 2) continue;
    ++rows;
    CHECK(cv.residuals.row(static_cast<Eigen::Index>(k)) == manual.residuals.row(static_cast<Eigen::Index>(k)));
  }
  CHECK(rows == 6);
}
