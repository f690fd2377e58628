#include "dtmix/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

#include "dtmix/parallel.hpp"
#include "dtmix/shrinkage.hpp"

namespace dtmix {

void SimConfig::validate() const {
  if (!(nu > 0.0) || !(sigma >= 0.0) || !beta.allFinite()) throw std::invalid_argument("invalid simulation parameters");
  if (n_families < 1 || children_per_family < 1) throw std::invalid_argument("need at least one family and child");
  if (n_times < 1 || !(t_last >= t_first)) throw std::invalid_argument("invalid time grid");
  if (!(count_mean > 0.0) || !(count_size > 0.0)) throw std::invalid_argument("invalid count law");
  if (n_runs < 0) throw std::invalid_argument("n_runs must be >= 0");
  for (int c : checkpoints) {
    if (c < 1 || c > n_times) throw std::invalid_argument("checkpoint " + std::to_string(c) + " outside the time grid");
  }
}

std::vector<double> SimConfig::time_grid() const {
  std::vector<double> grid(static_cast<std::size_t>(n_times));
  const double step = n_times > 1 ? (t_last - t_first) / (n_times - 1) : 0.0;
  for (int k = 0; k < n_times; ++k) grid[static_cast<std::size_t>(k)] = t_first + step * k;
  return grid;
}

NodeData SimDataset::up_to(int count) const {
  std::vector<NodeObservation> seen;
  for (const auto& o : observations)
    if (o.time_index < count) seen.push_back(o.obs);
  return NodeData::group(seen);
}

double SimDataset::zero_fraction() const {
  if (observations.empty()) return 0.0;
  const auto zeros = std::count_if(observations.begin(), observations.end(),
                                   [](const SimObservation& o) { return o.obs.x_A == 0; });
  return static_cast<double>(zeros) / static_cast<double>(observations.size());
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SimDataset simulate_dataset(const SimConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> effect(0.0, 1.0);
  // Negative binomial as a gamma mixture of Poissons.
  std::gamma_distribution<double> rate(config.count_size, config.count_mean / config.count_size);
  const auto grid = config.time_grid();

  SimDataset data;
  data.u.resize(static_cast<std::size_t>(config.n_families));
  for (int i = 0; i < config.n_families; ++i) {
    const double u = config.sigma * effect(rng);
    data.u[static_cast<std::size_t>(i)] = u;
    for (int c = 0; c < config.children_per_family; ++c) {
      const double sex = static_cast<double>((i + c) % 2);
      for (int k = 0; k < config.n_times; ++k) {
        SimObservation o;
        o.time_index = k;
        o.child = c;
        o.obs.family = i;
        o.obs.t = grid[static_cast<std::size_t>(k)];
        o.obs.s = sex;
        const double psi = logistic_mean(config.beta.dot(o.obs.design()) + u);
        std::gamma_distribution<double> ga(config.nu * psi, 1.0);
        std::gamma_distribution<double> gb(config.nu * (1.0 - psi), 1.0);
        const double a = ga(rng);
        const double b = gb(rng);
        o.q = (a + b) > 0.0 ? a / (a + b) : psi;
        const double lambda = rate(rng);
        o.obs.x_A = lambda > 0.0 ? std::poisson_distribution<std::int64_t>(lambda)(rng) : 0;
        o.obs.x_c = o.obs.x_A > 0 ? std::binomial_distribution<std::int64_t>(o.obs.x_A, o.q)(rng) : 0;
        data.observations.push_back(o);
      }
    }
  }
  return data;
}

double eb_gain(std::span<const SimObservation> observations, std::span<const double> q_hat) {
  if (observations.size() != q_hat.size()) throw std::invalid_argument("q_hat size mismatch");
  double gain = 0.0;
  for (std::size_t k = 0; k < observations.size(); ++k) {
    const auto& o = observations[k];
    if (o.obs.x_A == 0) continue;
    const double q_tilde = static_cast<double>(o.obs.x_c) / static_cast<double>(o.obs.x_A);
    gain += (q_tilde - o.q) * (q_tilde - o.q) - (q_hat[k] - o.q) * (q_hat[k] - o.q);
  }
  return gain;
}

CheckpointScore score_checkpoint(const SimDataset& data, int checkpoint, const NodeFit& fit,
                                 const SeriesTables& tables, const QuadratureSpec& quad) {
  const NodeData seen = data.up_to(checkpoint);
  const std::size_t m = data.u.size();
  std::vector<double> u_hat(m, 0.0);
  for (const auto& family : seen.families) {
    const auto i = static_cast<std::size_t>(family.front().family);
    u_hat[i] = predict_random_effect(fit, family, tables, quad);
  }
  CheckpointScore score;
  score.checkpoint = checkpoint;
  score.used_dm_fallback = fit.used_dm_fallback;
  for (std::size_t i = 0; i < m; ++i) score.u_mse += (data.u[i] - u_hat[i]) * (data.u[i] - u_hat[i]);
  score.u_mse /= static_cast<double>(m);

  std::vector<SimObservation> obs;
  std::vector<double> q_hat;
  std::size_t zeros = 0;
  for (const auto& o : data.observations) {
    if (o.time_index >= checkpoint) continue;
    obs.push_back(o);
    q_hat.push_back(shrink_proportion(fit, u_hat[static_cast<std::size_t>(o.obs.family)], o.obs));
    if (o.obs.x_A == 0) ++zeros;
    score.time = std::max(score.time, o.obs.t);
  }
  score.eb_mse_gain = eb_gain(obs, q_hat);
  score.zero_fraction = obs.empty() ? 0.0 : static_cast<double>(zeros) / static_cast<double>(obs.size());
  return score;
}

BenchmarkResult run_benchmark(const SimConfig& config, const EstimatorOptions& options, int threads) {
  config.validate();
  options.validate();
  const auto n = static_cast<std::size_t>(config.n_runs);
  std::vector<std::optional<SimRunResult>> runs(n);
  std::vector<std::string> errors(n);

  parallel_for(n, threads, [&](std::size_t r) {
    try {
      const SimDataset data = simulate_dataset(config, derive_seed(config.seed, r));
      std::int64_t max_count = 0;
      for (const auto& o : data.observations) max_count = std::max(max_count, o.obs.x_A);
      const SeriesTables tables = tables_for(max_count, options.series_threshold, options.series_order);
      SimRunResult result;
      result.run = static_cast<int>(r);
      std::optional<NodeParams> warm;
      for (int c : config.checkpoints) {
        const NodeFit fit = fit_node(data.up_to(c), tables, options, warm);
        warm.reset();
        if (!fit.used_dm_fallback && !fit.degenerate) warm = fit.params;
        result.checkpoints.push_back(score_checkpoint(data, c, fit, tables, options.quadrature));
      }
      runs[r] = std::move(result);
    } catch (const std::exception& e) {
      errors[r] = e.what();
    }
  });

  BenchmarkResult out;
  for (std::size_t r = 0; r < n; ++r) {
    if (runs[r]) {
      out.runs.push_back(std::move(*runs[r]));
    } else {
      out.failed_runs.push_back(static_cast<int>(r));
      out.errors.push_back(errors[r]);
    }
  }
  return out;
}

void export_boxplot_data(const BenchmarkResult& result, std::ostream& out) {
  out << "run,checkpoint,metric,value\n";
  const auto old_precision = out.precision(17);
  for (const auto& run : result.runs) {
    for (const auto& c : run.checkpoints) {
      out << run.run << ',' << c.checkpoint << ",u_mse," << c.u_mse << '\n';
      out << run.run << ',' << c.checkpoint << ",eb_mse_gain," << c.eb_mse_gain << '\n';
    }
  }
  out.precision(old_precision);
}

}  // namespace dtmix
