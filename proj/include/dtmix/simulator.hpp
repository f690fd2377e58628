#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dtmix/estimator.hpp"

namespace dtmix {

// One node observed on families of opposite-sex twins over a common time grid.
struct SimConfig {
  Eigen::Vector3d beta{-1.0, 0.1, 0.2};
  double nu = 10.0;
  double sigma = 0.5;
  int n_families = 10;
  int children_per_family = 2;
  int n_times = 15;
  double t_first = 0.1;  // hundreds of days
  double t_last = 8.0;
  double count_mean = 100.0;
  double count_size = 0.2;  // Var = mean + mean^2 / size
  int n_runs = 1000;
  std::vector<int> checkpoints{3, 6, 9, 12, 15};
  std::uint64_t seed = 1;

  void validate() const;
  std::vector<double> time_grid() const;
};

struct SimObservation {
  NodeObservation obs;
  double q = 0.0;      // latent split probability
  int time_index = 0;  // 0-based position on the grid
  int child = 0;
};

struct SimDataset {
  std::vector<double> u;  // per family
  std::vector<SimObservation> observations;  // family, child, time order

  // Observations with time_index < count, grouped by family.
  NodeData up_to(int count) const;
  double zero_fraction() const;
};

// SplitMix64 mix of a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

SimDataset simulate_dataset(const SimConfig& config, std::uint64_t seed);

struct CheckpointScore {
  int checkpoint = 0;
  double time = 0.0;
  double u_mse = 0.0;
  double eb_mse_gain = 0.0;
  double zero_fraction = 0.0;
  bool used_dm_fallback = false;
};

struct SimRunResult {
  int run = 0;
  std::vector<CheckpointScore> checkpoints;
};

struct BenchmarkResult {
  std::vector<SimRunResult> runs;
  std::vector<int> failed_runs;
  std::vector<std::string> errors;
};

// Scores of one dataset at one checkpoint from a fit on the data seen so far.
CheckpointScore score_checkpoint(const SimDataset& data, int checkpoint, const NodeFit& fit,
                                 const SeriesTables& tables, const QuadratureSpec& quad);

// (q_tilde - q)^2 - (q_hat - q)^2 summed over observations with x_A > 0.
double eb_gain(std::span<const SimObservation> observations, std::span<const double> q_hat);

// Simulates n_runs datasets, refits at every checkpoint (warm-started from
// the previous checkpoint) and scores random-effect prediction and shrinkage.
BenchmarkResult run_benchmark(const SimConfig& config, const EstimatorOptions& options = {},
                              int threads = 1);

// Long format: run,checkpoint,metric,value.
void export_boxplot_data(const BenchmarkResult& result, std::ostream& out);

}  // namespace dtmix
