#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtmix/estimator.hpp"
#include "dtmix/forest.hpp"
#include "dtmix/shrinkage.hpp"
#include "dtmix/simulator.hpp"

namespace dtmix {

enum ExitCode : int { kExitOk = 0, kExitInput = 2, kExitCompute = 3 };

// Everything a command reads, from one JSON file plus flag overrides.
struct RunConfig {
  // Input paths as written; resolved against `base_dir` on use.
  std::string tree;
  std::string counts;
  std::string metadata;
  std::string taxonomy;
  std::string fits;
  std::string residuals;
  std::string mwaz;
  std::vector<std::string> exclude;
  std::string base_dir = ".";
  std::string out_dir = ".";

  // model
  double age_divisor = 100.0;
  EstimatorOptions estimator;

  // shrinkage
  ShrinkageOptions shrinkage;
  std::string shrink_mode = "cv";  // "cv" or "external"

  // forest
  ForestConfig forest;
  bool select_features = false;
  std::string feature_folds = "random";  // "random" or "family"
  int top_nodes = 10;

  // forecast
  double forecast_age_threshold = 400.0;
  double delta_min_days = 5.0;
  double delta_max_days = 30.0;
  bool z_earliest = false;

  SimConfig simulation;
  std::optional<std::uint64_t> seed;
  int threads = 1;

  static RunConfig from_json(const nlohmann::json& j, const std::string& base_dir);
  // Settings that determine outputs; paths as written, without out_dir and threads.
  nlohmann::json canonical() const;
  std::string hash() const;
  std::string resolve(const std::string& path) const;
};

int cmd_fit(const RunConfig& config, std::ostream& log);
int cmd_shrink(const RunConfig& config, std::ostream& log);
int cmd_simulate(const RunConfig& config, std::ostream& log);
int cmd_predict(const RunConfig& config, std::ostream& log);
int cmd_forecast(const RunConfig& config, std::ostream& log);

// Parses arguments and dispatches; returns the process exit code.
int run_cli(int argc, char** argv, std::ostream& log);

}  // namespace dtmix
