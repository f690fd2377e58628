#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixture.hpp"

#include "dtmix/cli.hpp"
#include "dtmix/io.hpp"

using namespace dtmix;

namespace {

int run(std::vector<std::string> args, std::string* log_out = nullptr) {
  args.insert(args.begin(), "dtmix");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream log;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), log);
  if (log_out) *log_out = log.str();
  return code;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli: end-to-end pipeline on a synthetic cohort") {
  const auto dir = fixture::temp_dir("cli");
  const auto p = fixture::write_cohort(dir);
  const std::string out = (dir / "out").string();
  std::string log;
  REQUIRE(run({"fit", "--config", p.config.string(), "--out-dir", out}, &log) == kExitOk);
  CHECK(std::filesystem::exists(dir / "out" / "fits.json"));
  CHECK(slurp(dir / "out" / "fit_summary.txt").rfind("# dtmix ", 0) == 0);

  REQUIRE(run({"shrink", "--config", p.config.string(), "--out-dir", out}, &log) == kExitOk);
  std::ifstream res(dir / "out" / "residuals.csv");
  const ResidualCsv table = read_residual_csv(res);
  CHECK(table.nodes.size() == 5);
  CHECK(table.sample_ids.size() > 0);
  CHECK(table.values.allFinite());

  REQUIRE(run({"predict", "--config", p.config.string(), "--out-dir", out, "--seed", "3"}, &log) == kExitOk);
  CHECK(std::filesystem::exists(dir / "out" / "importance.csv"));
  CHECK(std::filesystem::exists(dir / "out" / "forest_summary.csv"));
  const std::string taxa = slurp(dir / "out" / "taxonomy.tsv");
  CHECK(taxa.find("Bacteroides") != std::string::npos);

  REQUIRE(run({"forecast", "--config", p.config.string(), "--out-dir", out}, &log) == kExitOk);
  CHECK(slurp(dir / "out" / "forecast_fit.csv").find("all,") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "out" / "partial_residuals.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("cli: input errors and exit codes") {
  const auto dir = fixture::temp_dir("cli_err");
  const auto p = fixture::write_cohort(dir, 3, 4);
  const std::string out = (dir / "out").string();
  CHECK(run({"nope"}) == kExitInput);
  CHECK(run({"fit", "--config", (dir / "missing.json").string()}) == kExitInput);
  // Seed is mandatory for the stochastic commands.
  CHECK(run({"simulate", "--config", p.config.string(), "--out-dir", out}) == kExitInput);

  std::ofstream(dir / "bad.json") << R"({"model": {"taylor_ordr": 4}})";
  std::string log;
  CHECK(run({"fit", "--config", (dir / "bad.json").string()}, &log) == kExitInput);
  CHECK(log.find("taylor_ordr") != std::string::npos);

  std::ofstream(dir / "badtree.json") << R"({"tree": "missing.nwk", "counts": "counts.tsv", "metadata": "metadata.tsv"})";
  CHECK(run({"fit", "--config", (dir / "badtree.json").string(), "--out-dir", out}) == kExitInput);

  std::ofstream(dir / "badval.json") << R"({"model": {"nu_min": -1}})";
  CHECK(run({"fit", "--config", (dir / "badval.json").string()}) == kExitInput);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cli: config hash ignores output location and threads") {
  const nlohmann::json j = {{"tree", "t.nwk"}, {"seed", 4}};
  RunConfig a = RunConfig::from_json(j, "/a");
  RunConfig b = RunConfig::from_json(j, "/b");
  b.out_dir = "/elsewhere";
  b.threads = 8;
  CHECK(a.hash() == b.hash());
  RunConfig c = RunConfig::from_json({{"tree", "t.nwk"}, {"seed", 5}}, "/a");
  CHECK(a.hash() != c.hash());
  CHECK(a.resolve("x/y.tsv") == "/a/x/y.tsv");
  CHECK(a.resolve("/abs.tsv") == "/abs.tsv");
}

TEST_CASE("cli: simulate writes benchmark tables") {
  const auto dir = fixture::temp_dir("cli_sim");
  const auto p = fixture::write_cohort(dir, 2, 2);
  const std::string out = (dir / "out").string();
  REQUIRE(run({"simulate", "--config", p.config.string(), "--out-dir", out, "--seed", "11"}) == kExitOk);
  const std::string summary = slurp(dir / "out" / "simulation_summary.csv");
  CHECK(summary.find("# seed: 11") != std::string::npos);
  CHECK(summary.find("checkpoint,time,runs") != std::string::npos);
  const std::string bench = slurp(dir / "out" / "benchmark.csv");
  CHECK(bench.find("run,checkpoint,metric,value") != std::string::npos);
  std::filesystem::remove_all(dir);
}
