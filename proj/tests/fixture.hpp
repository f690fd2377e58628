#pragma once

// Small synthetic cohort written to disk for end-to-end tests.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <unistd.h>

#include "json.hpp"

#include "dtmix/phylo.hpp"

namespace fixture {

inline constexpr const char* kTree = "(((o1,o2),o3),((o4,o5),o6));";

struct Paths {
  std::filesystem::path dir;
  std::filesystem::path tree;
  std::filesystem::path counts;
  std::filesystem::path metadata;
  std::filesystem::path taxonomy;
  std::filesystem::path config;
};

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dtmix_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Families of two children sampled every ~20 days; per-node family effects
// on a logit-normal split with Beta-binomial noise, WAZ tied to node n0.
inline Paths write_cohort(const std::filesystem::path& dir, int families = 6, int visits = 12,
                          std::uint64_t seed = 7) {
  const dtmix::PhyloTree tree = dtmix::parse_newick(kTree);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::poisson_distribution<int> depth(400);
  Paths p;
  p.dir = dir;
  p.tree = dir / "tree.nwk";
  p.counts = dir / "counts.tsv";
  p.metadata = dir / "metadata.tsv";
  p.taxonomy = dir / "taxonomy.tsv";
  p.config = dir / "config.json";
  std::ofstream(p.tree) << kTree << '\n';
  std::ofstream counts(p.counts);
  std::ofstream meta(p.metadata);
  counts << "sample_id";
  for (const auto& l : tree.leaf_labels()) counts << '\t' << l;
  counts << '\n';
  meta << "sample_id\tfamily\tsubject\tage_days\tsex\twaz\torder\n";
  const std::size_t nodes = tree.internal_count();
  int order = 0;
  for (int f = 0; f < families; ++f) {
    std::vector<double> u(nodes);
    for (auto& v : u) v = 0.5 * normal(rng);
    for (int c = 0; c < 2; ++c) {
      double waz = normal(rng);
      for (int v = 0; v < visits; ++v) {
        const double age = 10.0 + 20.0 * v + 3.0 * c + (f % 3);
        const int sex = (f + c) % 2;
        // Split every node top-down from the root.
        std::vector<std::int64_t> node_count(tree.node_count(), 0);
        node_count.back() = depth(rng);
        for (std::size_t a = nodes; a-- > 0;) {
          const auto& n = tree.internal(a);
          const double eta = -0.3 + 0.1 * age / 100.0 + 0.2 * sex + u[a];
          const double psi = 1.0 / (1.0 + std::exp(-eta));
          std::gamma_distribution<double> ga(8.0 * psi, 1.0);
          std::gamma_distribution<double> gb(8.0 * (1.0 - psi), 1.0);
          const double x = ga(rng);
          const double q = x / (x + gb(rng));
          const std::int64_t total = node_count[tree.internal_id(a)];
          const std::int64_t first = std::binomial_distribution<std::int64_t>(total, q)(rng);
          node_count[n.first] = first;
          node_count[n.second] = total - first;
        }
        const double q0 = static_cast<double>(node_count[tree.internal_id(0)]) /
                          std::max<std::int64_t>(1, node_count[tree.internal_id(2)]);
        waz = 0.7 * waz + 0.5 * (q0 - 0.5) + 0.2 * normal(rng);
        const std::string id = "s" + std::to_string(f) + "_" + std::to_string(c) + "_" + std::to_string(v);
        counts << id;
        for (std::size_t leaf = 0; leaf < tree.leaf_count(); ++leaf) counts << '\t' << node_count[leaf];
        counts << '\n';
        meta << id << "\tF" << f << "\tF" << f << "c" << c << '\t' << age << '\t' << sex << '\t' << waz << '\t'
             << order++ << '\n';
      }
    }
  }
  std::ofstream tax(p.taxonomy);
  tax << "otu\tphylum\tgenus\n"
      << "o1\tFirmicutes\tBlautia\no2\tFirmicutes\tBlautia\no3\tFirmicutes\tDorea\n"
      << "o4\tBacteroidetes\tBacteroides\no5\tBacteroidetes\tBacteroides\no6\tBacteroidetes\t\n";
  nlohmann::json config = {{"tree", "tree.nwk"},
                           {"counts", "counts.tsv"},
                           {"metadata", "metadata.tsv"},
                           {"taxonomy", "taxonomy.tsv"},
                           {"fits", "out/fits.json"},
                           {"residuals", "out/residuals.csv"},
                           {"mwaz", "out/mwaz.csv"},
                           {"shrinkage", {{"min_age", 50.0}, {"mode", "external"}}},
                           {"forest", {{"n_trees", 300}, {"min_leaf", 3}}},
                           {"simulation", {{"n_runs", 3}, {"n_families", 6}}}};
  std::ofstream(p.config) << config.dump(2) << '\n';
  return p;
}

}  // namespace fixture
