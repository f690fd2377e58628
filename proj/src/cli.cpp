#include "dtmix/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

#include "CLI11.hpp"

#include "dtmix/dataset.hpp"
#include "dtmix/io.hpp"
#include "dtmix/learner.hpp"

namespace dtmix {

using nlohmann::json;

namespace {

// Reads known keys from one config section and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw InputError("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      target = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw InputError("config key '" + name_ + "." + key + "' has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw InputError("unknown config key '" + name_ + "." + item.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

std::ofstream open_output(const RunConfig& config, const std::string& name) {
  std::filesystem::create_directories(config.out_dir);
  const auto path = std::filesystem::path(config.out_dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  return out;
}

Provenance provenance(const RunConfig& config, const std::string& command) {
  Provenance p;
  p.command = command;
  p.config_hash = config.hash();
  p.seed = config.seed.value_or(0);
  return p;
}

std::uint64_t require_seed(const RunConfig& config, const std::string& command) {
  if (!config.seed) throw InputError(command + " requires a seed (--seed or \"seed\" in the config)");
  return *config.seed;
}

const std::string& require_path(const std::string& path, const char* what) {
  if (path.empty()) throw InputError("config is missing the " + std::string(what) + " path");
  return path;
}

Dataset load_dataset(const RunConfig& config) {
  PhyloTree tree = read_newick_file(config.resolve(require_path(config.tree, "tree")));
  const OtuTable otus = read_counts_tsv_file(config.resolve(require_path(config.counts, "counts")));
  const MetadataTable meta = read_metadata_tsv_file(config.resolve(require_path(config.metadata, "metadata")));
  return assemble_dataset(std::move(tree), otus, meta, config.exclude);
}

SeriesTables tables_for_dataset(const Dataset& ds, const RunConfig& config) {
  return tables_for(ds.counts.max_depth(), config.estimator.series_threshold, config.estimator.series_order);
}

std::vector<SampleTiming> timing_of(const Dataset& ds) {
  std::vector<SampleTiming> out(ds.samples.size());
  for (std::size_t r = 0; r < ds.samples.size(); ++r) {
    out[r].age_days = ds.samples[r].age_days;
    out[r].order = ds.samples[r].order.value_or(0.0);
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::string child_name(const PhyloTree& tree, PhyloTree::NodeId id) {
  if (tree.is_leaf(id)) return tree.leaf_labels()[static_cast<std::size_t>(id)];
  return PhyloTree::node_name(static_cast<std::size_t>(id) - tree.leaf_count());
}

// OTU taxonomy TSV: otu_id then one column per rank, header names the ranks.
std::pair<std::vector<std::string>, std::map<std::string, std::vector<std::string>>> read_taxonomy(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::vector<std::string> ranks;
  std::map<std::string, std::vector<std::string>> taxa;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    if (line.back() == '\r') line.pop_back();
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      fields.push_back(line.substr(start, tab - start));
    fields.push_back(line.substr(start));
    if (!header) {
      ranks.assign(fields.begin() + 1, fields.end());
      header = true;
      continue;
    }
    if (fields.size() != ranks.size() + 1) throw InputError(path + ": wrong number of taxonomy fields");
    taxa[fields[0]] = std::vector<std::string>(fields.begin() + 1, fields.end());
  }
  if (!header) throw InputError(path + ": no header line");
  return {ranks, taxa};
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const std::string& base_dir) {
  RunConfig c;
  c.base_dir = base_dir;
  Section top(j, "config");
  top.read("tree", c.tree);
  top.read("counts", c.counts);
  top.read("metadata", c.metadata);
  top.read("taxonomy", c.taxonomy);
  top.read("fits", c.fits);
  top.read("residuals", c.residuals);
  top.read("mwaz", c.mwaz);
  top.read("exclude", c.exclude);
  top.read("out_dir", c.out_dir);
  top.read("threads", c.threads);
  if (const json* s = top.child("seed")) {
    if (!s->is_number_integer() || s->get<std::int64_t>() < 0) throw InputError("config key 'seed' must be a non-negative integer");
    c.seed = s->get<std::uint64_t>();
  }
  if (const json* m = top.child("model")) {
    Section s(*m, "model");
    auto& e = c.estimator;
    s.read("age_divisor", c.age_divisor);
    s.read("taylor_order", e.series_order);
    s.read("threshold", e.series_threshold);
    s.read("rel_tol", e.quadrature.rel_tol);
    s.read("abs_tol", e.quadrature.abs_tol);
    s.read("max_subdivisions", e.quadrature.max_subdivisions);
    s.read("beta_bound", e.beta_bound);
    s.read("nu_min", e.nu_min);
    s.read("nu_max", e.nu_max);
    s.read("sigma_min", e.sigma_min);
    s.read("sigma_max", e.sigma_max);
    s.read("sigma_init", e.sigma_init);
    s.read("max_iterations", e.optimizer.max_iterations);
    s.finish();
  }
  if (const json* m = top.child("shrinkage")) {
    Section s(*m, "shrinkage");
    s.read("min_age", c.shrinkage.min_age_days);
    s.read("inclusive_prior", c.shrinkage.inclusive_prior);
    s.read("mode", c.shrink_mode);
    s.finish();
  }
  if (const json* m = top.child("forest")) {
    Section s(*m, "forest");
    s.read("n_trees", c.forest.n_trees);
    s.read("mtry", c.forest.mtry);
    s.read("min_leaf", c.forest.min_leaf);
    s.read("select_features", c.select_features);
    s.read("feature_folds", c.feature_folds);
    s.read("top_nodes", c.top_nodes);
    s.finish();
  }
  if (const json* m = top.child("forecast")) {
    Section s(*m, "forecast");
    s.read("age_threshold", c.forecast_age_threshold);
    s.read("delta_min", c.delta_min_days);
    s.read("delta_max", c.delta_max_days);
    s.read("z_earliest", c.z_earliest);
    s.finish();
  }
  if (const json* m = top.child("simulation")) {
    Section s(*m, "simulation");
    auto& sim = c.simulation;
    std::vector<double> beta{sim.beta[0], sim.beta[1], sim.beta[2]};
    s.read("beta", beta);
    if (beta.size() != 3) throw InputError("simulation.beta must have three entries");
    sim.beta = {beta[0], beta[1], beta[2]};
    s.read("nu", sim.nu);
    s.read("sigma", sim.sigma);
    s.read("n_families", sim.n_families);
    s.read("n_times", sim.n_times);
    s.read("t_first", sim.t_first);
    s.read("t_last", sim.t_last);
    s.read("count_mean", sim.count_mean);
    s.read("count_size", sim.count_size);
    s.read("n_runs", sim.n_runs);
    s.read("checkpoints", sim.checkpoints);
    s.finish();
  }
  top.finish();
  c.shrinkage.age_divisor = c.age_divisor;
  return c;
}

json RunConfig::canonical() const {
  const auto& e = estimator;
  const auto& sim = simulation;
  json j;
  j["tree"] = tree;
  j["counts"] = counts;
  j["metadata"] = metadata;
  j["taxonomy"] = taxonomy;
  j["fits"] = fits;
  j["residuals"] = residuals;
  j["mwaz"] = mwaz;
  j["exclude"] = exclude;
  j["seed"] = seed ? json(*seed) : json(nullptr);
  j["model"] = {{"age_divisor", age_divisor},
                {"taylor_order", e.series_order},
                {"threshold", e.series_threshold},
                {"rel_tol", e.quadrature.rel_tol},
                {"abs_tol", e.quadrature.abs_tol},
                {"max_subdivisions", e.quadrature.max_subdivisions},
                {"beta_bound", e.beta_bound},
                {"nu_min", e.nu_min},
                {"nu_max", e.nu_max},
                {"sigma_min", e.sigma_min},
                {"sigma_max", e.sigma_max},
                {"sigma_init", e.sigma_init},
                {"max_iterations", e.optimizer.max_iterations}};
  j["shrinkage"] = {{"min_age", shrinkage.min_age_days},
                    {"inclusive_prior", shrinkage.inclusive_prior},
                    {"mode", shrink_mode}};
  j["forest"] = {{"n_trees", forest.n_trees},
                 {"mtry", forest.mtry},
                 {"min_leaf", forest.min_leaf},
                 {"select_features", select_features},
                 {"feature_folds", feature_folds},
                 {"top_nodes", top_nodes}};
  j["forecast"] = {{"age_threshold", forecast_age_threshold},
                   {"delta_min", delta_min_days},
                   {"delta_max", delta_max_days},
                   {"z_earliest", z_earliest}};
  j["simulation"] = {{"beta", {sim.beta[0], sim.beta[1], sim.beta[2]}},
                     {"nu", sim.nu},
                     {"sigma", sim.sigma},
                     {"n_families", sim.n_families},
                     {"n_times", sim.n_times},
                     {"t_first", sim.t_first},
                     {"t_last", sim.t_last},
                     {"count_mean", sim.count_mean},
                     {"count_size", sim.count_size},
                     {"n_runs", sim.n_runs},
                     {"checkpoints", sim.checkpoints}};
  return j;
}

std::string RunConfig::hash() const { return fnv1a_hex(canonical().dump()); }

std::string RunConfig::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() ? path : (std::filesystem::path(base_dir) / p).string();
}

int cmd_fit(const RunConfig& config, std::ostream& log) {
  const Dataset ds = load_dataset(config);
  const SeriesTables tables = tables_for_dataset(ds, config);
  const auto covariates = ds.covariates(config.age_divisor);
  const TreeFit fits = fit_tree(ds.tree, ds.counts, covariates, tables, config.estimator, config.threads);
  const Provenance prov = provenance(config, "fit");

  auto out = open_output(config, "fits.json");
  out << tree_fit_to_json(ds.tree, fits, prov).dump(2) << '\n';

  std::size_t converged = 0;
  std::size_t fallback = 0;
  std::size_t boundary = 0;
  for (const auto& f : fits.nodes) {
    if (!f) continue;
    converged += f->converged;
    fallback += f->used_dm_fallback;
    boundary += f->at_boundary;
  }
  auto summary = open_output(config, "fit_summary.txt");
  prov.write_header(summary);
  summary << "samples " << ds.samples.size() << '\n'
          << "families " << ds.families.size() << '\n'
          << "nodes " << ds.tree.internal_count() << '\n'
          << "converged " << converged << '\n'
          << "dm_fallback " << fallback << '\n'
          << "at_boundary " << boundary << '\n'
          << "failed " << fits.failed() << '\n';
  for (std::size_t a = 0; a < fits.errors.size(); ++a) {
    if (!fits.errors[a].empty()) summary << "error " << PhyloTree::node_name(a) << ": " << fits.errors[a] << '\n';
  }
  log << "fit: " << ds.tree.internal_count() << " nodes, " << converged << " converged, " << fallback
      << " DM fallback, " << fits.failed() << " failed\n";
  if (2 * fits.failed() > ds.tree.internal_count()) {
    log << "fit: more than half of the node fits failed\n";
    return kExitCompute;
  }
  return kExitOk;
}

int cmd_shrink(const RunConfig& config, std::ostream& log) {
  const Dataset ds = load_dataset(config);
  const SeriesTables tables = tables_for_dataset(ds, config);
  const auto covariates = ds.covariates(config.age_divisor);
  const auto timing = timing_of(ds);
  ResidualTable table;
  if (config.shrink_mode == "cv") {
    table = rolling_residuals_cv(ds.tree, ds.counts, covariates, timing, tables, config.estimator,
                                 config.shrinkage, config.threads);
  } else if (config.shrink_mode == "external") {
    std::ifstream in(config.resolve(require_path(config.fits, "fits")));
    if (!in) throw InputError("cannot open '" + config.resolve(config.fits) + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw InputError(std::string("malformed fits file: ") + e.what());
    }
    const auto fits = tree_fit_from_json(j, ds.tree);
    table = rolling_residuals(
        ds.tree, ds.counts, covariates, timing, [&](int) -> const std::vector<std::optional<NodeFit>>& { return fits; },
        tables, config.shrinkage, config.estimator.quadrature, config.threads);
  } else {
    throw InputError("shrinkage.mode must be 'cv' or 'external'");
  }
  ResidualCsv csv;
  for (std::size_t a = 0; a < ds.tree.internal_count(); ++a) csv.nodes.push_back(PhyloTree::node_name(a));
  for (std::size_t r : table.rows) csv.sample_ids.push_back(ds.samples[r].id);
  csv.values = table.residuals;
  auto out = open_output(config, "residuals.csv");
  write_residual_csv(out, csv, provenance(config, "shrink"));
  log << "shrink: " << table.rows.size() << " samples x " << csv.nodes.size() << " nodes (" << config.shrink_mode
      << ")\n";
  return kExitOk;
}

int cmd_simulate(const RunConfig& config, std::ostream& log) {
  SimConfig sim = config.simulation;
  sim.seed = require_seed(config, "simulate");
  const BenchmarkResult result = run_benchmark(sim, config.estimator, config.threads);
  const Provenance prov = provenance(config, "simulate");

  auto box = open_output(config, "benchmark.csv");
  prov.write_header(box);
  box << "# beta: " << format_double(sim.beta[0]) << ' ' << format_double(sim.beta[1]) << ' '
      << format_double(sim.beta[2]) << "; nu: " << format_double(sim.nu) << "; sigma: " << format_double(sim.sigma)
      << "; families: " << sim.n_families << "; count mean: " << format_double(sim.count_mean)
      << "; count size: " << format_double(sim.count_size) << "; runs: " << sim.n_runs << '\n';
  export_boxplot_data(result, box);

  auto summary = open_output(config, "simulation_summary.csv");
  prov.write_header(summary);
  summary << "checkpoint,time,runs,median_u_mse,median_eb_mse_gain,mean_zero_fraction,dm_fallback_fraction\n";
  const auto grid = sim.time_grid();
  for (std::size_t c = 0; c < sim.checkpoints.size(); ++c) {
    std::vector<double> u;
    std::vector<double> gain;
    double zeros = 0.0;
    double fallback = 0.0;
    for (const auto& run : result.runs) {
      u.push_back(run.checkpoints[c].u_mse);
      gain.push_back(run.checkpoints[c].eb_mse_gain);
      zeros += run.checkpoints[c].zero_fraction;
      fallback += run.checkpoints[c].used_dm_fallback;
    }
    const double n = static_cast<double>(result.runs.size());
    summary << sim.checkpoints[c] << ',' << format_double(grid[static_cast<std::size_t>(sim.checkpoints[c] - 1)]) << ','
            << result.runs.size() << ',' << format_double(median(u)) << ',' << format_double(median(gain)) << ','
            << format_double(n > 0 ? zeros / n : 0.0) << ',' << format_double(n > 0 ? fallback / n : 0.0) << '\n';
  }
  for (std::size_t k = 0; k < result.failed_runs.size(); ++k) {
    summary << "# failed run " << result.failed_runs[k] << ": " << result.errors[k] << '\n';
  }
  log << "simulate: " << result.runs.size() << " runs, " << result.failed_runs.size() << " failed\n";
  if (sim.n_runs > 0 && 2 * result.failed_runs.size() > static_cast<std::size_t>(sim.n_runs)) return kExitCompute;
  return kExitOk;
}

int cmd_predict(const RunConfig& config, std::ostream& log) {
  const std::uint64_t seed = require_seed(config, "predict");
  const std::string res_path = config.resolve(require_path(config.residuals, "residuals"));
  std::ifstream res_in(res_path);
  if (!res_in) throw InputError("cannot open '" + res_path + "'");
  const ResidualCsv residuals = read_residual_csv(res_in, res_path);
  const MetadataTable meta = read_metadata_tsv_file(config.resolve(require_path(config.metadata, "metadata")));

  std::vector<Eigen::Index> rows;
  std::vector<double> waz;
  std::vector<std::string> families;
  for (std::size_t r = 0; r < residuals.sample_ids.size(); ++r) {
    const SampleInfo* info = meta.find(residuals.sample_ids[r]);
    if (info == nullptr) throw InputError("sample '" + residuals.sample_ids[r] + "' has no metadata row");
    if (!info->waz) continue;
    rows.push_back(static_cast<Eigen::Index>(r));
    waz.push_back(*info->waz);
    families.push_back(info->family);
  }
  if (rows.size() < 2) throw InputError("predict needs at least two samples with WAZ");
  const Eigen::MatrixXd x = residuals.values(rows, Eigen::all);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(waz.data(), static_cast<Eigen::Index>(waz.size()));

  ForestConfig fc = config.forest;
  fc.seed = seed;
  fc.threads = config.threads;
  const ForestFit fit = train_forest(x, y, fc);
  const Importance imp = permutation_importance(fit.forest, x, y, derive_seed(seed, 0x1AB), config.threads);
  const Provenance prov = provenance(config, "predict");

  auto mw = open_output(config, "mwaz.csv");
  prov.write_header(mw);
  mw << "sample_id,y,mwaz,e,oob\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    const bool oob = !fit.never_oob[k];
    mw << residuals.sample_ids[static_cast<std::size_t>(rows[k])] << ',' << format_double(y[r]) << ','
       << format_double(fit.oob_prediction[r]) << ','
       << format_double(oob ? fit.oob_prediction[r] - y[r] : std::numeric_limits<double>::quiet_NaN()) << ','
       << (oob ? 1 : 0) << '\n';
  }

  std::vector<int> order(residuals.nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return imp.value[a] > imp.value[b]; });
  auto im = open_output(config, "importance.csv");
  prov.write_header(im);
  im << "rank,node,importance,std_error\n";
  for (std::size_t k = 0; k < order.size(); ++k) {
    im << k + 1 << ',' << residuals.nodes[static_cast<std::size_t>(order[k])] << ','
       << format_double(imp.value[order[k]]) << ',' << format_double(imp.std_error[order[k]]) << '\n';
  }

  auto sm = open_output(config, "forest_summary.csv");
  prov.write_header(sm);
  sm << "n,n_trees,mtry,oob_mse,mean_predictor_mse,mse_reduction,never_oob,constant_response\n";
  const auto never = std::count(fit.never_oob.begin(), fit.never_oob.end(), true);
  sm << rows.size() << ',' << fc.n_trees << ',' << fc.resolved_mtry(static_cast<int>(x.cols())) << ','
     << format_double(fit.oob_mse) << ',' << format_double(fit.mean_mse) << ','
     << format_double(fit.mean_mse > 0 ? 1.0 - fit.oob_mse / fit.mean_mse : 0.0) << ',' << never << ','
     << (fit.constant_response ? 1 : 0) << '\n';

  if (config.select_features) {
    std::vector<int> folds;
    if (config.feature_folds == "family") {
      std::vector<std::string> distinct = families;
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      for (const auto& f : families)
        folds.push_back(static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), f) - distinct.begin()));
    } else if (config.feature_folds != "random") {
      throw InputError("forest.feature_folds must be 'random' or 'family'");
    }
    const FeatureCurve curve = select_feature_count(x, y, fc, folds);
    auto cv = open_output(config, "feature_curve.csv");
    prov.write_header(cv);
    cv << "k,cv_mse,best\n";
    for (std::size_t s = 0; s < curve.k.size(); ++s) {
      cv << curve.k[s] << ',' << format_double(curve.cv_mse[s]) << ',' << (curve.k[s] == curve.best_k ? 1 : 0) << '\n';
    }
  }

  if (!config.taxonomy.empty()) {
    const Dataset ds = load_dataset(config);
    const auto [ranks, taxa] = read_taxonomy(config.resolve(config.taxonomy));
    std::vector<std::vector<std::string>> otu_taxa;
    for (const auto& label : ds.tree.leaf_labels()) {
      const auto it = taxa.find(label);
      otu_taxa.push_back(it == taxa.end() ? std::vector<std::string>(ranks.size()) : it->second);
    }
    std::vector<double> leaf_counts(ds.tree.leaf_count(), 0.0);
    for (std::size_t leaf = 0; leaf < leaf_counts.size(); ++leaf)
      leaf_counts[leaf] = static_cast<double>(ds.counts.matrix().col(static_cast<Eigen::Index>(leaf)).sum());
    const TaxonomyTable table = label_node_taxonomy(ds.tree, ranks, otu_taxa, leaf_counts);
    auto tx = open_output(config, "taxonomy.tsv");
    prov.write_header(tx);
    tx << "rank\tnode\timportance\tchild\tchild_node";
    for (const auto& r : ranks) tx << '\t' << r;
    tx << '\n';
    const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, config.top_nodes)), order.size());
    for (std::size_t k = 0; k < top; ++k) {
      const std::string& name = residuals.nodes[static_cast<std::size_t>(order[k])];
      std::size_t index = ds.tree.internal_count();
      for (std::size_t a = 0; a < ds.tree.internal_count(); ++a)
        if (PhyloTree::node_name(a) == name) index = a;
      if (index == ds.tree.internal_count()) throw InputError("residual column '" + name + "' is not a node of the tree");
      const auto& node = ds.tree.internal(index);
      for (const auto& [which, id] : {std::pair<const char*, int>{"first", node.first}, {"second", node.second}}) {
        tx << k + 1 << '\t' << name << '\t' << format_double(imp.value[order[k]]) << '\t' << which << '\t'
           << child_name(ds.tree, id);
        for (std::size_t rk = 0; rk < ranks.size(); ++rk) {
          const auto& t = table.taxa[static_cast<std::size_t>(id)][rk];
          tx << '\t' << (t ? *t : "unresolved");
        }
        tx << '\n';
      }
    }
  }
  log << "predict: " << rows.size() << " samples, OOB MSE " << format_double(fit.oob_mse) << " vs mean predictor "
      << format_double(fit.mean_mse) << '\n';
  return kExitOk;
}

int cmd_forecast(const RunConfig& config, std::ostream& log) {
  const MetadataTable meta = read_metadata_tsv_file(config.resolve(require_path(config.metadata, "metadata")));
  const std::string mwaz_path = config.resolve(require_path(config.mwaz, "mwaz"));
  std::ifstream in(mwaz_path);
  if (!in) throw InputError("cannot open '" + mwaz_path + "'");
  std::map<std::string, double> e_of;
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_csv(line);
    if (header.empty()) {
      header = fields;
      continue;
    }
    const auto col = std::find(header.begin(), header.end(), "e") - header.begin();
    if (static_cast<std::size_t>(col) >= header.size() || fields.size() != header.size()) {
      throw InputError(mwaz_path + ": expected sample_id and e columns");
    }
    if (fields[static_cast<std::size_t>(col)] == "NA") continue;
    try {
      e_of[fields[0]] = std::stod(fields[static_cast<std::size_t>(col)]);
    } catch (const std::exception&) {
      throw InputError(mwaz_path + ": invalid e value '" + fields[static_cast<std::size_t>(col)] + "'");
    }
  }

  // Weight series per subject from every sample with a WAZ reading.
  std::map<std::string, std::vector<const SampleInfo*>> by_subject;
  for (const auto& s : meta.samples)
    if (s.waz) by_subject[s.family + "\t" + s.subject].push_back(&s);
  std::vector<ForecastRow> rows;
  std::vector<std::string> ids;
  std::size_t no_delta = 0;
  std::size_t no_z = 0;
  for (auto& [key, samples] : by_subject) {
    std::stable_sort(samples.begin(), samples.end(),
                     [](const SampleInfo* a, const SampleInfo* b) { return a->age_days < b->age_days; });
    std::vector<Measurement> series;
    for (const auto* s : samples) series.push_back({s->age_days, *s->waz});
    const auto delta = compute_delta(series, config.delta_min_days, config.delta_max_days);
    const auto z = compute_backward_z(series, config.z_earliest);
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const auto e = e_of.find(samples[k]->id);
      if (e == e_of.end()) continue;
      if (!delta[k]) {
        ++no_delta;
        continue;
      }
      if (!z[k]) {
        ++no_z;
        continue;
      }
      rows.push_back({*delta[k], e->second, series[k].y, series[k].age_days, *z[k], samples[k]->sex});
      ids.push_back(samples[k]->id);
    }
  }
  if (rows.size() < 7) {
    throw InputError("forecast needs more than 6 usable samples, found " + std::to_string(rows.size()));
  }
  const ForecastModel model = fit_forecast(rows, config.forecast_age_threshold);
  const Provenance prov = provenance(config, "forecast");

  auto co = open_output(config, "forecast_coefficients.csv");
  prov.write_header(co);
  co << "group,model,term,estimate,std_error,t_value,p_value,dropped\n";
  auto write_fit = [&](const std::string& group, const std::string& name, const OlsFit& f) {
    for (std::size_t k = 0; k < f.names.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      co << group << ',' << name << ',' << f.names[k] << ',' << format_double(f.coef[i]) << ','
         << format_double(f.std_error[i]) << ',' << format_double(f.t_value[i]) << ','
         << format_double(f.p_value[i]) << ',' << (f.dropped[k] ? 1 : 0) << '\n';
    }
  };
  write_fit("all", "full", model.full);
  write_fit("all", "reduced", model.reduced);
  for (const auto& g : model.subgroups) {
    if (g.full) write_fit(g.label, "full", *g.full);
    if (g.reduced) write_fit(g.label, "reduced", *g.reduced);
  }

  auto fit_out = open_output(config, "forecast_fit.csv");
  prov.write_header(fit_out);
  fit_out << "# rows without delta: " << no_delta << "; rows without z: " << no_z << '\n';
  fit_out << "group,n,r2,adj_r2,r2_reduced,delta_r2\n";
  fit_out << "all," << model.full.n << ',' << format_double(model.full.r2) << ',' << format_double(model.full.adj_r2)
          << ',' << format_double(model.reduced.r2) << ',' << format_double(model.delta_r2) << '\n';
  for (const auto& g : model.subgroups) {
    fit_out << g.label << ',' << g.n;
    if (g.full && g.reduced) {
      fit_out << ',' << format_double(g.full->r2) << ',' << format_double(g.full->adj_r2) << ','
              << format_double(g.reduced->r2) << ',' << format_double(g.full->r2 - g.reduced->r2) << '\n';
    } else {
      fit_out << ",NA,NA,NA,NA\n";
    }
  }

  auto pr = open_output(config, "partial_residuals.csv");
  prov.write_header(pr);
  pr << "sample_id,e,partial_residual\n";
  const auto points = partial_residuals(model, rows);
  for (std::size_t k = 0; k < points.size(); ++k) {
    pr << ids[k] << ',' << format_double(points[k].first) << ',' << format_double(points[k].second) << '\n';
  }
  log << "forecast: " << rows.size() << " samples, R2 " << format_double(model.full.r2) << ", delta R2 "
      << format_double(model.delta_r2) << '\n';
  return kExitOk;
}

int run_cli(int argc, char** argv, std::ostream& log) {
  CLI::App app{"Mixed-effect Dirichlet-tree multinomial toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out_dir;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", out_dir, "output directory");
  app.set_version_flag("--version", std::string(kVersion));

  const std::map<std::string, std::pair<std::string, int (*)(const RunConfig&, std::ostream&)>> commands = {
      {"fit", {"fit every internal node and write fits.json", cmd_fit}},
      {"shrink", {"rolling empirical Bayes residuals", cmd_shrink}},
      {"simulate", {"simulation benchmark", cmd_simulate}},
      {"predict", {"random-forest MWAZ, importance and taxonomy", cmd_predict}},
      {"forecast", {"short-term weight-change model", cmd_forecast}},
  };
  for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.first);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, log);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    RunConfig config;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw InputError("cannot open config '" + config_path + "'");
      json j;
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw InputError("config '" + config_path + "' is not valid JSON: " + e.what());
      }
      config = RunConfig::from_json(j, std::filesystem::path(config_path).parent_path().string());
      if (config.base_dir.empty()) config.base_dir = ".";
    }
    if (seed) config.seed = seed;
    if (threads) config.threads = *threads;
    if (!out_dir.empty()) config.out_dir = out_dir;
    config.estimator.validate();

    for (const auto& [name, entry] : commands) {
      if (app.got_subcommand(name)) return entry.second(config, log);
    }
  } catch (const InputError& e) {
    log << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitCompute;
  }
  return kExitInput;
}

}  // namespace dtmix
