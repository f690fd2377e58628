#include "dtmix/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace dtmix {

using nlohmann::json;

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void Provenance::write_header(std::ostream& out) const {
  out << "# dtmix " << version << '\n'
      << "# command: " << command << '\n'
      << "# config_hash: " << config_hash << '\n'
      << "# seed: " << seed << '\n';
}

json Provenance::to_json() const {
  return {{"command", command}, {"config_hash", config_hash}, {"seed", seed}, {"version", version}};
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

json params_to_json(const NodeParams& p) {
  return {{"beta", {p.beta[0], p.beta[1], p.beta[2]}}, {"nu", p.nu}, {"sigma", p.sigma}};
}

NodeParams params_from_json(const json& j) {
  NodeParams p;
  const auto& b = j.at("beta");
  if (!b.is_array() || b.size() != 3) throw InputError("beta must have three entries");
  p.beta = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>()};
  p.nu = j.at("nu").get<double>();
  p.sigma = j.at("sigma").get<double>();
  if (!p.valid()) throw InputError("invalid node parameters in fits file");
  return p;
}

}  // namespace

json node_fit_to_json(const NodeFit& fit) {
  json j = params_to_json(fit.params);
  j["stabilizer"] = params_to_json(fit.stabilizer);
  j["loglik"] = fit.loglik;
  j["dm_loglik"] = fit.dm_loglik;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["used_dm_fallback"] = fit.used_dm_fallback;
  j["at_boundary"] = fit.at_boundary;
  j["degenerate"] = fit.degenerate;
  j["stabilizer_gap"] = fit.stabilizer_gap;
  return j;
}

NodeFit node_fit_from_json(const json& j) {
  NodeFit fit;
  fit.params = params_from_json(j);
  fit.stabilizer = params_from_json(j.at("stabilizer"));
  fit.loglik = j.value("loglik", 0.0);
  fit.dm_loglik = j.value("dm_loglik", 0.0);
  fit.iterations = j.value("iterations", 0);
  fit.converged = j.value("converged", false);
  fit.used_dm_fallback = j.value("used_dm_fallback", false);
  fit.at_boundary = j.value("at_boundary", false);
  fit.degenerate = j.value("degenerate", false);
  fit.stabilizer_gap = j.value("stabilizer_gap", 0.0);
  return fit;
}

json tree_fit_to_json(const PhyloTree& tree, const TreeFit& fits, const Provenance& provenance) {
  json nodes = json::array();
  std::size_t converged = 0;
  std::size_t fallback = 0;
  for (std::size_t a = 0; a < tree.internal_count(); ++a) {
    json entry;
    entry["node"] = PhyloTree::node_name(a);
    json leaves = json::array();
    for (int leaf : tree.internal(a).leaves) leaves.push_back(tree.leaf_labels()[static_cast<std::size_t>(leaf)]);
    entry["leaves"] = leaves;
    if (fits.nodes[a]) {
      entry["status"] = "ok";
      entry["fit"] = node_fit_to_json(*fits.nodes[a]);
      converged += fits.nodes[a]->converged ? 1 : 0;
      fallback += fits.nodes[a]->used_dm_fallback ? 1 : 0;
    } else {
      entry["status"] = "failed";
      entry["error"] = fits.errors[a];
    }
    nodes.push_back(std::move(entry));
  }
  json out;
  out["provenance"] = provenance.to_json();
  out["tree"] = tree.to_newick();
  out["nodes"] = nodes;
  out["summary"] = {{"nodes", tree.internal_count()},
                    {"failed", fits.failed()},
                    {"converged", converged},
                    {"dm_fallback", fallback}};
  return out;
}

std::vector<std::optional<NodeFit>> tree_fit_from_json(const json& j, const PhyloTree& tree) {
  std::vector<std::optional<NodeFit>> out(tree.internal_count());
  try {
    const std::string newick = j.at("tree").get<std::string>();
    if (parse_newick(newick).to_newick() != tree.to_newick()) throw InputError("fits were produced for a different tree");
    for (const auto& entry : j.at("nodes")) {
      const std::string name = entry.at("node").get<std::string>();
      std::size_t index = tree.internal_count();
      for (std::size_t a = 0; a < tree.internal_count(); ++a)
        if (PhyloTree::node_name(a) == name) index = a;
      if (index == tree.internal_count()) throw InputError("unknown node '" + name + "' in fits file");
      if (entry.value("status", std::string("ok")) == "ok") out[index] = node_fit_from_json(entry.at("fit"));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed fits file: ") + e.what());
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

void write_residual_csv(std::ostream& out, const ResidualCsv& table, const Provenance& provenance) {
  provenance.write_header(out);
  out << "sample_id";
  for (const auto& n : table.nodes) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < table.sample_ids.size(); ++r) {
    out << table.sample_ids[r];
    for (Eigen::Index c = 0; c < table.values.cols(); ++c) {
      out << ',' << format_double(table.values(static_cast<Eigen::Index>(r), c));
    }
    out << '\n';
  }
}

ResidualCsv read_residual_csv(std::istream& in, const std::string& source) {
  ResidualCsv table;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_csv(line);
    if (!header) {
      if (fields.empty() || fields[0] != "sample_id") throw InputError(source + ": header must start with sample_id");
      table.nodes.assign(fields.begin() + 1, fields.end());
      header = true;
      continue;
    }
    if (fields.size() != table.nodes.size() + 1) {
      throw InputError(source + ":" + std::to_string(line_no) + ": wrong number of fields");
    }
    table.sample_ids.push_back(fields[0]);
    std::vector<double> row;
    for (std::size_t k = 1; k < fields.size(); ++k) {
      double v = 0.0;
      const char* end = fields[k].data() + fields[k].size();
      const auto [ptr, ec] = std::from_chars(fields[k].data(), end, v);
      if (ec != std::errc() || ptr != end) {
        throw InputError(source + ":" + std::to_string(line_no) + ": invalid number '" + fields[k] + "'");
      }
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (!header) throw InputError(source + ": no header line");
  table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(table.nodes.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return table;
}

}  // namespace dtmix
