#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtmix/dataset.hpp"
#include "dtmix/estimator.hpp"

namespace dtmix {

inline constexpr const char* kVersion = "0.1.0";

// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

struct Provenance {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version = kVersion;

  // "# key: value" lines for text outputs.
  void write_header(std::ostream& out) const;
  nlohmann::json to_json() const;
};

// Shortest representation that reads back to the same double.
std::string format_double(double v);

nlohmann::json node_fit_to_json(const NodeFit& fit);
NodeFit node_fit_from_json(const nlohmann::json& j);

// Per-node fits keyed by the tree's internal node names.
nlohmann::json tree_fit_to_json(const PhyloTree& tree, const TreeFit& fits, const Provenance& provenance);
std::vector<std::optional<NodeFit>> tree_fit_from_json(const nlohmann::json& j, const PhyloTree& tree);

// Residual matrix: sample_id then one column per internal node.
struct ResidualCsv {
  std::vector<std::string> sample_ids;
  std::vector<std::string> nodes;
  Eigen::MatrixXd values;
};
void write_residual_csv(std::ostream& out, const ResidualCsv& table, const Provenance& provenance);
ResidualCsv read_residual_csv(std::istream& in, const std::string& source = "residuals");

// Splits one CSV line without quoting support.
std::vector<std::string> split_csv(const std::string& line);

}  // namespace dtmix
