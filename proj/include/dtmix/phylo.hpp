#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dtmix {

class NewickError : public std::runtime_error {
 public:
  NewickError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Rooted, strictly binary tree over K labelled leaves.
//
// Node ids: leaves are 0..K-1 in order of appearance in the Newick text;
// internal node with index a (0-based, post-order, root last) has id K + a.
class PhyloTree {
 public:
  using NodeId = int;

  struct Internal {
    NodeId first;               // c(A)
    NodeId second;              // d(A)
    std::vector<int> leaves;    // descendant leaves, ascending
  };

  PhyloTree() = default;

  std::size_t leaf_count() const { return labels_.size(); }
  std::size_t internal_count() const { return internals_.size(); }
  std::size_t node_count() const { return labels_.size() + internals_.size(); }

  const std::vector<std::string>& leaf_labels() const { return labels_; }
  const Internal& internal(std::size_t index) const { return internals_.at(index); }
  const std::vector<Internal>& internals() const { return internals_; }

  NodeId internal_id(std::size_t index) const { return static_cast<NodeId>(labels_.size() + index); }
  bool is_leaf(NodeId id) const { return id >= 0 && static_cast<std::size_t>(id) < labels_.size(); }
  std::size_t root_index() const { return internals_.size() - 1; }

  // Leaves under any node id.
  std::vector<int> leafset(NodeId id) const;

  // Stable external name of internal node `index`.
  static std::string node_name(std::size_t index) { return "n" + std::to_string(index); }

  // Canonical binary Newick without branch lengths.
  std::string to_newick() const;

  friend PhyloTree parse_newick(std::string_view text);

 private:
  void append_newick(NodeId id, std::string& out) const;

  std::vector<std::string> labels_;
  std::vector<Internal> internals_;
};

// Parses a Newick tree. Multifurcations become left combs in input order,
// unary nodes are collapsed and branch lengths are discarded.
PhyloTree parse_newick(std::string_view text);

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CountVector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

// Counts x_{A,ij} for every node (leaves then internal nodes) of every sample.
class NodeCountTable {
 public:
  NodeCountTable() = default;
  NodeCountTable(const PhyloTree& tree, CountMatrix counts)
      : leaf_count_(tree.leaf_count()), counts_(std::move(counts)) {}

  std::size_t sample_count() const { return static_cast<std::size_t>(counts_.rows()); }
  std::int64_t count(std::size_t sample, PhyloTree::NodeId node) const {
    return counts_(static_cast<Eigen::Index>(sample), node);
  }
  std::int64_t internal_count(std::size_t sample, std::size_t index) const {
    return counts_(static_cast<Eigen::Index>(sample), static_cast<Eigen::Index>(leaf_count_ + index));
  }
  std::int64_t depth(std::size_t sample) const {
    return counts_(static_cast<Eigen::Index>(sample), counts_.cols() - 1);
  }
  std::int64_t max_depth() const { return counts_.size() == 0 ? 0 : counts_.col(counts_.cols() - 1).maxCoeff(); }
  const CountMatrix& matrix() const { return counts_; }

 private:
  std::size_t leaf_count_ = 0;
  CountMatrix counts_;
};

// Sums OTU counts (samples x K, columns in leaf order) up the tree.
NodeCountTable aggregate_counts(const PhyloTree& tree, const CountMatrix& otu_counts);

// Single-sample convenience; returns counts for all node ids.
CountVector aggregate_counts(const PhyloTree& tree, std::span<const std::int64_t> otu_counts);

}  // namespace dtmix
