#include "dtmix/phylo.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

namespace dtmix {

namespace {

struct RawNode {
  std::string label;
  std::size_t position = 0;
  std::vector<RawNode> children;
};

class NewickReader {
 public:
  explicit NewickReader(std::string_view text) : text_(text) {}

  RawNode read() {
    skip();
    if (pos_ >= text_.size()) throw NewickError("empty tree", pos_);
    RawNode root = subtree();
    skip();
    if (pos_ >= text_.size() || text_[pos_] != ';') throw NewickError("expected ';'", pos_);
    ++pos_;
    skip();
    if (pos_ != text_.size()) throw NewickError("unexpected text after ';'", pos_);
    return root;
  }

 private:
  void skip() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (c == '[') {
        const std::size_t close = text_.find(']', pos_);
        if (close == std::string_view::npos) throw NewickError("unterminated comment", pos_);
        pos_ = close + 1;
      } else {
        break;
      }
    }
  }

  RawNode subtree() {
    skip();
    RawNode node;
    node.position = pos_;
    if (pos_ < text_.size() && text_[pos_] == '(') {
      ++pos_;
      node.children.push_back(subtree());
      skip();
      while (pos_ < text_.size() && text_[pos_] == ',') {
        ++pos_;
        node.children.push_back(subtree());
        skip();
      }
      if (pos_ >= text_.size() || text_[pos_] != ')') throw NewickError("expected ',' or ')'", pos_);
      ++pos_;
      skip();
    }
    node.label = label();
    skip();
    if (pos_ < text_.size() && text_[pos_] == ':') {
      ++pos_;
      skip();
      branch_length();
    }
    return node;
  }

  std::string label() {
    std::string out;
    if (pos_ < text_.size() && text_[pos_] == '\'') {
      const std::size_t start = pos_++;
      while (true) {
        if (pos_ >= text_.size()) throw NewickError("unterminated quoted label", start);
        if (text_[pos_] == '\'') {
          if (pos_ + 1 < text_.size() && text_[pos_ + 1] == '\'') {
            out.push_back('\'');
            pos_ += 2;
            continue;
          }
          ++pos_;
          break;
        }
        out.push_back(text_[pos_++]);
      }
      return out;
    }
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c)) || std::string_view("()[]':;,").find(c) != std::string_view::npos) break;
      out.push_back(c);
      ++pos_;
    }
    return out;
  }

  void branch_length() {
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+' || c == 'e' || c == 'E') {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ == start) throw NewickError("expected branch length", start);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

bool needs_quotes(const std::string& label) {
  if (label.empty()) return true;
  return std::any_of(label.begin(), label.end(), [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) ||
           std::string_view("()[]':;,").find(c) != std::string_view::npos;
  });
}

}  // namespace

PhyloTree parse_newick(std::string_view text) {
  const RawNode root = NewickReader(text).read();

  // Leaves first, in order of appearance, so internal ids can be K + index.
  PhyloTree tree;
  std::unordered_set<std::string> seen;
  std::vector<const RawNode*> stack{&root};
  while (!stack.empty()) {
    const RawNode* n = stack.back();
    stack.pop_back();
    if (n->children.empty()) {
      if (n->label.empty()) throw NewickError("unlabelled leaf", n->position);
      if (!seen.insert(n->label).second) throw NewickError("duplicate leaf label '" + n->label + "'", n->position);
      tree.labels_.push_back(n->label);
    } else {
      for (auto it = n->children.rbegin(); it != n->children.rend(); ++it) stack.push_back(&*it);
    }
  }
  if (tree.labels_.size() < 2) throw NewickError("tree needs at least two leaves", 0);

  int next_leaf = 0;
  auto build = [&](auto&& self, const RawNode& n) -> PhyloTree::NodeId {
    if (n.children.empty()) return next_leaf++;
    // Children are built one at a time so comb nodes stay in post-order.
    PhyloTree::NodeId current = self(self, n.children.front());
    for (std::size_t k = 1; k < n.children.size(); ++k) {
      const PhyloTree::NodeId right_id = self(self, n.children[k]);
      PhyloTree::Internal node{current, right_id, {}};
      node.leaves = tree.leafset(current);
      const auto right = tree.leafset(right_id);
      node.leaves.insert(node.leaves.end(), right.begin(), right.end());
      std::sort(node.leaves.begin(), node.leaves.end());
      tree.internals_.push_back(std::move(node));
      current = tree.internal_id(tree.internals_.size() - 1);
    }
    return current;
  };
  build(build, root);
  return tree;
}

std::vector<int> PhyloTree::leafset(NodeId id) const {
  if (is_leaf(id)) return {id};
  return internals_.at(static_cast<std::size_t>(id) - labels_.size()).leaves;
}

void PhyloTree::append_newick(NodeId id, std::string& out) const {
  if (is_leaf(id)) {
    const std::string& label = labels_[static_cast<std::size_t>(id)];
    if (!needs_quotes(label)) {
      out += label;
      return;
    }
    out.push_back('\'');
    for (char c : label) {
      if (c == '\'') out.push_back('\'');
      out.push_back(c);
    }
    out.push_back('\'');
    return;
  }
  const Internal& node = internals_[static_cast<std::size_t>(id) - labels_.size()];
  out.push_back('(');
  append_newick(node.first, out);
  out.push_back(',');
  append_newick(node.second, out);
  out.push_back(')');
}

std::string PhyloTree::to_newick() const {
  std::string out;
  if (!internals_.empty()) append_newick(internal_id(root_index()), out);
  out.push_back(';');
  return out;
}

NodeCountTable aggregate_counts(const PhyloTree& tree, const CountMatrix& otu_counts) {
  const auto k = static_cast<Eigen::Index>(tree.leaf_count());
  if (otu_counts.cols() != k) {
    throw std::invalid_argument("count matrix has " + std::to_string(otu_counts.cols()) +
                                " columns, tree has " + std::to_string(k) + " leaves");
  }
  if (otu_counts.size() > 0 && otu_counts.minCoeff() < 0) {
    throw std::invalid_argument("negative OTU count");
  }
  CountMatrix all(otu_counts.rows(), static_cast<Eigen::Index>(tree.node_count()));
  all.leftCols(k) = otu_counts;
  // Post-order guarantees both children are filled before their parent.
  for (std::size_t a = 0; a < tree.internal_count(); ++a) {
    const auto& node = tree.internal(a);
    all.col(tree.internal_id(a)) = all.col(node.first) + all.col(node.second);
  }
  return NodeCountTable(tree, std::move(all));
}

CountVector aggregate_counts(const PhyloTree& tree, std::span<const std::int64_t> otu_counts) {
  CountMatrix row(1, static_cast<Eigen::Index>(otu_counts.size()));
  for (std::size_t i = 0; i < otu_counts.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = otu_counts[i];
  const NodeCountTable table = aggregate_counts(tree, row);
  return table.matrix().row(0).transpose();
}

}  // namespace dtmix
