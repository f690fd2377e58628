#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dtmix/estimator.hpp"
#include "dtmix/phylo.hpp"

namespace dtmix {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SampleInfo {
  std::string id;
  std::string family;
  std::string subject;
  double age_days = 0.0;
  int sex = 0;  // 1 = male
  std::optional<double> waz;
  std::optional<double> order;  // collection order, breaks ties in age
};

// Sample metadata, one row per sample.
struct MetadataTable {
  std::vector<SampleInfo> samples;

  const SampleInfo* find(const std::string& id) const;
};

// OTU counts as read: samples x OTUs with their identifiers.
struct OtuTable {
  std::vector<std::string> sample_ids;
  std::vector<std::string> otu_ids;
  CountMatrix counts;
};

// Tab-separated; header "sample_id<TAB>otu..." then one row per sample.
// Lines starting with '#' are ignored.
OtuTable read_counts_tsv(std::istream& in, const std::string& source = "counts");
OtuTable read_counts_tsv_file(const std::string& path);

// Tab-separated with columns sample_id, family, subject, age_days, sex and
// optionally waz and order, in any column order.
MetadataTable read_metadata_tsv(std::istream& in, const std::string& source = "metadata");
MetadataTable read_metadata_tsv_file(const std::string& path);

PhyloTree read_newick_file(const std::string& path);

// Count table aligned to the tree's leaves and to the metadata rows.
struct Dataset {
  PhyloTree tree;
  std::vector<SampleInfo> samples;   // count-table row order
  std::vector<std::string> families;  // distinct family ids, sorted
  NodeCountTable counts;

  // Covariates with t = age_days / age_divisor and families indexed into `families`.
  std::vector<SampleCovariates> covariates(double age_divisor) const;
  int family_index(std::size_t sample) const;
};

// Aligns OTU columns to tree leaves, joins metadata and aggregates counts.
// Samples listed in `exclude` are dropped.
Dataset assemble_dataset(PhyloTree tree, const OtuTable& otus, const MetadataTable& meta,
                         const std::vector<std::string>& exclude = {});

}  // namespace dtmix
