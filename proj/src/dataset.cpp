#include "dtmix/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace dtmix {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

bool skip_line(const std::string& line) {
  return line.empty() || line == "\r" || line.front() == '#';
}

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

double parse_double(const std::string& text, const std::string& context) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw InputError(context + "invalid number '" + text + "'");
  }
  return v;
}

std::int64_t parse_count(const std::string& text, const std::string& context) {
  std::int64_t v = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw InputError(context + "invalid count '" + text + "'");
  if (v < 0) throw InputError(context + "negative count " + text);
  return v;
}

std::ifstream open(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return in;
}

}  // namespace

const SampleInfo* MetadataTable::find(const std::string& id) const {
  for (const auto& s : samples)
    if (s.id == id) return &s;
  return nullptr;
}

OtuTable read_counts_tsv(std::istream& in, const std::string& source) {
  OtuTable table;
  std::vector<std::vector<std::int64_t>> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    auto fields = split_tabs(line);
    if (!header) {
      if (fields.size() < 2) throw InputError(where(source, line_no) + "header needs sample_id and OTU columns");
      table.otu_ids.assign(fields.begin() + 1, fields.end());
      std::set<std::string> unique(table.otu_ids.begin(), table.otu_ids.end());
      if (unique.size() != table.otu_ids.size()) throw InputError(where(source, line_no) + "duplicate OTU id");
      header = true;
      continue;
    }
    if (fields.size() != table.otu_ids.size() + 1) {
      throw InputError(where(source, line_no) + "expected " + std::to_string(table.otu_ids.size() + 1) +
                       " fields, found " + std::to_string(fields.size()));
    }
    table.sample_ids.push_back(fields[0]);
    std::vector<std::int64_t> row;
    row.reserve(table.otu_ids.size());
    for (std::size_t k = 1; k < fields.size(); ++k) row.push_back(parse_count(fields[k], where(source, line_no)));
    rows.push_back(std::move(row));
  }
  if (!header) throw InputError(source + ": no header line");
  std::set<std::string> unique(table.sample_ids.begin(), table.sample_ids.end());
  if (unique.size() != table.sample_ids.size()) throw InputError(source + ": duplicate sample id");
  table.counts.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(table.otu_ids.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < rows[r].size(); ++k)
      table.counts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
  return table;
}

OtuTable read_counts_tsv_file(const std::string& path) {
  auto in = open(path);
  return read_counts_tsv(in, path);
}

MetadataTable read_metadata_tsv(std::istream& in, const std::string& source) {
  MetadataTable table;
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> column;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    const auto fields = split_tabs(line);
    if (column.empty()) {
      for (std::size_t k = 0; k < fields.size(); ++k) column[fields[k]] = k;
      for (const char* required : {"sample_id", "family", "subject", "age_days", "sex"}) {
        if (!column.count(required)) throw InputError(source + ": missing column '" + required + "'");
      }
      continue;
    }
    const std::string ctx = where(source, line_no);
    if (fields.size() != column.size()) throw InputError(ctx + "wrong number of fields");
    SampleInfo s;
    s.id = fields[column["sample_id"]];
    s.family = fields[column["family"]];
    s.subject = fields[column["subject"]];
    if (s.id.empty() || s.family.empty()) throw InputError(ctx + "empty sample or family id");
    s.age_days = parse_double(fields[column["age_days"]], ctx);
    if (s.age_days < 0.0) throw InputError(ctx + "negative age");
    const std::string& sex = fields[column["sex"]];
    if (sex != "0" && sex != "1") throw InputError(ctx + "sex must be 0 or 1, got '" + sex + "'");
    s.sex = sex == "1" ? 1 : 0;
    if (column.count("waz") && !fields[column["waz"]].empty() && fields[column["waz"]] != "NA") {
      s.waz = parse_double(fields[column["waz"]], ctx);
    }
    if (column.count("order") && !fields[column["order"]].empty() && fields[column["order"]] != "NA") {
      s.order = parse_double(fields[column["order"]], ctx);
    }
    table.samples.push_back(std::move(s));
  }
  if (column.empty()) throw InputError(source + ": no header line");
  std::set<std::string> ids;
  for (const auto& s : table.samples)
    if (!ids.insert(s.id).second) throw InputError(source + ": duplicate sample id '" + s.id + "'");
  return table;
}

MetadataTable read_metadata_tsv_file(const std::string& path) {
  auto in = open(path);
  return read_metadata_tsv(in, path);
}

PhyloTree read_newick_file(const std::string& path) {
  auto in = open(path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_newick(buffer.str());
  } catch (const NewickError& e) {
    throw InputError(path + ": " + e.what());
  }
}

std::vector<SampleCovariates> Dataset::covariates(double age_divisor) const {
  if (!(age_divisor > 0.0)) throw std::invalid_argument("age divisor must be positive");
  std::vector<SampleCovariates> out(samples.size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    out[r].t = samples[r].age_days / age_divisor;
    out[r].s = samples[r].sex;
    out[r].family = family_index(r);
  }
  return out;
}

int Dataset::family_index(std::size_t sample) const {
  const auto it = std::lower_bound(families.begin(), families.end(), samples.at(sample).family);
  return static_cast<int>(it - families.begin());
}

Dataset assemble_dataset(PhyloTree tree, const OtuTable& otus, const MetadataTable& meta,
                         const std::vector<std::string>& exclude) {
  std::unordered_map<std::string, Eigen::Index> otu_column;
  for (std::size_t k = 0; k < otus.otu_ids.size(); ++k) otu_column[otus.otu_ids[k]] = static_cast<Eigen::Index>(k);
  std::vector<Eigen::Index> leaf_column;
  for (const auto& label : tree.leaf_labels()) {
    const auto it = otu_column.find(label);
    if (it == otu_column.end()) throw InputError("tree leaf '" + label + "' has no column in the count table");
    leaf_column.push_back(it->second);
  }
  if (otus.otu_ids.size() != tree.leaf_count()) {
    for (const auto& id : otus.otu_ids) {
      if (std::find(tree.leaf_labels().begin(), tree.leaf_labels().end(), id) == tree.leaf_labels().end()) {
        throw InputError("count table OTU '" + id + "' is not a leaf of the tree");
      }
    }
  }
  const std::set<std::string> dropped(exclude.begin(), exclude.end());

  std::unordered_map<std::string, const SampleInfo*> by_id;
  for (const auto& s : meta.samples) by_id[s.id] = &s;

  Dataset ds;
  std::vector<Eigen::Index> rows;
  for (std::size_t r = 0; r < otus.sample_ids.size(); ++r) {
    const std::string& id = otus.sample_ids[r];
    if (dropped.count(id)) continue;
    const auto found = by_id.find(id);
    if (found == by_id.end()) throw InputError("sample '" + id + "' has no metadata row");
    ds.samples.push_back(*found->second);
    rows.push_back(static_cast<Eigen::Index>(r));
  }
  CountMatrix aligned(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(leaf_column.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < leaf_column.size(); ++k)
      aligned(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = otus.counts(rows[r], leaf_column[k]);

  std::set<std::string> fams;
  for (const auto& s : ds.samples) fams.insert(s.family);
  ds.families.assign(fams.begin(), fams.end());
  ds.counts = aggregate_counts(tree, aligned);
  ds.tree = std::move(tree);
  return ds;
}

}  // namespace dtmix
