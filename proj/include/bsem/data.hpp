#pragma once
// CSV ingestion and block construction: group / missing-pattern / cluster
// sufficient statistics for the block likelihood.

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bsem/partable.hpp"

namespace bsem {

struct Dataset {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;         // NaN = missing
  std::vector<int> group;         // per-row group index (1-based), empty if none
  std::vector<int> cluster;       // per-row cluster index (1-based), empty if none
  std::vector<std::string> group_labels;
  int ngroups = 1;

  int nrows() const { return static_cast<int>(values.rows()); }
};

inline Dataset load_csv(const std::string& path, const std::string& group_col = "",
                        const std::string& cluster_col = "") {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open data file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty data file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.push_back("");
    return out;
  };

  std::vector<std::string> header = split(line);
  int gcol = -1, ccol = -1;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (!group_col.empty() && header[k] == group_col) gcol = static_cast<int>(k);
    if (!cluster_col.empty() && header[k] == cluster_col) ccol = static_cast<int>(k);
  }
  if (!group_col.empty() && gcol < 0) throw std::runtime_error("group column not found: " + group_col);
  if (!cluster_col.empty() && ccol < 0) throw std::runtime_error("cluster column not found: " + cluster_col);

  std::vector<std::vector<double>> num_rows;
  std::vector<int> groups, clusters;
  std::map<std::string, int> group_map, cluster_map;
  Dataset ds;

  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells = split(line);
    if (cells.size() != header.size())
      throw std::runtime_error("row has " + std::to_string(cells.size()) + " cells, header has " +
                               std::to_string(header.size()));
    std::vector<double> row;
    row.reserve(header.size());
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const std::string& c = cells[k];
      if (static_cast<int>(k) == gcol) {
        auto [it, inserted] = group_map.try_emplace(c, static_cast<int>(group_map.size()) + 1);
        groups.push_back(it->second);
        if (inserted) ds.group_labels.push_back(c);
        continue;
      }
      if (static_cast<int>(k) == ccol) {
        auto [it, inserted] = cluster_map.try_emplace(c, static_cast<int>(cluster_map.size()) + 1);
        clusters.push_back(it->second);
        continue;
      }
      if (c.empty() || c == "NA" || c == "na" || c == "NaN") {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        try {
          row.push_back(std::stod(c));
        } catch (const std::exception&) {
          throw std::runtime_error("non-numeric cell '" + c + "' in column " + header[k]);
        }
      }
    }
    num_rows.push_back(std::move(row));
  }

  for (std::size_t k = 0; k < header.size(); ++k)
    if (static_cast<int>(k) != gcol && static_cast<int>(k) != ccol) ds.columns.push_back(header[k]);
  ds.values.resize(num_rows.size(), ds.columns.size());
  for (std::size_t i = 0; i < num_rows.size(); ++i)
    for (std::size_t k = 0; k < ds.columns.size(); ++k) ds.values(i, k) = num_rows[i][k];
  ds.group = std::move(groups);
  ds.cluster = std::move(clusters);
  ds.ngroups = ds.group.empty() ? 1 : static_cast<int>(group_map.size());
  return ds;
}

struct DataBlock {
  enum class Kind { Group, MissingPattern, Cluster };
  Kind kind = Kind::Group;
  int group = 1;
  int n = 0;                       // cases (group/pattern) or cluster size (cluster)
  std::vector<int> observed;       // level-1 observed indices present (group/pattern)
  Eigen::VectorXd ybar;            // mean over observed
  Eigen::MatrixXd S;               // scatter/n over observed (ML divisor)
  // cluster blocks
  std::vector<int> within_obs;     // level-1 ov indices that vary within cluster
  std::vector<int> between_obs;    // level-2 ov indices present for this cluster
  Eigen::MatrixXd SW;              // within scatter (sum of squares about the cluster mean)
  Eigen::VectorXd ybar_w;          // cluster mean over within_obs
  Eigen::VectorXd y_b;             // between-only observations (level-2 ov order, between-only part)
  bool has_missing = false;
  Eigen::MatrixXd raw;             // n x p1 within-part rows (NaN = missing), for missing clusters
  Eigen::VectorXd raw_b;           // between-only values (NaN = missing)
};

struct BlockSet {
  std::vector<DataBlock> blocks;
  int n_total = 0;                 // observation rows entering the likelihood
  int n_dropped = 0;               // all-missing (or listwise-deleted) rows
  std::vector<std::string> warnings;
};

// Build likelihood blocks for a single-level model (group / pattern kinds).
inline BlockSet make_blocks(const Dataset& ds, const ParameterTable& pt, const std::string& missing = "listwise") {
  if (pt.nlevels != 1) throw std::runtime_error("make_blocks: use make_cluster_blocks for two-level models");
  const auto& ov = pt.ov[0];
  const int p = static_cast<int>(ov.size());
  std::vector<int> col_of(p);
  for (int j = 0; j < p; ++j) {
    const auto it = std::find(ds.columns.begin(), ds.columns.end(), ov[j]);
    if (it == ds.columns.end()) throw std::runtime_error("model variable not in data: " + ov[j]);
    col_of[j] = static_cast<int>(it - ds.columns.begin());
  }
  BlockSet bs;
  const int G = pt.ngroups;
  if (!ds.group.empty() && ds.ngroups != G)
    throw std::runtime_error("data has " + std::to_string(ds.ngroups) + " groups, model expects " + std::to_string(G));

  for (int g = 1; g <= G; ++g) {
    // collect rows of this group
    std::vector<int> rows;
    for (int i = 0; i < ds.nrows(); ++i)
      if (ds.group.empty() ? g == 1 : ds.group[i] == g) rows.push_back(i);

    if (missing == "listwise") {
      std::vector<int> keep;
      for (int i : rows) {
        bool complete = true;
        for (int j = 0; j < p; ++j)
          if (std::isnan(ds.values(i, col_of[j]))) complete = false;
        if (complete)
          keep.push_back(i);
        else
          ++bs.n_dropped;
      }
      if (keep.empty()) throw std::runtime_error("no complete cases in group " + std::to_string(g));
      DataBlock b;
      b.kind = DataBlock::Kind::Group;
      b.group = g;
      b.n = static_cast<int>(keep.size());
      b.observed.resize(p);
      for (int j = 0; j < p; ++j) b.observed[j] = j;
      Eigen::MatrixXd Y(b.n, p);
      for (int r = 0; r < b.n; ++r)
        for (int j = 0; j < p; ++j) Y(r, j) = ds.values(keep[r], col_of[j]);
      b.ybar = Y.colwise().mean();
      Eigen::MatrixXd C = Y.rowwise() - b.ybar.transpose();
      b.S = C.transpose() * C / static_cast<double>(b.n);
      bs.n_total += b.n;
      bs.blocks.push_back(std::move(b));
    } else if (missing == "ml") {
      // group rows by missingness pattern
      std::map<std::vector<int>, std::vector<int>> patterns;  // observed index list -> rows
      for (int i : rows) {
        std::vector<int> obs;
        for (int j = 0; j < p; ++j)
          if (!std::isnan(ds.values(i, col_of[j]))) obs.push_back(j);
        if (obs.empty()) {
          ++bs.n_dropped;
          continue;
        }
        patterns[obs].push_back(i);
      }
      if (patterns.empty()) throw std::runtime_error("no usable cases in group " + std::to_string(g));
      for (const auto& [obs, prow] : patterns) {
        DataBlock b;
        b.kind = DataBlock::Kind::MissingPattern;
        b.group = g;
        b.n = static_cast<int>(prow.size());
        b.observed = obs;
        const int po = static_cast<int>(obs.size());
        Eigen::MatrixXd Y(b.n, po);
        for (int r = 0; r < b.n; ++r)
          for (int j = 0; j < po; ++j) Y(r, j) = ds.values(prow[r], col_of[obs[j]]);
        b.ybar = Y.colwise().mean();
        Eigen::MatrixXd C = Y.rowwise() - b.ybar.transpose();
        b.S = C.transpose() * C / static_cast<double>(b.n);
        bs.n_total += b.n;
        bs.blocks.push_back(std::move(b));
      }
    } else {
      throw std::runtime_error("unknown missing mode: " + missing);
    }
  }
  if (bs.n_dropped > 0)
    bs.warnings.push_back(std::to_string(bs.n_dropped) + " rows dropped (" + missing + ")");
  return bs;
}

// Build per-cluster blocks for a two-level model.
inline BlockSet make_cluster_blocks(const Dataset& ds, const ParameterTable& pt) {
  if (pt.nlevels != 2) throw std::runtime_error("make_cluster_blocks requires a two-level model");
  if (ds.cluster.empty()) throw std::runtime_error("two-level model requires a cluster column");
  const auto& ov1 = pt.ov[0];
  const auto& ov2 = pt.ov[1];
  const int p1 = static_cast<int>(ov1.size());
  // between-only variables: in ov2 but not ov1
  std::vector<int> bonly;  // indices into ov2
  for (int j = 0; j < static_cast<int>(ov2.size()); ++j)
    if (std::find(ov1.begin(), ov1.end(), ov2[j]) == ov1.end()) bonly.push_back(j);

  auto col_of = [&](const std::string& name) {
    const auto it = std::find(ds.columns.begin(), ds.columns.end(), name);
    if (it == ds.columns.end()) throw std::runtime_error("model variable not in data: " + name);
    return static_cast<int>(it - ds.columns.begin());
  };
  std::vector<int> col1(p1);
  for (int j = 0; j < p1; ++j) col1[j] = col_of(ov1[j]);
  std::vector<int> colb(bonly.size());
  for (std::size_t j = 0; j < bonly.size(); ++j) colb[j] = col_of(ov2[bonly[j]]);

  std::map<int, std::vector<int>> by_cluster;
  for (int i = 0; i < ds.nrows(); ++i) by_cluster[ds.cluster[i]].push_back(i);

  BlockSet bs;
  for (const auto& [cid, rows] : by_cluster) {
    DataBlock b;
    b.kind = DataBlock::Kind::Cluster;
    b.n = static_cast<int>(rows.size());
    b.within_obs.resize(p1);
    for (int j = 0; j < p1; ++j) b.within_obs[j] = j;
    b.between_obs = bonly;

    b.raw.resize(b.n, p1);
    for (int r = 0; r < b.n; ++r)
      for (int j = 0; j < p1; ++j) b.raw(r, j) = ds.values(rows[r], col1[j]);
    b.raw_b.resize(bonly.size());
    for (std::size_t j = 0; j < bonly.size(); ++j) {
      // between-only variables must be constant within cluster; take the first
      // non-missing value and validate
      double v = std::numeric_limits<double>::quiet_NaN();
      for (int r : rows) {
        const double c = ds.values(r, colb[j]);
        if (std::isnan(c)) continue;
        if (std::isnan(v))
          v = c;
        else if (c != v)
          throw std::runtime_error("between-level variable " + ov2[bonly[j]] + " varies within a cluster");
      }
      b.raw_b[j] = v;
    }
    b.has_missing = b.raw.hasNaN() || b.raw_b.hasNaN();
    if (!b.has_missing) {
      b.ybar_w = b.raw.colwise().mean();
      Eigen::MatrixXd C = b.raw.rowwise() - b.ybar_w.transpose();
      b.SW = C.transpose() * C;  // sum of squares, not divided
      b.y_b = b.raw_b;
    }
    bs.n_total += b.n;
    bs.blocks.push_back(std::move(b));
  }
  return bs;
}

}  // namespace bsem
