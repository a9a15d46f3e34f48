#pragma once

#include <string>
#include <vector>

#include "ridgefe/estimator.hpp"
#include "ridgefe/graph.hpp"

namespace ridgefe {

/// Edge list with string node ids interned to dense indices in first-seen order.
struct EdgeData {
  std::vector<Edge> edges;
  std::vector<std::string> worker_names;
  std::vector<std::string> firm_names;
};

/// CSV with header worker_id,firm_id,multiplicity; `#` lines are skipped.
EdgeData read_edge_csv(const std::string& path);

/// CSV with header worker_id,firm_id,y (one row per observation).
struct PanelData {
  EdgeData edges;        // multiplicities are per-pair observation counts
  std::vector<double> y; // aligned with the row order of the file
  std::vector<Index> obs_worker, obs_firm;
};
PanelData read_panel_csv(const std::string& path);

std::string config_hash(const std::string& canonical);

void write_edge_csv(const std::string& path, const BipartiteGraph& g,
                    const std::vector<std::string>& worker_names,
                    const std::vector<std::string>& firm_names, const std::string& hash);
/// Two-column id,index mapping file.
void write_mapping_csv(const std::string& path, const std::vector<std::string>& names,
                       const std::string& hash);
void write_fit_csv(const std::string& path, const RidgeFit& fit,
                   const std::vector<std::string>& worker_names,
                   const std::vector<std::string>& firm_names, const std::string& hash);

/// Generic comma-separated table with a config-hash comment line.
void write_table_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows, const std::string& hash);

std::string format_double(double v);

}  // namespace ridgefe
