#include "ridgefe/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace ridgefe {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

class Interner {
 public:
  Index intern(const std::string& name) {
    auto [it, inserted] = map_.emplace(name, static_cast<Index>(names_.size()));
    if (inserted) names_.push_back(name);
    return it->second;
  }
  std::vector<std::string> take() { return std::move(names_); }

 private:
  std::unordered_map<std::string, Index> map_;
  std::vector<std::string> names_;
};

double parse_double(const std::string& s, const std::string& path) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path + ": cannot parse number '" + s + "'");
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

bool skip_line(const std::string& line) { return line.empty() || line[0] == '#'; }

}  // namespace

EdgeData read_edge_csv(const std::string& path) {
  std::ifstream in = open_input(path);
  EdgeData data;
  Interner workers, firms;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (skip_line(line)) continue;
    if (!header_seen) {
      header_seen = true;  // worker_id,firm_id,multiplicity
      continue;
    }
    auto f = split_csv_line(line);
    if (f.size() != 3) throw std::runtime_error(path + ": expected 3 columns, got " + line);
    data.edges.push_back(
        {workers.intern(f[0]), firms.intern(f[1]), parse_double(f[2], path)});
  }
  data.worker_names = workers.take();
  data.firm_names = firms.take();
  return data;
}

PanelData read_panel_csv(const std::string& path) {
  std::ifstream in = open_input(path);
  PanelData data;
  Interner workers, firms;
  std::string line;
  bool header_seen = false;
  std::unordered_map<std::int64_t, Index> pair_to_edge;
  while (std::getline(in, line)) {
    if (skip_line(line)) continue;
    if (!header_seen) {
      header_seen = true;  // worker_id,firm_id,y
      continue;
    }
    auto f = split_csv_line(line);
    if (f.size() != 3) throw std::runtime_error(path + ": expected 3 columns, got " + line);
    const Index w = workers.intern(f[0]);
    const Index fm = firms.intern(f[1]);
    data.obs_worker.push_back(w);
    data.obs_firm.push_back(fm);
    data.y.push_back(parse_double(f[2], path));
  }
  data.edges.worker_names = workers.take();
  data.edges.firm_names = firms.take();
  const auto p = static_cast<std::int64_t>(data.edges.firm_names.size());
  for (std::size_t k = 0; k < data.y.size(); ++k) {
    const std::int64_t key = data.obs_worker[k] * p + data.obs_firm[k];
    auto [it, inserted] = pair_to_edge.emplace(key, static_cast<Index>(data.edges.edges.size()));
    if (inserted)
      data.edges.edges.push_back({data.obs_worker[k], data.obs_firm[k], 1.0});
    else
      data.edges.edges[it->second].count += 1.0;
  }
  return data;
}

std::string config_hash(const std::string& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void write_edge_csv(const std::string& path, const BipartiteGraph& g,
                    const std::vector<std::string>& worker_names,
                    const std::vector<std::string>& firm_names, const std::string& hash) {
  std::ofstream out = open_output(path);
  out << "# config_hash=" << hash << "\n";
  out << "worker_id,firm_id,multiplicity\n";
  auto name = [](const std::vector<std::string>& names, Index i) {
    return i < static_cast<Index>(names.size()) ? names[i] : std::to_string(i);
  };
  for (const Edge& e : g.edges())
    out << name(worker_names, e.worker) << ',' << name(firm_names, e.firm) << ','
        << static_cast<std::int64_t>(e.count) << "\n";
}

void write_mapping_csv(const std::string& path, const std::vector<std::string>& names,
                       const std::string& hash) {
  std::ofstream out = open_output(path);
  out << "# config_hash=" << hash << "\n";
  out << "id,index\n";
  for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << ',' << i << "\n";
}

void write_fit_csv(const std::string& path, const RidgeFit& fit,
                   const std::vector<std::string>& worker_names,
                   const std::vector<std::string>& firm_names, const std::string& hash) {
  std::ofstream out = open_output(path);
  out << "# config_hash=" << hash << "\n";
  out << "node_kind,node_id,effect_estimate\n";
  auto name = [](const std::vector<std::string>& names, Index i) {
    return i < static_cast<Index>(names.size()) ? names[i] : std::to_string(i);
  };
  for (Index i = 0; i < fit.mu.size(); ++i)
    out << "worker," << name(worker_names, i) << ',' << format_double(fit.mu[i]) << "\n";
  for (Index j = 0; j < fit.phi.size(); ++j)
    out << "firm," << name(firm_names, j) << ',' << format_double(fit.phi[j]) << "\n";
}

void write_table_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows, const std::string& hash) {
  std::ofstream out = open_output(path);
  out << "# config_hash=" << hash << "\n";
  for (std::size_t c = 0; c < header.size(); ++c) out << header[c] << (c + 1 < header.size() ? "," : "");
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << row[c] << (c + 1 < row.size() ? "," : "");
    out << "\n";
  }
}

}  // namespace ridgefe
