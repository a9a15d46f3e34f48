#pragma once

#include <vector>

#include "ridgefe/graph.hpp"
#include "ridgefe/rng.hpp"

namespace ridgefe::testing {

/// Random connected-ish bipartite graph for oracle comparisons: each worker
/// gets 1..max_per_worker distinct firms, multiplicities 1..max_mult.
inline BipartiteGraph random_graph(Index n, Index p, std::uint64_t seed, int max_per_worker = 3,
                                   int max_mult = 3) {
  RngStream s(stream_key(seed, "test_graph"));
  std::vector<Edge> edges;
  for (Index i = 0; i < n; ++i) {
    const int k = 1 + static_cast<int>(s.next_u64() % max_per_worker);
    for (int e = 0; e < k; ++e) {
      const auto j = static_cast<Index>(s.next_u64() % p);
      const double d = 1.0 + static_cast<double>(s.next_u64() % max_mult);
      edges.push_back({i, j, d});
    }
  }
  // ensure every firm has positive degree
  for (Index j = 0; j < p; ++j) edges.push_back({static_cast<Index>(s.next_u64() % n), j, 1.0});
  return build_graph(n, p, edges);
}

inline Mat dense_adjacency(const BipartiteGraph& g) { return Mat(g.adjacency()); }

}  // namespace ridgefe::testing
