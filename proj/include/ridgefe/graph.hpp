#pragma once

#include <Eigen/SparseCore>
#include <cstdint>
#include <span>
#include <vector>

#include "ridgefe/linops.hpp"

namespace ridgefe {

using SpMat = Eigen::SparseMatrix<double>;

struct Edge {
  Index worker = 0;
  Index firm = 0;
  double count = 1.0;
};

struct RidgePenalties {
  double worker = 0.0;
  double firm = 0.0;

  void validate() const;
  bool strictly_positive() const { return worker > 0.0 && firm > 0.0; }
};

/// Worker-firm match network. The weighted adjacency B = (d_ij) is stored
/// column-major, i.e. a coordinate list sorted by (firm, worker) with a
/// compressed index over firms; the solver's hot loops are B'x products and
/// the p x p firm-side Schur system.
class BipartiteGraph {
 public:
  BipartiteGraph() = default;
  static BipartiteGraph from_edges(Index n_workers, Index n_firms, std::span<const Edge> edges);

  Index n_workers() const { return b_.rows(); }
  Index n_firms() const { return b_.cols(); }
  std::int64_t n_obs() const { return n_obs_; }

  const SpMat& adjacency() const { return b_; }
  const Vec& worker_degrees() const { return worker_degrees_; }
  const Vec& firm_degrees() const { return firm_degrees_; }

  Index zero_degree_workers() const { return zero_degree_workers_; }
  Index zero_degree_firms() const { return zero_degree_firms_; }
  bool empty() const { return n_workers() == 0 && n_firms() == 0; }

  std::vector<Edge> edges() const;

 private:
  SpMat b_;
  Vec worker_degrees_;
  Vec firm_degrees_;
  std::int64_t n_obs_ = 0;
  Index zero_degree_workers_ = 0;
  Index zero_degree_firms_ = 0;
};

BipartiteGraph build_graph(Index n_workers, Index n_firms, std::span<const Edge> edges);

struct ComponentLabeling {
  Eigen::VectorXi worker_component;
  Eigen::VectorXi firm_component;
  struct Size {
    Index workers = 0;
    Index firms = 0;
    std::int64_t observations = 0;
  };
  std::vector<Size> sizes;

  Index count() const { return static_cast<Index>(sizes.size()); }
  /// Components carrying at least one edge; isolated nodes form singleton
  /// components that the summary statistics exclude.
  Index count_with_edges() const;
};

ComponentLabeling connected_components(const BipartiteGraph& g);

/// A component subgraph with its node relabeling (new index -> old index).
struct Subgraph {
  BipartiteGraph graph;
  std::vector<Index> worker_ids;
  std::vector<Index> firm_ids;
};

/// Subgraph with the largest observation count; ties go to more workers,
/// then to the lowest original worker index.
Subgraph largest_component(const BipartiteGraph& g);

/// E_lambda = D_w,lambda^{-1/2} B D_f,lambda^{-1/2} as a sparse operator.
LinearOperator normalized_adjacency(const BipartiteGraph& g, const RidgePenalties& lambda);

struct LaplacianOps {
  LinearOperator l_w;        // I_n - E E'
  LinearOperator l_f;        // I_p - E'E
  LinearOperator lt_w;       // D_w,lambda - B D_f,lambda^{-1} B'
  LinearOperator lt_f;       // D_f,lambda - B' D_w,lambda^{-1} B
};

LaplacianOps regularized_laplacians(const BipartiteGraph& g, const RidgePenalties& lambda);

/// Normalized one-mode projections A_w = E E' and A_f = E'E.
LinearOperator normalized_projection_workers(const BipartiteGraph& g, const RidgePenalties& lambda);
LinearOperator normalized_projection_firms(const BipartiteGraph& g, const RidgePenalties& lambda);

/// Materialized firm-side Schur complement D_f,lambda - B' D_w,lambda^{-1} B
/// for sparse factorization.
SpMat firm_schur_matrix(const BipartiteGraph& g, const RidgePenalties& lambda);

/// Diagonal of the firm-side Schur complement (Jacobi preconditioner).
Vec firm_schur_diagonal(const BipartiteGraph& g, const RidgePenalties& lambda);

struct GraphSummary {
  Index n = 0;
  Index p = 0;
  std::int64_t n_obs = 0;
  Index n_components = 0;  // components with at least one edge
  double sparsity = 0.0;   // N / (n p)
  double avg_worker_degree = 0.0;
  double avg_firm_degree = 0.0;
};

GraphSummary summarize(const BipartiteGraph& g);

}  // namespace ridgefe
