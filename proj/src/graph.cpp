#include "ridgefe/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace ridgefe {

void RidgePenalties::validate() const {
  if (!std::isfinite(worker) || !std::isfinite(firm) || worker < 0.0 || firm < 0.0)
    throw std::invalid_argument("ridge penalties must be finite and nonnegative");
}

BipartiteGraph BipartiteGraph::from_edges(Index n_workers, Index n_firms,
                                          std::span<const Edge> edges) {
  BipartiteGraph g;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(edges.size());
  for (const Edge& e : edges) {
    if (e.worker < 0 || e.worker >= n_workers || e.firm < 0 || e.firm >= n_firms)
      throw std::invalid_argument("edge index out of range");
    if (e.count < 0.0) throw std::invalid_argument("negative edge multiplicity");
    if (e.count == 0.0) continue;
    if (std::abs(e.count - std::round(e.count)) > 1e-9)
      throw std::invalid_argument("edge multiplicity must be an integer count");
    trip.emplace_back(e.worker, e.firm, e.count);
  }
  g.b_.resize(n_workers, n_firms);
  g.b_.setFromTriplets(trip.begin(), trip.end());  // duplicates are summed
  g.b_.makeCompressed();
  g.worker_degrees_ = g.b_ * Vec::Ones(n_firms);
  g.firm_degrees_ = g.b_.transpose() * Vec::Ones(n_workers);
  if (n_firms == 0) g.worker_degrees_ = Vec::Zero(n_workers);
  if (n_workers == 0) g.firm_degrees_ = Vec::Zero(n_firms);
  g.n_obs_ = std::llround(g.worker_degrees_.sum());
  g.zero_degree_workers_ = (g.worker_degrees_.array() == 0.0).count();
  g.zero_degree_firms_ = (g.firm_degrees_.array() == 0.0).count();
  return g;
}

BipartiteGraph build_graph(Index n_workers, Index n_firms, std::span<const Edge> edges) {
  return BipartiteGraph::from_edges(n_workers, n_firms, edges);
}

std::vector<Edge> BipartiteGraph::edges() const {
  std::vector<Edge> out;
  out.reserve(b_.nonZeros());
  for (Index j = 0; j < b_.outerSize(); ++j)
    for (SpMat::InnerIterator it(b_, j); it; ++it)
      out.push_back({it.row(), it.col(), it.value()});
  return out;
}

namespace {

// Union-find with path halving and union by size.
class DisjointSet {
 public:
  explicit DisjointSet(Index n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), Index{0});
  }
  Index find(Index v) {
    while (parent_[v] != v) {
      parent_[v] = parent_[parent_[v]];
      v = parent_[v];
    }
    return v;
  }
  void unite(Index a, Index b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
  }

 private:
  std::vector<Index> parent_;
  std::vector<Index> size_;
};

}  // namespace

ComponentLabeling connected_components(const BipartiteGraph& g) {
  const Index n = g.n_workers();
  const Index p = g.n_firms();
  DisjointSet ds(n + p);
  const SpMat& b = g.adjacency();
  for (Index j = 0; j < b.outerSize(); ++j)
    for (SpMat::InnerIterator it(b, j); it; ++it) ds.unite(it.row(), n + it.col());

  ComponentLabeling lab;
  lab.worker_component.resize(n);
  lab.firm_component.resize(p);
  std::vector<Index> root_label(n + p, -1);
  Index next = 0;
  auto label_of = [&](Index node) {
    const Index r = ds.find(node);
    if (root_label[r] < 0) {
      root_label[r] = next++;
      lab.sizes.emplace_back();
    }
    return root_label[r];
  };
  for (Index i = 0; i < n; ++i) {
    const Index c = label_of(i);
    lab.worker_component[i] = static_cast<int>(c);
    ++lab.sizes[c].workers;
  }
  for (Index j = 0; j < p; ++j) {
    const Index c = label_of(n + j);
    lab.firm_component[j] = static_cast<int>(c);
    ++lab.sizes[c].firms;
  }
  for (Index j = 0; j < b.outerSize(); ++j)
    for (SpMat::InnerIterator it(b, j); it; ++it)
      lab.sizes[lab.firm_component[j]].observations += std::llround(it.value());
  return lab;
}

Index ComponentLabeling::count_with_edges() const {
  return std::count_if(sizes.begin(), sizes.end(),
                       [](const Size& s) { return s.observations > 0; });
}

Subgraph largest_component(const BipartiteGraph& g) {
  if (g.empty()) throw std::invalid_argument("largest_component: empty graph");
  const ComponentLabeling lab = connected_components(g);

  Index best = 0;
  for (Index c = 1; c < lab.count(); ++c) {
    const auto& a = lab.sizes[c];
    const auto& b = lab.sizes[best];
    if (a.observations != b.observations) {
      if (a.observations > b.observations) best = c;
    } else if (a.workers != b.workers) {
      if (a.workers > b.workers) best = c;
    }
    // remaining tie: keep the lower label, which is the lower first
    // worker index by construction
  }

  Subgraph sub;
  const Index n = g.n_workers();
  const Index p = g.n_firms();
  std::vector<Index> wmap(n, -1), fmap(p, -1);
  for (Index i = 0; i < n; ++i)
    if (lab.worker_component[i] == best) {
      wmap[i] = static_cast<Index>(sub.worker_ids.size());
      sub.worker_ids.push_back(i);
    }
  for (Index j = 0; j < p; ++j)
    if (lab.firm_component[j] == best) {
      fmap[j] = static_cast<Index>(sub.firm_ids.size());
      sub.firm_ids.push_back(j);
    }
  std::vector<Edge> edges;
  const SpMat& b = g.adjacency();
  for (Index j = 0; j < b.outerSize(); ++j)
    for (SpMat::InnerIterator it(b, j); it; ++it)
      if (fmap[it.col()] >= 0 && wmap[it.row()] >= 0)
        edges.push_back({wmap[it.row()], fmap[it.col()], it.value()});
  sub.graph = BipartiteGraph::from_edges(static_cast<Index>(sub.worker_ids.size()),
                                         static_cast<Index>(sub.firm_ids.size()), edges);
  return sub;
}

namespace {

Vec shifted_degrees(const Vec& deg, double lambda, const char* side) {
  if (lambda == 0.0 && (deg.array() == 0.0).any())
    throw std::invalid_argument(std::string("zero unregularized ") + side +
                                " degree: division by zero");
  return deg.array() + lambda;
}

}  // namespace

LinearOperator normalized_adjacency(const BipartiteGraph& g, const RidgePenalties& lambda) {
  lambda.validate();
  auto b = std::make_shared<const SpMat>(g.adjacency());
  Vec sw = shifted_degrees(g.worker_degrees(), lambda.worker, "worker").cwiseSqrt().cwiseInverse();
  Vec sf = shifted_degrees(g.firm_degrees(), lambda.firm, "firm").cwiseSqrt().cwiseInverse();
  LinearOperator op;
  op.rows = g.n_workers();
  op.cols = g.n_firms();
  op.apply = [b, sw, sf](const Vec& x) {
    return (sw.array() * (*b * (sf.asDiagonal() * x)).array()).matrix().eval();
  };
  op.apply_t = [b, sw, sf](const Vec& x) {
    return (sf.array() * (b->transpose() * (sw.asDiagonal() * x)).array()).matrix().eval();
  };
  return op;
}

LinearOperator normalized_projection_firms(const BipartiteGraph& g, const RidgePenalties& lambda) {
  LinearOperator e = normalized_adjacency(g, lambda);
  return symmetric_operator(g.n_firms(),
                            [e](const Vec& x) { return e.apply_t(e.apply(x)); });
}

LinearOperator normalized_projection_workers(const BipartiteGraph& g, const RidgePenalties& lambda) {
  LinearOperator e = normalized_adjacency(g, lambda);
  return symmetric_operator(g.n_workers(),
                            [e](const Vec& x) { return e.apply(e.apply_t(x)); });
}

LaplacianOps regularized_laplacians(const BipartiteGraph& g, const RidgePenalties& lambda) {
  lambda.validate();
  LinearOperator e = normalized_adjacency(g, lambda);
  auto b = std::make_shared<const SpMat>(g.adjacency());
  Vec dw = shifted_degrees(g.worker_degrees(), lambda.worker, "worker");
  Vec df = shifted_degrees(g.firm_degrees(), lambda.firm, "firm");

  LaplacianOps ops;
  ops.l_w = symmetric_operator(g.n_workers(),
                               [e](const Vec& x) { return (x - e.apply(e.apply_t(x))).eval(); });
  ops.l_f = symmetric_operator(g.n_firms(),
                               [e](const Vec& x) { return (x - e.apply_t(e.apply(x))).eval(); });
  ops.lt_w = symmetric_operator(g.n_workers(), [b, dw, df](const Vec& x) {
    return (dw.cwiseProduct(x) - *b * ((b->transpose() * x).cwiseQuotient(df))).eval();
  });
  ops.lt_f = symmetric_operator(g.n_firms(), [b, dw, df](const Vec& x) {
    return (df.cwiseProduct(x) - b->transpose() * ((*b * x).cwiseQuotient(dw))).eval();
  });
  return ops;
}

SpMat firm_schur_matrix(const BipartiteGraph& g, const RidgePenalties& lambda) {
  lambda.validate();
  const SpMat& b = g.adjacency();
  Vec dw_inv = shifted_degrees(g.worker_degrees(), lambda.worker, "worker").cwiseInverse();
  SpMat scaled = dw_inv.asDiagonal() * b;
  SpMat proj = SpMat(b.transpose()) * scaled;
  Vec df = shifted_degrees(g.firm_degrees(), lambda.firm, "firm");
  SpMat diag(g.n_firms(), g.n_firms());
  diag.reserve(Eigen::VectorXi::Constant(g.n_firms(), 1));
  for (Index j = 0; j < g.n_firms(); ++j) diag.insert(j, j) = df[j];
  diag.makeCompressed();
  SpMat schur = diag - proj;
  schur.makeCompressed();
  return schur;
}

Vec firm_schur_diagonal(const BipartiteGraph& g, const RidgePenalties& lambda) {
  const SpMat& b = g.adjacency();
  Vec dw = shifted_degrees(g.worker_degrees(), lambda.worker, "worker");
  Vec diag = shifted_degrees(g.firm_degrees(), lambda.firm, "firm");
  for (Index j = 0; j < b.outerSize(); ++j)
    for (SpMat::InnerIterator it(b, j); it; ++it)
      diag[j] -= it.value() * it.value() / dw[it.row()];
  return diag;
}

GraphSummary summarize(const BipartiteGraph& g) {
  GraphSummary s;
  s.n = g.n_workers();
  s.p = g.n_firms();
  s.n_obs = g.n_obs();
  s.n_components = connected_components(g).count_with_edges();
  const double np = static_cast<double>(s.n) * static_cast<double>(s.p);
  s.sparsity = np > 0 ? static_cast<double>(s.n_obs) / np : 0.0;
  s.avg_worker_degree = s.n > 0 ? static_cast<double>(s.n_obs) / s.n : 0.0;
  s.avg_firm_degree = s.p > 0 ? static_cast<double>(s.n_obs) / s.p : 0.0;
  return s;
}

}  // namespace ridgefe
