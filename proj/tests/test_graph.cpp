#include "ridgefe/graph.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

#include "doctest.h"
#include "test_util.hpp"

using namespace ridgefe;
using ridgefe::testing::random_graph;

TEST_CASE("build_graph sums multiplicities and computes degrees") {
  std::vector<Edge> edges{{0, 0, 1}, {0, 1, 1}, {1, 1, 2}};
  BipartiteGraph g = build_graph(2, 2, edges);
  CHECK(g.n_workers() == 2);
  CHECK(g.n_firms() == 2);
  CHECK(g.n_obs() == 4);
  CHECK(g.firm_degrees()[1] == doctest::Approx(3.0));
  CHECK(g.worker_degrees()[0] == doctest::Approx(2.0));

  // duplicates are summed
  std::vector<Edge> dup{{0, 0, 1}, {0, 0, 2}};
  BipartiteGraph g2 = build_graph(1, 1, dup);
  CHECK(g2.n_obs() == 3);
  CHECK(g2.adjacency().coeff(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("build_graph empty and error cases") {
  BipartiteGraph g = build_graph(0, 0, {});
  CHECK(g.n_obs() == 0);
  CHECK(g.empty());

  std::vector<Edge> neg{{0, 0, -1}};
  CHECK_THROWS_AS((void)build_graph(1, 1, neg), std::invalid_argument);
  std::vector<Edge> oob{{0, 5, 1}};
  CHECK_THROWS_AS((void)build_graph(1, 2, oob), std::invalid_argument);

  // zero-degree nodes retained but flagged
  std::vector<Edge> e{{0, 0, 1}};
  BipartiteGraph g3 = build_graph(3, 2, e);
  CHECK(g3.zero_degree_workers() == 2);
  CHECK(g3.zero_degree_firms() == 1);
}

TEST_CASE("degree invariants recomputed from edges") {
  BipartiteGraph g = random_graph(20, 8, 7);
  Vec dw = Vec::Zero(g.n_workers()), df = Vec::Zero(g.n_firms());
  double total = 0;
  for (const Edge& e : g.edges()) {
    dw[e.worker] += e.count;
    df[e.firm] += e.count;
    total += e.count;
    CHECK(e.count >= 1.0);
  }
  CHECK((dw - g.worker_degrees()).norm() == 0.0);
  CHECK((df - g.firm_degrees()).norm() == 0.0);
  CHECK(total == doctest::Approx(static_cast<double>(g.n_obs())));
}

TEST_CASE("connected components on small graphs") {
  std::vector<Edge> disjoint{{0, 0, 1}, {1, 1, 1}};
  CHECK(connected_components(build_graph(2, 2, disjoint)).count() == 2);

  std::vector<Edge> path{{0, 0, 1}, {1, 0, 1}};
  CHECK(connected_components(build_graph(2, 1, path)).count() == 1);

  // isolated nodes are singleton components excluded from the edge count
  std::vector<Edge> iso{{0, 0, 1}};
  ComponentLabeling lab = connected_components(build_graph(2, 1, iso));
  CHECK(lab.count() == 2);
  CHECK(lab.count_with_edges() == 1);
}

TEST_CASE("largest_component picks max observations with documented tie-breaks") {
  // component A: worker0-firm0 with 5 obs; component B: workers 1,2 - firm1 with 3
  std::vector<Edge> edges{{0, 0, 5}, {1, 1, 2}, {2, 1, 1}};
  Subgraph sub = largest_component(build_graph(3, 2, edges));
  CHECK(sub.graph.n_obs() == 5);
  CHECK(sub.worker_ids == std::vector<Index>{0});

  // tie in N: more workers wins
  std::vector<Edge> tie{{0, 0, 3}, {1, 1, 2}, {2, 1, 1}};
  Subgraph sub2 = largest_component(build_graph(3, 2, tie));
  CHECK(sub2.graph.n_workers() == 2);
  CHECK(sub2.worker_ids == std::vector<Index>{1, 2});

  // full tie: lowest original worker index
  std::vector<Edge> tie2{{0, 0, 2}, {1, 1, 2}};
  Subgraph sub3 = largest_component(build_graph(2, 2, tie2));
  CHECK(sub3.worker_ids == std::vector<Index>{0});
}

TEST_CASE("largest_component is idempotent") {
  for (std::uint64_t seed : {1, 2, 3}) {
    BipartiteGraph g = random_graph(30, 12, seed, 2, 2);
    Subgraph once = largest_component(g);
    Subgraph twice = largest_component(once.graph);
    CHECK(twice.graph.n_workers() == once.graph.n_workers());
    CHECK(twice.graph.n_firms() == once.graph.n_firms());
    CHECK(twice.graph.n_obs() == once.graph.n_obs());
  }
}

TEST_CASE("normalized adjacency entries") {
  std::vector<Edge> one{{0, 0, 1}};
  BipartiteGraph g = build_graph(1, 1, one);
  CHECK(densify(normalized_adjacency(g, {0, 0}))(0, 0) == doctest::Approx(1.0));
  CHECK(densify(normalized_adjacency(g, {1, 1}))(0, 0) == doctest::Approx(0.5));

  BipartiteGraph r = random_graph(5, 4, 11);
  RidgePenalties lam{0.7, 1.3};
  Mat e = densify(normalized_adjacency(r, lam));
  Mat b = ridgefe::testing::dense_adjacency(r);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 4; ++j) {
      const double expect = b(i, j) / std::sqrt((r.worker_degrees()[i] + lam.worker) *
                                                (r.firm_degrees()[j] + lam.firm));
      CHECK(std::abs(e(i, j) - expect) < 1e-14);
    }
}

TEST_CASE("normalized adjacency rejects zero degrees without penalty") {
  std::vector<Edge> e{{0, 0, 1}};
  BipartiteGraph g = build_graph(2, 1, e);  // worker 1 has zero degree
  CHECK_THROWS_AS((void)normalized_adjacency(g, {0, 1}), std::invalid_argument);
  CHECK_NOTHROW((void)normalized_adjacency(g, {1, 0}));
}

TEST_CASE("regularized laplacians on a single match") {
  std::vector<Edge> one{{0, 0, 1}};
  BipartiteGraph g = build_graph(1, 1, one);
  LaplacianOps ops = regularized_laplacians(g, {1, 1});
  CHECK(densify(ops.l_f)(0, 0) == doctest::Approx(0.75));
  CHECK(densify(ops.lt_f)(0, 0) == doctest::Approx(1.5));
}

TEST_CASE("unnormalized laplacian equals both algebraic routes") {
  for (std::uint64_t seed : {3, 4, 5}) {
    BipartiteGraph g = random_graph(40, 15, seed);
    RidgePenalties lam{0.9, 2.1};
    Mat schur = Mat(firm_schur_matrix(g, lam));
    LaplacianOps ops = regularized_laplacians(g, lam);
    Mat via_op = densify(ops.lt_f);
    CHECK((schur - via_op).cwiseAbs().maxCoeff() < 1e-12);

    Vec df_sqrt = (g.firm_degrees().array() + lam.firm).sqrt();
    Mat sandwich = df_sqrt.asDiagonal() * densify(ops.l_f) * df_sqrt.asDiagonal();
    CHECK((schur - sandwich).cwiseAbs().maxCoeff() < 1e-12);

    CHECK((firm_schur_diagonal(g, lam) - schur.diagonal()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("eigenvalues of the normalized projection lie in [0,1]") {
  for (std::uint64_t seed : {1, 2, 3, 4, 5, 6}) {
    BipartiteGraph g = random_graph(25, 10, seed);
    Vec eigs = dense_spectrum(normalized_projection_firms(g, {0, 0}));
    CHECK(eigs.minCoeff() > -1e-10);
    CHECK(eigs.maxCoeff() < 1.0 + 1e-10);
    // largest eigenvalue is exactly 1 with eigenvector sqrt(firm degrees)
    Vec v = g.firm_degrees().cwiseSqrt();
    LinearOperator af = normalized_projection_firms(g, {0, 0});
    CHECK((af.apply(v) - v).norm() < 1e-10 * v.norm());
    // equivalently the Laplacian annihilates it
    LaplacianOps ops = regularized_laplacians(g, {0, 0});
    CHECK(ops.l_f.apply(v).norm() < 1e-10 * v.norm());
  }
}

TEST_CASE("zero-eigenvalue multiplicity counts the components") {
  RngStream s(stream_key(99, "multi"));
  for (int rep = 0; rep < 12; ++rep) {
    const int k = 2 + static_cast<int>(s.next_u64() % 5);  // 2..6 components
    std::vector<Edge> edges;
    Index wofs = 0, fofs = 0;
    for (int c = 0; c < k; ++c) {
      const Index nw = 1 + static_cast<Index>(s.next_u64() % 3);
      const Index nf = 1 + static_cast<Index>(s.next_u64() % 2);
      // star through worker 0 keeps the block connected; extras add texture
      for (Index j = 0; j < nf; ++j) edges.push_back({wofs, fofs + j, 1.0});
      for (Index i = 1; i < nw; ++i)
        edges.push_back({wofs + i, fofs + static_cast<Index>(s.next_u64() % nf), 1.0});
      edges.push_back({wofs + static_cast<Index>(s.next_u64() % nw),
                       fofs + static_cast<Index>(s.next_u64() % nf), 1.0});
      wofs += nw;
      fofs += nf;
    }
    BipartiteGraph g = build_graph(wofs, fofs, edges);
    const Index comp = connected_components(g).count_with_edges();
    CHECK(comp == k);
    Vec eigs = dense_spectrum(regularized_laplacians(g, {0, 0}).l_f);
    const Index zero_mult = (eigs.array() < 1e-8).count();
    CHECK(zero_mult == comp);
  }
}

TEST_CASE("lemma 3 eigenvalue floors") {
  RngStream s(stream_key(5, "floors"));
  for (int rep = 0; rep < 10; ++rep) {
    BipartiteGraph g = random_graph(20, 8, 100 + rep);
    RidgePenalties lam{0.1 + 3.0 * s.next_double(), 0.1 + 3.0 * s.next_double()};
    Vec ef = dense_spectrum(regularized_laplacians(g, lam).l_f);
    Vec ew = dense_spectrum(regularized_laplacians(g, lam).l_w);
    const double floor_f = lam.firm / (g.firm_degrees().maxCoeff() + lam.firm);
    const double floor_w = lam.worker / (g.worker_degrees().maxCoeff() + lam.worker);
    CHECK(ef.minCoeff() >= floor_f - 1e-12);
    CHECK(ew.minCoeff() >= floor_w - 1e-12);
  }
}

TEST_CASE("dense_spectrum basics and cap") {
  LinearOperator id = symmetric_operator(3, [](const Vec& x) { return x; });
  Vec eigs = dense_spectrum(id);
  CHECK(eigs.size() == 3);
  CHECK(eigs.minCoeff() == doctest::Approx(1.0));
  CHECK(eigs.maxCoeff() == doctest::Approx(1.0));

  LinearOperator big = symmetric_operator(3, [](const Vec& x) { return x; });
  big.rows = big.cols = 5000;
  CHECK_THROWS_AS((void)dense_spectrum(big), std::invalid_argument);
}

TEST_CASE("operator_norm against diagonal and dense SVD oracle") {
  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = -4.0;
  LinearOperator op;
  op.rows = op.cols = 2;
  op.apply = [d](const Vec& x) { return (d * x).eval(); };
  op.apply_t = op.apply;
  NormResult r = operator_norm(op);
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(4.0));

  RngStream s(stream_key(17, "svd"));
  Mat m(30, 20);
  for (Index i = 0; i < 30; ++i)
    for (Index j = 0; j < 20; ++j) m(i, j) = s.next_u64() % 7 == 0 ? s.next_normal() : 0.0;
  LinearOperator mop;
  mop.rows = 30;
  mop.cols = 20;
  mop.apply = [m](const Vec& x) { return (m * x).eval(); };
  mop.apply_t = [m](const Vec& x) { return (m.transpose() * x).eval(); };
  const double oracle = Eigen::JacobiSVD<Mat>(m).singularValues()[0];
  CHECK(std::abs(operator_norm(mop, 1e-10, 20000).value - oracle) < 1e-6);
}

TEST_CASE("E_lambda spectral norm respects the lemma bound") {
  for (std::uint64_t seed : {21, 22, 23}) {
    BipartiteGraph g = random_graph(25, 9, seed);
    RidgePenalties lam{0.0, 1.7};
    const double nrm = operator_norm(normalized_adjacency(g, lam), 1e-10, 20000).value;
    const double cap = std::sqrt(g.firm_degrees().maxCoeff() /
                                 (g.firm_degrees().maxCoeff() + lam.firm));
    CHECK(nrm <= cap + 1e-8);
    CHECK(nrm < 1.0);
  }
}

TEST_CASE("graph summary matches definitions") {
  std::vector<Edge> edges{{0, 0, 1}, {0, 1, 1}, {1, 1, 2}, {2, 2, 1}};
  GraphSummary s = summarize(build_graph(3, 3, edges));
  CHECK(s.n == 3);
  CHECK(s.p == 3);
  CHECK(s.n_obs == 5);
  CHECK(s.n_components == 2);
  CHECK(s.sparsity == doctest::Approx(5.0 / 9.0));
  CHECK(s.avg_worker_degree == doctest::Approx(5.0 / 3.0));
  CHECK(s.avg_firm_degree == doctest::Approx(5.0 / 3.0));
}
