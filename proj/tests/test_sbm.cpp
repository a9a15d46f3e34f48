#include "ridgefe/sbm.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

#include "doctest.h"
#include "ridgefe/rng.hpp"

using namespace ridgefe;

namespace {

SbmParams small_params(int k, Index n0, Index p0, double c = 2.0, double delta = 0.1) {
  SbmParams p;
  p.n0 = n0;
  p.p0 = p0;
  p.k = k;
  p.pi_w = Vec::Constant(k, 1.0 / k);
  p.pi_f = Vec::Constant(k, 1.0 / k);
  p.affinity = paper_affinity(c, k, p0, delta);
  return p;
}

Mat dense_edge_probabilities(const NodeAssignment& a, const Mat& c) {
  EdgeProbabilities ep(a, c);
  Mat m(a.n_workers(), a.n_firms());
  for (Index i = 0; i < a.n_workers(); ++i)
    for (Index j = 0; j < a.n_firms(); ++j) m(i, j) = ep(i, j);
  return m;
}

}  // namespace

TEST_CASE("paper affinity matrix") {
  Mat c1 = paper_affinity(1.0, 3, 300, 1.0);
  CHECK((c1.array() == 100.0).all());
  Mat c0 = paper_affinity(1.0, 3, 300, 0.0);
  CHECK(c0.diagonal().isApproxToConstant(100.0));
  CHECK(c0(0, 1) == 0.0);
  Mat cp = paper_affinity(2.0, 5, 4500, 0.1);
  CHECK(cp(2, 2) == doctest::Approx(1800.0));
  CHECK(cp(0, 4) == doctest::Approx(180.0));
}

TEST_CASE("assignment: theta renormalization and degenerate cases") {
  SbmParams p = small_params(3, 60, 30);
  NodeAssignment a = draw_assignment(p, 42);
  Vec sums = Vec::Zero(3);
  for (Index j = 0; j < p.p0; ++j) {
    CHECK(a.theta[j] > 0.0);
    sums[a.firm_type[j]] += a.theta[j];
  }
  for (int l = 0; l < 3; ++l)
    if (a.firm_group_count[l] > 0) CHECK(std::abs(sums[l] - 1.0) < 1e-12);

  // K=1: all one type, theta = raw / sum
  SbmParams p1 = small_params(1, 10, 6);
  NodeAssignment a1 = draw_assignment(p1, 7);
  for (int t : a1.worker_type) CHECK(t == 0);
  CHECK(std::abs(a1.theta.sum() - 1.0) < 1e-12);

  // near-degenerate Pareto: enormous shape makes the draws constant
  SbmParams pd = small_params(1, 10, 8);
  pd.theta_alpha = 1e9;
  NodeAssignment ad = draw_assignment(pd, 9);
  for (Index j = 0; j < pd.p0; ++j) CHECK(ad.theta[j] == doctest::Approx(1.0 / 8).epsilon(1e-6));
}

TEST_CASE("assignment: group counts match a multinomial oracle") {
  // K=5, uniform types: every count within 4 sd of n0/5 across seeds
  SbmParams p = small_params(5, 2000, 400);
  const double sd = std::sqrt(2000 * 0.2 * 0.8);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    NodeAssignment a = draw_assignment(p, seed);
    CHECK(a.worker_group_count.sum() == 2000);
    for (int k = 0; k < 5; ++k) CHECK(std::abs(a.worker_group_count[k] - 400.0) < 4.0 * sd);
  }
}

TEST_CASE("assignment is reproducible and permits empty firm groups") {
  SbmParams p = small_params(3, 30, 12);
  NodeAssignment a = draw_assignment(p, 5);
  NodeAssignment b = draw_assignment(p, 5);
  CHECK(a.worker_type == b.worker_type);
  CHECK(a.firm_type == b.firm_type);
  CHECK((a.theta - b.theta).norm() == 0.0);

  SbmParams pe = small_params(2, 10, 4);
  pe.pi_f << 1.0, 0.0;  // group 1 never drawn
  NodeAssignment ae = draw_assignment(pe, 3);
  CHECK(ae.empty_firm_groups == std::vector<int>{1});
}

TEST_CASE("edge probabilities: block sums match the affinity exactly") {
  SbmParams p = small_params(3, 40, 18, 1.5, 0.3);
  NodeAssignment a = draw_assignment(p, 11);
  Mat pij = dense_edge_probabilities(a, p.affinity);
  // sum over pairs of each (k,l) block equals C(k,l) when nothing clips
  for (int k = 0; k < 3; ++k)
    for (int l = 0; l < 3; ++l) {
      if (a.worker_group_count[k] == 0 || a.firm_group_count[l] == 0) continue;
      double s = 0.0;
      for (Index i = 0; i < p.n0; ++i)
        for (Index j = 0; j < p.p0; ++j)
          if (a.worker_type[i] == k && a.firm_type[j] == l) s += pij(i, j);
      CHECK(std::abs(s - p.affinity(k, l)) < 1e-9);
    }
  // column sums give expected firm degrees
  Vec col = pij.colwise().sum();
  for (Index j = 0; j < p.p0; ++j) {
    const double expect = a.theta[j] * p.affinity.col(a.firm_type[j]).sum();
    CHECK(std::abs(col[j] - expect) < 1e-10);
  }
  // K=1 specialization p_ij = theta_j c / n
  SbmParams p1 = small_params(1, 12, 5);
  p1.affinity = Mat::Constant(1, 1, 3.0);
  NodeAssignment a1 = draw_assignment(p1, 2);
  EdgeProbabilities ep1(a1, p1.affinity);
  for (Index j = 0; j < 5; ++j)
    CHECK(ep1(0, j) == doctest::Approx(a1.theta[j] * 3.0 / 12));
}

TEST_CASE("sample_network: zero affinity gives the empty graph; seeds reproduce") {
  SbmParams p = small_params(2, 20, 10);
  p.affinity = Mat::Zero(2, 2);
  NodeAssignment a = draw_assignment(p, 1);
  BipartiteGraph g = sample_network(a, p.affinity, 1);
  CHECK(g.n_obs() == 0);

  SbmParams q = small_params(3, 120, 45);
  NodeAssignment aq = draw_assignment(q, 8);
  BipartiteGraph g1 = sample_network(aq, q.affinity, 77);
  BipartiteGraph g2 = sample_network(aq, q.affinity, 77);
  CHECK(g1.n_obs() == g2.n_obs());
  CHECK((Mat(g1.adjacency()) - Mat(g2.adjacency())).norm() == 0.0);
}

TEST_CASE("sample_network: realized firm degrees match the binomial oracle") {
  SbmParams p = small_params(2, 80, 12, 3.0, 0.2);
  NodeAssignment a = draw_assignment(p, 21);
  Mat pij = dense_edge_probabilities(a, p.affinity);
  const int reps = 200;
  Vec mean_deg = Vec::Zero(p.p0);
  for (int r = 0; r < reps; ++r)
    mean_deg += sample_network(a, p.affinity, 1000 + r).firm_degrees();
  mean_deg /= reps;
  for (Index j = 0; j < p.p0; ++j) {
    const double expect = pij.col(j).sum();
    const double var = (pij.col(j).array() * (1.0 - pij.col(j).array())).sum();
    const double se = std::sqrt(var / reps);
    CHECK(std::abs(mean_deg[j] - expect) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("sample_network: expected total mass matches realized links") {
  SbmParams p = small_params(3, 300, 100);
  NodeAssignment a = draw_assignment(p, 4);
  SampleStats st;
  double total = 0.0;
  const int reps = 30;
  for (int r = 0; r < reps; ++r) total += sample_network(a, p.affinity, 50 + r, &st).n_obs();
  total /= reps;
  const double expect = st.total_mass;
  CHECK(std::abs(total - expect) / expect < 0.05);
}

TEST_CASE("sample_network: clipped mass beyond 0.1% fails the run") {
  // one firm hogs the whole group mass and the affinity is huge
  SbmParams p = small_params(1, 5, 2);
  p.affinity = Mat::Constant(1, 1, 100.0);
  NodeAssignment a = draw_assignment(p, 1);
  a.theta << 0.99, 0.01;
  CHECK_THROWS_AS((void)sample_network(a, p.affinity, 1), std::runtime_error);
}

TEST_CASE("expected network: degrees equal the dense p_ij margins") {
  SbmParams p = small_params(3, 30, 14, 1.2, 0.4);
  NodeAssignment a = draw_assignment(p, 13);
  ExpectedNetwork en(a, p.affinity, {0.5, 0.8});
  Mat pij = dense_edge_probabilities(a, p.affinity);
  CHECK((en.expected_worker_degrees() - pij.rowwise().sum()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((en.expected_firm_degrees() - pij.colwise().sum().transpose()).cwiseAbs().maxCoeff() <
        1e-12);
  // factored expected adjacency matches the dense product
  Vec x = Vec::LinSpaced(14, -1.0, 2.0);
  CHECK((en.b_apply(x) - pij * x).cwiseAbs().maxCoeff() < 1e-12);
  Vec y = Vec::LinSpaced(30, 0.0, 1.0);
  CHECK((en.bt_apply(y) - pij.transpose() * y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("expected network: rank K and homogeneous special case") {
  SbmParams p = small_params(3, 36, 15, 1.5, 0.25);
  NodeAssignment a = draw_assignment(p, 17);
  ExpectedNetwork en(a, p.affinity, {0.3, 0.7});
  Mat e = densify(en.e_op());
  Eigen::JacobiSVD<Mat> svd(e);
  const auto rank = (svd.singularValues().array() > 1e-10).count();
  CHECK(rank == 3);

  // K=1 with equal theta and lambda=0: all entries of A_f equal 1/p
  SbmParams p1 = small_params(1, 12, 6);
  p1.affinity = Mat::Constant(1, 1, 4.0);
  p1.theta_alpha = 1e9;
  NodeAssignment a1 = draw_assignment(p1, 3);
  ExpectedNetwork en1(a1, p1.affinity, {0.0, 0.0});
  Mat af = densify(en1.adjacency_op(Side::firms));
  CHECK((af.array() - 1.0 / 6).abs().maxCoeff() < 1e-9);
}

TEST_CASE("expected network: displayed elementwise formula for A_f") {
  SbmParams p = small_params(3, 40, 12, 2.0, 0.15);
  NodeAssignment a = draw_assignment(p, 23);
  ExpectedNetwork en(a, p.affinity, {0.6, 1.1});
  Mat af = densify(en.adjacency_op(Side::firms));
  const Mat& ct = en.normalized_affinity();
  for (Index j = 0; j < 12; ++j)
    for (Index jp = 0; jp < 12; ++jp) {
      double mid = 0.0;
      for (int k = 0; k < 3; ++k)
        mid += a.worker_group_count[k] * ct(k, a.firm_type[j]) * en.omega()[k] * en.omega()[k] *
               ct(k, a.firm_type[jp]);
      const double expect = en.phi()[j] * mid * en.phi()[jp];
      CHECK(std::abs(af(j, jp) - expect) < 1e-12);
    }
}

TEST_CASE("expected network: spectral guarantees") {
  SbmParams p = small_params(4, 60, 24, 1.8, 0.3);
  NodeAssignment a = draw_assignment(p, 29);
  RidgePenalties lam{0.9, 1.4};
  ExpectedNetwork en(a, p.affinity, lam);

  const double e_norm = operator_norm(en.e_op(), 1e-10, 20000).value;
  const double cap = std::sqrt(en.max_expected_firm_degree() /
                               (en.max_expected_firm_degree() + lam.firm));
  CHECK(e_norm <= cap + 1e-10);
  CHECK(e_norm < 1.0);

  Vec eigs = dense_spectrum(en.laplacian_op(Side::firms));
  const double floor = lam.firm / (en.max_expected_firm_degree() + lam.firm);
  CHECK(eigs.minCoeff() >= floor - 1e-12);

  Vec eigs_w = dense_spectrum(en.laplacian_op(Side::workers));
  const double floor_w = lam.worker / (en.max_expected_worker_degree() + lam.worker);
  CHECK(eigs_w.minCoeff() >= floor_w - 1e-12);
}

TEST_CASE("woodbury inverse equals the dense inverse") {
  RngStream s(stream_key(31, "wood"));
  for (int rep = 0; rep < 50; ++rep) {
    const int k = 1 + static_cast<int>(s.next_u64() % 4);
    SbmParams p = small_params(k, 20 + static_cast<Index>(s.next_u64() % 60),
                               8 + static_cast<Index>(s.next_u64() % 30), 1.0 + s.next_double(),
                               s.next_double());
    NodeAssignment a = draw_assignment(p, 1000 + rep);
    RidgePenalties lam{0.2 + 2.0 * s.next_double(), 0.2 + 2.0 * s.next_double()};
    ExpectedNetwork en(a, p.affinity, lam);

    for (Side side : {Side::workers, Side::firms}) {
      const Index sz = side == Side::workers ? p.n0 : p.p0;
      Mat lap = densify(en.laplacian_op(side));
      Vec x(sz);
      for (Index i = 0; i < sz; ++i) x[i] = s.next_normal();
      Vec direct = lap.lu().solve(x);
      Vec wood = en.laplacian_inverse_apply(side, x);
      CHECK((wood - direct).norm() <= 1e-10 * direct.norm());
      // inverse consistency: applying to L y returns y
      Vec y = en.laplacian_inverse_apply(side, lap * x);
      CHECK((y - x).norm() <= 1e-10 * x.norm());
    }
  }
}

TEST_CASE("unnormalized inverse and the zero-adjacency identity map") {
  SbmParams p = small_params(2, 25, 10, 1.4, 0.5);
  NodeAssignment a = draw_assignment(p, 37);
  RidgePenalties lam{0.8, 1.2};
  ExpectedNetwork en(a, p.affinity, lam);
  Vec shift = en.expected_firm_degrees().array() + lam.firm;
  Mat lt = shift.cwiseSqrt().asDiagonal() * densify(en.laplacian_op(Side::firms)) *
           shift.cwiseSqrt().asDiagonal();
  Vec x = Vec::LinSpaced(10, -2.0, 1.0);
  Vec direct = lt.lu().solve(x);
  CHECK((en.unnormalized_laplacian_inverse_apply(Side::firms, x) - direct).norm() <=
        1e-10 * direct.norm());

  // zero affinity: the normalized inverse is the identity
  SbmParams pz = small_params(2, 10, 5);
  pz.affinity = Mat::Zero(2, 2);
  NodeAssignment az = draw_assignment(pz, 2);
  ExpectedNetwork enz(az, pz.affinity, {1.0, 1.0});
  Vec v = Vec::LinSpaced(5, 1.0, 5.0);
  CHECK((enz.laplacian_inverse_apply(Side::firms, v) - v).norm() == 0.0);
}

TEST_CASE("expected network rejects zero expected degree without penalty") {
  SbmParams p = small_params(2, 10, 5);
  p.affinity = Mat::Zero(2, 2);
  NodeAssignment a = draw_assignment(p, 2);
  CHECK_THROWS_AS(ExpectedNetwork(a, p.affinity, RidgePenalties{0.0, 1.0}),
                  std::invalid_argument);
}
