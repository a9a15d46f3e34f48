#include "ridgefe/sbm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ridgefe/rng.hpp"

namespace ridgefe {

void SbmParams::validate() const {
  if (n0 < 0 || p0 < 0) throw std::invalid_argument("sbm: negative node counts");
  if (k < 1) throw std::invalid_argument("sbm: need at least one group");
  if (pi_w.size() != k || pi_f.size() != k)
    throw std::invalid_argument("sbm: type probability vectors must have length K");
  if ((pi_w.array() < 0).any() || (pi_f.array() < 0).any())
    throw std::invalid_argument("sbm: negative type probability");
  if (std::abs(pi_w.sum() - 1.0) > 1e-12 || std::abs(pi_f.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("sbm: type probabilities must sum to 1");
  if (affinity.rows() != k || affinity.cols() != k)
    throw std::invalid_argument("sbm: affinity must be K x K");
  if ((affinity.array() < 0).any()) throw std::invalid_argument("sbm: negative affinity");
  if (theta_alpha <= 0 || theta_min <= 0) throw std::invalid_argument("sbm: bad Pareto parameters");
}

Mat paper_affinity(double c, int k, Index p0, double delta) {
  if (c <= 0) throw std::invalid_argument("paper_affinity: c must be positive");
  if (delta < 0 || delta > 1) throw std::invalid_argument("paper_affinity: delta must be in [0,1]");
  const double base = c * static_cast<double>(p0) / k;
  Mat m = Mat::Constant(k, k, base * delta);
  m.diagonal().setConstant(base);
  return m;
}

namespace {

int draw_type(RngStream& s, const Vec& pi) {
  const double u = s.next_double();
  double acc = 0.0;
  for (int k = 0; k < pi.size(); ++k) {
    acc += pi[k];
    if (u < acc) return k;
  }
  return static_cast<int>(pi.size()) - 1;
}

}  // namespace

NodeAssignment draw_assignment(const SbmParams& params, std::uint64_t seed) {
  params.validate();
  NodeAssignment a;
  a.n_groups = params.k;
  a.worker_type.resize(params.n0);
  a.firm_type.resize(params.p0);
  a.theta.resize(params.p0);
  a.worker_group_count = Eigen::VectorXi::Zero(params.k);
  a.firm_group_count = Eigen::VectorXi::Zero(params.k);

  for (Index i = 0; i < params.n0; ++i) {
    RngStream s(stream_key(seed, "worker_type", static_cast<std::uint64_t>(i)));
    a.worker_type[i] = draw_type(s, params.pi_w);
    ++a.worker_group_count[a.worker_type[i]];
  }
  Vec group_theta_sum = Vec::Zero(params.k);
  for (Index j = 0; j < params.p0; ++j) {
    RngStream s(stream_key(seed, "firm_type", static_cast<std::uint64_t>(j)));
    a.firm_type[j] = draw_type(s, params.pi_f);
    ++a.firm_group_count[a.firm_type[j]];
    RngStream st(stream_key(seed, "theta", static_cast<std::uint64_t>(j)));
    a.theta[j] = st.next_pareto(params.theta_alpha, params.theta_min);
    group_theta_sum[a.firm_type[j]] += a.theta[j];
  }
  for (Index j = 0; j < params.p0; ++j) a.theta[j] /= group_theta_sum[a.firm_type[j]];
  for (int l = 0; l < params.k; ++l)
    if (a.firm_group_count[l] == 0) a.empty_firm_groups.push_back(l);
  return a;
}

EdgeProbabilities::EdgeProbabilities(const NodeAssignment& a, const Mat& affinity)
    : a_(&a), c_(affinity) {
  if (c_.rows() != a.n_groups || c_.cols() != a.n_groups)
    throw std::invalid_argument("edge_probabilities: affinity size mismatch");
  for (Index j = 0; j < a.n_firms(); ++j)
    total_mass_ += a.theta[j] * c_.col(a.firm_type[j]).sum();
}

double EdgeProbabilities::block_probability(int k, Index j) const {
  const int nk = a_->worker_group_count[k];
  if (nk == 0) throw std::invalid_argument("edge_probabilities: empty worker group");
  return a_->theta[j] * c_(k, a_->firm_type[j]) / nk;
}

double EdgeProbabilities::operator()(Index i, Index j) const {
  const double p = block_probability(a_->worker_type[i], j);
  if (p > 1.0) {
    ++clipped_pairs_;
    clipped_mass_ += p - 1.0;
    return 1.0;
  }
  return p;
}

BipartiteGraph sample_network(const NodeAssignment& a, const Mat& affinity, std::uint64_t seed,
                              SampleStats* stats) {
  const int kk = a.n_groups;
  if (affinity.rows() != kk || affinity.cols() != kk)
    throw std::invalid_argument("sample_network: affinity size mismatch");
  const Index n = a.n_workers();
  const Index p = a.n_firms();

  std::vector<std::vector<Index>> workers_by_type(kk), firms_by_type(kk);
  for (Index i = 0; i < n; ++i) workers_by_type[a.worker_type[i]].push_back(i);
  for (Index j = 0; j < p; ++j) firms_by_type[a.firm_type[j]].push_back(j);

  SampleStats st;
  std::vector<Edge> edges;
  for (int k = 0; k < kk; ++k) {
    const auto& wk = workers_by_type[k];
    if (wk.empty()) continue;
    const auto nk = static_cast<double>(wk.size());
    for (int l = 0; l < kk; ++l) {
      if (affinity(k, l) == 0.0) continue;
      RngStream rng(stream_key(seed, "edges", static_cast<std::uint64_t>(k),
                               static_cast<std::uint64_t>(l)));
      for (Index j : firms_by_type[l]) {
        double prob = a.theta[j] * affinity(k, l) / nk;
        st.total_mass += prob * nk;
        if (prob <= 0.0) continue;
        if (prob >= 1.0) {
          if (prob > 1.0) {
            st.clipped_pairs += static_cast<std::int64_t>(wk.size());
            st.clipped_mass += (prob - 1.0) * nk;
          }
          for (Index i : wk) edges.push_back({i, j, 1.0});
          continue;
        }
        // run of wk.size() independent Bernoulli(prob) draws via geometric skips
        std::int64_t pos = rng.next_geometric(prob);
        while (pos < static_cast<std::int64_t>(wk.size())) {
          edges.push_back({wk[pos], j, 1.0});
          pos += 1 + rng.next_geometric(prob);
        }
      }
    }
  }
  if (stats) *stats = st;
  if (st.total_mass > 0.0 && st.clipped_mass > 1e-3 * st.total_mass)
    throw std::runtime_error("sample_network: clipped probability mass exceeds 0.1% of total (" +
                             std::to_string(st.clipped_mass) + " of " +
                             std::to_string(st.total_mass) + ")");
  return BipartiteGraph::from_edges(n, p, edges);
}

BipartiteGraph sample_network(const SbmParams& params, std::uint64_t seed, SampleStats* stats) {
  NodeAssignment a = draw_assignment(params, seed);
  return sample_network(a, params.affinity, seed, stats);
}

ExpectedNetwork::ExpectedNetwork(const NodeAssignment& a, const Mat& affinity,
                                 const RidgePenalties& lambda)
    : a_(&a), c_(affinity), lambda_(lambda) {
  lambda.validate();
  const int kk = a.n_groups;
  if (c_.rows() != kk || c_.cols() != kk)
    throw std::invalid_argument("expected_network: affinity size mismatch");
  const Index n = a.n_workers();
  const Index p = a.n_firms();

  row_sum_ = c_.rowwise().sum();  // C(k,.)
  col_sum_ = c_.colwise().sum();  // C(.,l)

  exp_deg_w_.resize(n);
  for (Index i = 0; i < n; ++i) {
    const int k = a.worker_type[i];
    exp_deg_w_[i] = row_sum_[k] / a.worker_group_count[k];
  }
  exp_deg_f_.resize(p);
  for (Index j = 0; j < p; ++j) exp_deg_f_[j] = a.theta[j] * col_sum_[a.firm_type[j]];

  min_deg_w_ = n > 0 ? exp_deg_w_.minCoeff() : 0.0;
  max_deg_w_ = n > 0 ? exp_deg_w_.maxCoeff() : 0.0;
  min_deg_f_ = p > 0 ? exp_deg_f_.minCoeff() : 0.0;
  max_deg_f_ = p > 0 ? exp_deg_f_.maxCoeff() : 0.0;
  if (lambda.worker == 0.0 && min_deg_w_ <= 0.0)
    throw std::invalid_argument("expected_network: zero expected worker degree with zero penalty");
  if (lambda.firm == 0.0 && min_deg_f_ <= 0.0)
    throw std::invalid_argument("expected_network: zero expected firm degree with zero penalty");

  shift_w_ = exp_deg_w_.array() + lambda.worker;
  shift_f_ = exp_deg_f_.array() + lambda.firm;

  c_tilde_.resize(kk, kk);
  for (int k = 0; k < kk; ++k)
    for (int l = 0; l < kk; ++l) {
      const double denom = row_sum_[k] * col_sum_[l];
      c_tilde_(k, l) = denom > 0.0 ? c_(k, l) / std::sqrt(denom) : 0.0;
    }

  omega_ = Vec::Zero(kk);
  for (int k = 0; k < kk; ++k) {
    const int nk = a.worker_group_count[k];
    if (nk == 0 || row_sum_[k] == 0.0) continue;
    const double expected = row_sum_[k] / nk;
    omega_[k] = std::sqrt(row_sum_[k] / (expected + lambda.worker)) / nk;
  }
  phi_.resize(p);
  for (Index j = 0; j < p; ++j) {
    const int l = a.firm_type[j];
    phi_[j] = col_sum_[l] > 0.0
                  ? a.theta[j] * std::sqrt(col_sum_[l] / (exp_deg_f_[j] + lambda.firm))
                  : 0.0;
  }

  // S_w = Uw'Uw = diag(n_k omega_k^2), S_f = diag over groups of sum phi_j^2
  s_w_ = Mat::Zero(kk, kk);
  for (int k = 0; k < kk; ++k)
    s_w_(k, k) = a.worker_group_count[k] * omega_[k] * omega_[k];
  s_f_ = Mat::Zero(kk, kk);
  for (Index j = 0; j < p; ++j) s_f_(a.firm_type[j], a.firm_type[j]) += phi_[j] * phi_[j];

  g_f_ = c_tilde_.transpose() * s_w_ * c_tilde_;
  g_w_ = c_tilde_ * s_f_ * c_tilde_.transpose();

  // Woodbury core H = G (I - S G)^{-1}; (I - S G) is invertible whenever
  // the expected adjacency has spectral norm below one (Lemma on eigmin).
  auto make_core = [kk](const Mat& g, const Mat& s) {
    Mat m = Mat::Identity(kk, kk) - s * g;
    Eigen::PartialPivLU<Mat> lu(m);
    const Mat inv = lu.solve(Mat::Identity(kk, kk));
    if (!inv.allFinite())
      throw std::runtime_error("expected_network: singular Woodbury core");
    return (g * inv).eval();
  };
  h_f_ = make_core(g_f_, s_f_);
  h_w_ = make_core(g_w_, s_w_);
}

Vec ExpectedNetwork::u_w_apply_t(const Vec& x) const {
  Vec out = Vec::Zero(a_->n_groups);
  for (Index i = 0; i < x.size(); ++i) out[a_->worker_type[i]] += omega_[a_->worker_type[i]] * x[i];
  return out;
}

Vec ExpectedNetwork::u_w_apply(const Vec& y) const {
  Vec out(a_->n_workers());
  for (Index i = 0; i < out.size(); ++i) out[i] = omega_[a_->worker_type[i]] * y[a_->worker_type[i]];
  return out;
}

Vec ExpectedNetwork::u_f_apply_t(const Vec& x) const {
  Vec out = Vec::Zero(a_->n_groups);
  for (Index j = 0; j < x.size(); ++j) out[a_->firm_type[j]] += phi_[j] * x[j];
  return out;
}

Vec ExpectedNetwork::u_f_apply(const Vec& y) const {
  Vec out(a_->n_firms());
  for (Index j = 0; j < out.size(); ++j) out[j] = phi_[j] * y[a_->firm_type[j]];
  return out;
}

Vec ExpectedNetwork::b_apply(const Vec& x) const {
  Vec t = Vec::Zero(a_->n_groups);
  for (Index j = 0; j < x.size(); ++j) t[a_->firm_type[j]] += a_->theta[j] * x[j];
  Vec s = c_ * t;
  Vec out(a_->n_workers());
  for (Index i = 0; i < out.size(); ++i)
    out[i] = s[a_->worker_type[i]] / a_->worker_group_count[a_->worker_type[i]];
  return out;
}

Vec ExpectedNetwork::bt_apply(const Vec& x) const {
  Vec t = Vec::Zero(a_->n_groups);
  for (Index i = 0; i < x.size(); ++i)
    t[a_->worker_type[i]] += x[i] / a_->worker_group_count[a_->worker_type[i]];
  Vec s = c_.transpose() * t;
  Vec out(a_->n_firms());
  for (Index j = 0; j < out.size(); ++j) out[j] = a_->theta[j] * s[a_->firm_type[j]];
  return out;
}

LinearOperator ExpectedNetwork::e_op() const {
  const ExpectedNetwork* en = this;
  LinearOperator op;
  op.rows = n_workers();
  op.cols = n_firms();
  op.apply = [en](const Vec& x) { return en->u_w_apply(en->c_tilde_ * en->u_f_apply_t(x)); };
  op.apply_t = [en](const Vec& x) {
    return en->u_f_apply(en->c_tilde_.transpose() * en->u_w_apply_t(x));
  };
  return op;
}

LinearOperator ExpectedNetwork::adjacency_op(Side side) const {
  const ExpectedNetwork* en = this;
  if (side == Side::firms)
    return symmetric_operator(n_firms(), [en](const Vec& x) {
      return en->u_f_apply(en->g_f_ * en->u_f_apply_t(x));
    });
  return symmetric_operator(n_workers(), [en](const Vec& x) {
    return en->u_w_apply(en->g_w_ * en->u_w_apply_t(x));
  });
}

LinearOperator ExpectedNetwork::laplacian_op(Side side) const {
  LinearOperator adj = adjacency_op(side);
  return symmetric_operator(adj.rows,
                            [adj](const Vec& x) { return (x - adj.apply(x)).eval(); });
}

Vec ExpectedNetwork::laplacian_inverse_apply(Side side, const Vec& x) const {
  if (side == Side::firms) {
    if (lambda_.firm <= 0.0)
      throw std::invalid_argument("expected inverse requires a positive firm penalty");
    return x + u_f_apply(h_f_ * u_f_apply_t(x));
  }
  if (lambda_.worker <= 0.0)
    throw std::invalid_argument("expected inverse requires a positive worker penalty");
  return x + u_w_apply(h_w_ * u_w_apply_t(x));
}

Vec ExpectedNetwork::unnormalized_laplacian_inverse_apply(Side side, const Vec& x) const {
  const Vec& shift = side == Side::firms ? shift_f_ : shift_w_;
  Vec scaled = x.cwiseQuotient(shift.cwiseSqrt());
  Vec solved = laplacian_inverse_apply(side, scaled);
  return solved.cwiseQuotient(shift.cwiseSqrt());
}

Vec ExpectedNetwork::factor_row_w(Index i) const {
  Vec row = Vec::Zero(a_->n_groups);
  row[a_->worker_type[i]] = omega_[a_->worker_type[i]];
  return row;
}

Vec ExpectedNetwork::factor_row_f(Index j) const {
  Vec row = Vec::Zero(a_->n_groups);
  row[a_->firm_type[j]] = phi_[j];
  return row;
}

}  // namespace ridgefe
