#include "ridgefe/estimator.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ridgefe/rng.hpp"

namespace ridgefe {

void OutcomePanel::validate() const {
  if (y.size() != n_obs() || obs_firm.size() != obs_worker.size())
    throw std::invalid_argument("panel: observation index and outcome length mismatch");
  if (n_obs() != graph.n_obs())
    throw std::invalid_argument("panel: observation count does not match graph multiplicities");
}

OutcomePanel make_panel(BipartiteGraph graph, Vec y) {
  OutcomePanel p;
  std::vector<Edge> edges = graph.edges();
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return a.worker != b.worker ? a.worker < b.worker : a.firm < b.firm;
  });
  p.obs_worker.reserve(graph.n_obs());
  p.obs_firm.reserve(graph.n_obs());
  for (const Edge& e : edges) {
    const auto d = static_cast<std::int64_t>(std::llround(e.count));
    for (std::int64_t s = 0; s < d; ++s) {
      p.obs_worker.push_back(e.worker);
      p.obs_firm.push_back(e.firm);
    }
  }
  p.graph = std::move(graph);
  p.y = std::move(y);
  p.validate();
  return p;
}

Vec worker_sums(const OutcomePanel& panel) {
  Vec r = Vec::Zero(panel.graph.n_workers());
  for (Index k = 0; k < panel.n_obs(); ++k) r[panel.obs_worker[k]] += panel.y[k];
  return r;
}

Vec firm_sums(const OutcomePanel& panel) {
  Vec r = Vec::Zero(panel.graph.n_firms());
  for (Index k = 0; k < panel.n_obs(); ++k) r[panel.obs_firm[k]] += panel.y[k];
  return r;
}

FixedEffectDgp draw_effects(const NodeAssignment& a, Vec mu_star, Vec phi_star, double sigma,
                            double sigma_w, double sigma_f, std::uint64_t seed) {
  if (mu_star.size() != a.n_groups || phi_star.size() != a.n_groups)
    throw std::invalid_argument("draw_effects: group mean vectors must have length K");
  if (sigma < 0 || sigma_w < 0 || sigma_f < 0)
    throw std::invalid_argument("draw_effects: negative standard deviation");
  FixedEffectDgp d;
  d.mu_star = std::move(mu_star);
  d.phi_star = std::move(phi_star);
  d.sigma = sigma;
  d.sigma_w = sigma_w;
  d.sigma_f = sigma_f;
  d.mu.resize(a.n_workers());
  for (Index i = 0; i < a.n_workers(); ++i) {
    RngStream s(stream_key(seed, "mu", static_cast<std::uint64_t>(i)));
    d.mu[i] = d.mu_star[a.worker_type[i]] + sigma_w * s.next_normal();
  }
  d.phi.resize(a.n_firms());
  for (Index j = 0; j < a.n_firms(); ++j) {
    RngStream s(stream_key(seed, "phi", static_cast<std::uint64_t>(j)));
    d.phi[j] = d.phi_star[a.firm_type[j]] + sigma_f * s.next_normal();
  }
  return d;
}

FixedEffectDgp paper_effects(const NodeAssignment& a, std::uint64_t seed) {
  Vec mu_star(a.n_groups), phi_star(a.n_groups);
  for (int k = 0; k < a.n_groups; ++k) {
    mu_star[k] = k;
    phi_star[k] = 0.4 * k;
  }
  return draw_effects(a, mu_star, phi_star, std::sqrt(3.0), std::sqrt(2.0), 1.0, seed);
}

OutcomePanel generate_outcomes(const BipartiteGraph& g, std::vector<Index> worker_ids,
                               std::vector<Index> firm_ids, const FixedEffectDgp& dgp,
                               std::uint64_t seed) {
  if (worker_ids.empty()) {
    worker_ids.resize(g.n_workers());
    std::iota(worker_ids.begin(), worker_ids.end(), Index{0});
  }
  if (firm_ids.empty()) {
    firm_ids.resize(g.n_firms());
    std::iota(firm_ids.begin(), firm_ids.end(), Index{0});
  }
  if (static_cast<Index>(worker_ids.size()) != g.n_workers() ||
      static_cast<Index>(firm_ids.size()) != g.n_firms())
    throw std::invalid_argument("generate_outcomes: id mapping size mismatch");
  OutcomePanel p = make_panel(g, Vec::Zero(g.n_obs()));
  RngStream s(stream_key(seed, "residuals"));
  for (Index k = 0; k < p.n_obs(); ++k) {
    const Index iu = worker_ids[p.obs_worker[k]];
    const Index ju = firm_ids[p.obs_firm[k]];
    if (iu >= dgp.mu.size() || ju >= dgp.phi.size())
      throw std::invalid_argument("generate_outcomes: assignment does not cover all nodes");
    p.y[k] = dgp.mu[iu] + dgp.phi[ju] + dgp.sigma * s.next_normal();
  }
  p.worker_ids = std::move(worker_ids);
  p.firm_ids = std::move(firm_ids);
  return p;
}

OutcomePanel generate_outcomes(const Subgraph& sub, const FixedEffectDgp& dgp,
                               std::uint64_t seed) {
  return generate_outcomes(sub.graph, sub.worker_ids, sub.firm_ids, dgp, seed);
}

NormalEquations::NormalEquations(const BipartiteGraph& g, RidgePenalties lambda,
                                 SolverOptions opts, Index pinned_firm)
    : lambda_(lambda), pinned_firm_(pinned_firm), opts_(opts) {
  lambda.validate();
  if (pinned_firm_ >= g.n_firms())
    throw std::invalid_argument("normal_equations: pinned firm out of range");
  b_ = std::make_shared<const SpMat>(g.adjacency());
  if (lambda.worker == 0.0 && (g.worker_degrees().array() == 0.0).any())
    throw std::invalid_argument("normal_equations: zero worker degree without penalty");
  if (lambda.firm == 0.0 && pinned_firm_ < 0)
    throw std::invalid_argument("normal_equations: firm penalty must be positive unless a firm is pinned");
  if (lambda.firm == 0.0 && (g.firm_degrees().array() == 0.0).any())
    throw std::invalid_argument("normal_equations: zero firm degree without penalty");
  dw_ = g.worker_degrees().array() + lambda.worker;
  df_ = g.firm_degrees().array() + lambda.firm;

  // projection fill proxy: sum of squared worker row counts
  std::vector<std::int64_t> row_nnz(g.n_workers(), 0);
  for (Index j = 0; j < b_->outerSize(); ++j)
    for (SpMat::InnerIterator it(*b_, j); it; ++it) ++row_nnz[it.row()];
  std::int64_t proxy = 0;
  for (auto c : row_nnz) proxy += c * c;

  bool use_cholesky = opts.method != SolveMethod::conjugate_gradient &&
                      (opts.method == SolveMethod::cholesky || proxy <= opts.fill_budget);
  if (use_cholesky) {
    SpMat schur = firm_schur_matrix(g, lambda);
    if (pinned_firm_ >= 0) {
      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(schur.nonZeros());
      for (Index j = 0; j < schur.outerSize(); ++j)
        for (SpMat::InnerIterator it(schur, j); it; ++it)
          if (it.row() != pinned_firm_ && it.col() != pinned_firm_)
            trip.emplace_back(it.row(), it.col(), it.value());
      trip.emplace_back(pinned_firm_, pinned_firm_, 1.0);
      SpMat masked(schur.rows(), schur.cols());
      masked.setFromTriplets(trip.begin(), trip.end());
      schur = std::move(masked);
    }
    auto factor = std::make_shared<Eigen::SimplicialLDLT<SpMat>>();
    factor->compute(schur);
    if (factor->info() == Eigen::Success) {
      factor_ = std::move(factor);
      info_.method = "cholesky";
      info_.factor_nnz = factor_->matrixL().nestedExpression().nonZeros();
      return;
    }
    if (opts.method == SolveMethod::cholesky)
      throw std::runtime_error("normal_equations: sparse Cholesky factorization failed");
  }
  info_.method = "cg";
  cg_diag_ = firm_schur_diagonal(g, lambda);
  if (pinned_firm_ >= 0) cg_diag_[pinned_firm_] = 1.0;
}

Vec NormalEquations::schur_apply(const Vec& x) const {
  Vec xm = x;
  if (pinned_firm_ >= 0) xm[pinned_firm_] = 0.0;
  Vec y = df_.cwiseProduct(xm) - b_->transpose() * ((*b_ * xm).cwiseQuotient(dw_));
  if (pinned_firm_ >= 0) y[pinned_firm_] = x[pinned_firm_];
  return y;
}

Vec NormalEquations::schur_solve(Vec rhs) const {
  if (pinned_firm_ >= 0) rhs[pinned_firm_] = 0.0;
  if (factor_) {
    Vec x = factor_->solve(rhs);
    if (factor_->info() != Eigen::Success)
      throw std::runtime_error("normal_equations: Cholesky solve failed");
    return x;
  }
  LinearOperator op = symmetric_operator(rhs.size(), [this](const Vec& v) { return schur_apply(v); });
  CgResult res = conjugate_gradient(op, rhs, cg_diag_, opts_.cg_tol, opts_.cg_max_iter);
  info_.iterations = res.iterations;
  info_.rel_residual = res.rel_residual;
  info_.converged = res.converged;
  return res.x;
}

std::pair<Vec, Vec> NormalEquations::solve(const Vec& rhs_w, const Vec& rhs_f) const {
  Vec t = rhs_f - b_->transpose() * rhs_w.cwiseQuotient(dw_);
  Vec xf = schur_solve(std::move(t));
  Vec xw = (rhs_w - *b_ * xf).cwiseQuotient(dw_);
  return {std::move(xw), std::move(xf)};
}

Vec NormalEquations::solve_worker(const Vec& v) const {
  return solve(v, Vec::Zero(df_.size())).first;
}

Vec NormalEquations::solve_firm(const Vec& v) const {
  return solve(Vec::Zero(dw_.size()), v).second;
}

double NormalEquations::residual(const Vec& rhs_w, const Vec& rhs_f, const Vec& xw,
                                 const Vec& xf) const {
  Vec rw = dw_.cwiseProduct(xw) + *b_ * xf - rhs_w;
  Vec rf = b_->transpose() * xw + df_.cwiseProduct(xf) - rhs_f;
  const double denom = std::sqrt(rhs_w.squaredNorm() + rhs_f.squaredNorm());
  const double num = std::sqrt(rw.squaredNorm() + rf.squaredNorm());
  return denom > 0 ? num / denom : num;
}

namespace {

Vec fitted_residuals(const OutcomePanel& panel, const Vec& mu, const Vec& phi) {
  Vec r(panel.n_obs());
  for (Index k = 0; k < panel.n_obs(); ++k)
    r[k] = panel.y[k] - mu[panel.obs_worker[k]] - phi[panel.obs_firm[k]];
  return r;
}

}  // namespace

RidgeFit ridge_fit(const OutcomePanel& panel, const RidgePenalties& lambda,
                   const SolverOptions& opts) {
  panel.validate();
  if (!lambda.strictly_positive())
    throw std::invalid_argument("ridge_fit: penalties must be strictly positive; use ols_fit for the unpenalized estimator");
  NormalEquations ne(panel.graph, lambda, opts);
  Vec rw = worker_sums(panel);
  Vec rf = firm_sums(panel);
  auto [mu, phi] = ne.solve(rw, rf);
  RidgeFit fit;
  fit.normal_eq_rel_residual = ne.residual(rw, rf, mu, phi);
  fit.mu = std::move(mu);
  fit.phi = std::move(phi);
  fit.penalties = lambda;
  fit.residuals = fitted_residuals(panel, fit.mu, fit.phi);
  fit.solver = ne.info();
  fit.ok = fit.normal_eq_rel_residual <= 1e-8;
  if (!fit.ok) fit.solver.converged = false;
  return fit;
}

RidgeFit ols_fit(const OutcomePanel& panel, const SolverOptions& opts) {
  panel.validate();
  const ComponentLabeling lab = connected_components(panel.graph);
  if (lab.count() != 1) {
    std::string msg = "ols_fit: graph must be a single connected component; found " +
                      std::to_string(lab.count()) + " components with (workers, firms, obs):";
    const Index show = std::min<Index>(lab.count(), 8);
    for (Index c = 0; c < show; ++c)
      msg += " (" + std::to_string(lab.sizes[c].workers) + "," + std::to_string(lab.sizes[c].firms) +
             "," + std::to_string(lab.sizes[c].observations) + ")";
    throw std::invalid_argument(msg);
  }
  NormalEquations ne(panel.graph, {0.0, 0.0}, opts, /*pinned_firm=*/0);
  Vec rw = worker_sums(panel);
  Vec rf = firm_sums(panel);
  auto [mu, phi] = ne.solve(rw, rf);
  RidgeFit fit;
  fit.normal_eq_rel_residual = ne.residual(rw, rf, mu, phi);
  fit.mu = std::move(mu);
  fit.phi = std::move(phi);
  fit.penalties = {0.0, 0.0};
  fit.pinned_firm = 0;
  fit.residuals = fitted_residuals(panel, fit.mu, fit.phi);
  fit.solver = ne.info();
  fit.ok = fit.normal_eq_rel_residual <= 1e-8;
  if (!fit.ok) fit.solver.converged = false;
  return fit;
}

std::pair<Vec, Vec> insample_bias(const BipartiteGraph& g, const RidgePenalties& lambda,
                                  const Vec& mu, const Vec& phi) {
  if (!lambda.strictly_positive())
    throw std::invalid_argument("insample_bias: penalties must be strictly positive");
  if (mu.size() != g.n_workers() || phi.size() != g.n_firms())
    throw std::invalid_argument("insample_bias: effect vector size mismatch");
  NormalEquations ne(g, lambda);
  const SpMat& b = g.adjacency();
  Vec df = g.firm_degrees().array() + lambda.firm;
  Vec dw = g.worker_degrees().array() + lambda.worker;
  Vec rhs_w = -lambda.worker * mu + lambda.firm * (b * phi.cwiseQuotient(df));
  Vec rhs_f = -lambda.firm * phi + lambda.worker * (b.transpose() * mu.cwiseQuotient(dw));
  return {ne.solve_worker(rhs_w), ne.solve_firm(rhs_f)};
}

namespace {

// Shared second-moment core. Both conditional-variance families have the form
//   V_w = s2 Ltw^{-1} + Ltw^{-1} (a_w I + b_w B Df^{-2} B') Ltw^{-1}
//   V_f = s2 Ltf^{-1} + Ltf^{-1} (a_f I + b_f B' Dw^{-2} B) Ltf^{-1}
// fixed beta:   a_w = -s2 lw, b_w = -s2 lf, a_f = -s2 lf, b_f = -s2 lw
// random beta:  a_w = lw^2 sw^2 - lw s2, b_w = lf^2 sf^2 - lf s2, mirrored.
struct MomentCoefs {
  double s2, a_w, b_w, a_f, b_f;
};

Mat dense_unnormalized_inverse(const SpMat& b, const Vec& dw, const Vec& df, bool worker_side) {
  if (worker_side) {
    SpMat proj = b * (df.cwiseInverse().asDiagonal() * SpMat(b.transpose()));
    Mat m = -Mat(proj);
    m.diagonal() += dw;
    return Eigen::LLT<Mat>(m).solve(Mat::Identity(m.rows(), m.cols()));
  }
  SpMat proj = SpMat(b.transpose()) * (dw.cwiseInverse().asDiagonal() * b);
  Mat m = -Mat(proj);
  m.diagonal() += df;
  return Eigen::LLT<Mat>(m).solve(Mat::Identity(m.rows(), m.cols()));
}

MomentReport variance_report(const BipartiteGraph& g, const RidgePenalties& lambda,
                             const MomentCoefs& co, bool with_cov, const MomentOptions& opts) {
  if (!lambda.strictly_positive())
    throw std::invalid_argument("variance: penalties must be strictly positive");
  const Index n = g.n_workers();
  const Index p = g.n_firms();
  const SpMat& b = g.adjacency();
  Vec dw = g.worker_degrees().array() + lambda.worker;
  Vec df = g.firm_degrees().array() + lambda.firm;

  MomentReport rep;
  const bool below_cap = std::max(n, p) <= opts.dense_cap;
  if (opts.full && !below_cap)
    throw std::invalid_argument("variance: full matrices requested above the dense cap");

  if (opts.full) {
    Mat lw_inv = dense_unnormalized_inverse(b, dw, df, true);
    Mat lf_inv = dense_unnormalized_inverse(b, dw, df, false);
    Mat bd = Mat(b);

    Mat mid_w = co.b_w * (bd * df.array().square().inverse().matrix().asDiagonal() * bd.transpose());
    mid_w.diagonal().array() += co.a_w;
    rep.var_mu = co.s2 * lw_inv + lw_inv * mid_w * lw_inv;

    Mat mid_f = co.b_f * (bd.transpose() * dw.array().square().inverse().matrix().asDiagonal() * bd);
    mid_f.diagonal().array() += co.a_f;
    rep.var_phi = co.s2 * lf_inv + lf_inv * mid_f * lf_inv;

    if (with_cov) {
      Mat bdf = bd * df.cwiseInverse().asDiagonal();
      Mat inner = lambda.worker * (dw.cwiseInverse().asDiagonal() * bd) + lambda.firm * bdf;
      rep.cov_mu_phi = -co.s2 * (lw_inv * bdf) + co.s2 * (lw_inv * inner * lf_inv);
    }
    rep.var_mu_diag = rep.var_mu.diagonal();
    rep.var_phi_diag = rep.var_phi.diagonal();
    rep.full = true;
    return rep;
  }

  // probing estimator for the diagonals
  NormalEquations ne(g, lambda);
  auto apply_vw = [&](const Vec& z) {
    Vec u = ne.solve_worker(z);
    Vec mid = co.a_w * u + co.b_w * (b * (b.transpose() * u).cwiseQuotient(df.array().square().matrix()));
    return (co.s2 * u + ne.solve_worker(mid)).eval();
  };
  auto apply_vf = [&](const Vec& z) {
    Vec u = ne.solve_firm(z);
    Vec mid = co.a_f * u + co.b_f * (b.transpose() * (b * u).cwiseQuotient(dw.array().square().matrix()));
    return (co.s2 * u + ne.solve_firm(mid)).eval();
  };
  Vec acc_w = Vec::Zero(n), acc_f = Vec::Zero(p);
  RngStream s(stream_key(opts.probe_seed, "variance_probe"));
  for (int t = 0; t < opts.probes; ++t) {
    Vec zw(n), zf(p);
    for (Index i = 0; i < n; ++i) zw[i] = s.next_sign();
    for (Index j = 0; j < p; ++j) zf[j] = s.next_sign();
    acc_w += zw.cwiseProduct(apply_vw(zw));
    acc_f += zf.cwiseProduct(apply_vf(zf));
  }
  rep.var_mu_diag = acc_w / opts.probes;
  rep.var_phi_diag = acc_f / opts.probes;
  rep.diag_estimated = true;
  return rep;
}

}  // namespace

MomentReport insample_variance(const BipartiteGraph& g, const RidgePenalties& lambda,
                               double sigma, const MomentOptions& opts) {
  const double s2 = sigma * sigma;
  MomentCoefs co{s2, -s2 * lambda.worker, -s2 * lambda.firm, -s2 * lambda.firm,
                 -s2 * lambda.worker};
  return variance_report(g, lambda, co, /*with_cov=*/true, opts);
}

MomentReport random_beta_variance(const BipartiteGraph& g, const RidgePenalties& lambda,
                                  double sigma, double sigma_w, double sigma_f,
                                  const MomentOptions& opts) {
  const double s2 = sigma * sigma;
  const double lw = lambda.worker, lf = lambda.firm;
  MomentCoefs co{s2, lw * lw * sigma_w * sigma_w - lw * s2, lf * lf * sigma_f * sigma_f - lf * s2,
                 lf * lf * sigma_f * sigma_f - lf * s2, lw * lw * sigma_w * sigma_w - lw * s2};
  return variance_report(g, lambda, co, /*with_cov=*/false, opts);
}

std::pair<Vec, Vec> deterministic_bias(const ExpectedNetwork& en, const Vec& mu_star,
                                       const Vec& phi_star) {
  const NodeAssignment& a = en.assignment();
  if (mu_star.size() != a.n_groups || phi_star.size() != a.n_groups)
    throw std::invalid_argument("deterministic_bias: group mean length mismatch");
  const RidgePenalties& lambda = en.penalties();
  if (!lambda.strictly_positive())
    throw std::invalid_argument("deterministic_bias: penalties must be strictly positive");
  const Index n = en.n_workers();
  const Index p = en.n_firms();
  Vec zw_mu(n), zf_phi(p);
  for (Index i = 0; i < n; ++i) zw_mu[i] = mu_star[a.worker_type[i]];
  for (Index j = 0; j < p; ++j) zf_phi[j] = phi_star[a.firm_type[j]];
  Vec shift_f = en.expected_firm_degrees().array() + lambda.firm;
  Vec shift_w = en.expected_worker_degrees().array() + lambda.worker;

  Vec rhs_w = -lambda.worker * zw_mu + lambda.firm * en.b_apply(zf_phi.cwiseQuotient(shift_f));
  Vec rhs_f = -lambda.firm * zf_phi + lambda.worker * en.bt_apply(zw_mu.cwiseQuotient(shift_w));
  return {en.unnormalized_laplacian_inverse_apply(Side::workers, rhs_w),
          en.unnormalized_laplacian_inverse_apply(Side::firms, rhs_f)};
}

namespace {

// Exact diagonals of the deterministic variances through the rank-K factors:
// Ltilde^{-1} = Q + U H U' with Q diagonal and single-nonzero factor rows, so
// every diagonal entry is K x K arithmetic.
struct FactoredSide {
  Vec q;       // 1/(expected degree + lambda)
  Mat h;       // Woodbury core
  Mat se;      // U'U with U the sqrt-scaled factor
  Mat d;       // U' Uhat coupling to the expected-adjacency factor
  Mat g_b;     // core of B D^{-2} B' (or transpose side)
  std::function<double(Index)> u_coef;     // nonzero of row i of U
  std::function<double(Index)> uhat_coef;  // nonzero of row i of Uhat
  std::function<int(Index)> group;
};

Vec factored_variance_diag(const FactoredSide& f, double s2, double a, double bcoef, Index size) {
  const Mat hseh = f.h * f.se * f.h;
  const Mat hd = f.h * f.d;
  Vec out(size);
  const int kk = static_cast<int>(f.h.rows());
  Vec w(kk);
  for (Index i = 0; i < size; ++i) {
    const int k = f.group(i);
    const double u = f.u_coef(i);
    const double q = f.q[i];
    const double r = u * u * f.h(k, k);
    const double sterm = u * u * hseh(k, k);
    w = (u * hd.row(k)).transpose();
    w[k] += q * f.uhat_coef(i);
    out[i] = s2 * (q + r) + a * (q * q + 2.0 * q * r + sterm) + bcoef * w.dot(f.g_b * w);
  }
  return out;
}

}  // namespace

MomentReport deterministic_variance(const ExpectedNetwork& en, double sigma, double sigma_w,
                                    double sigma_f, const MomentOptions& opts) {
  const RidgePenalties& lambda = en.penalties();
  if (!lambda.strictly_positive())
    throw std::invalid_argument("deterministic_variance: penalties must be strictly positive");
  const Index n = en.n_workers();
  const Index p = en.n_firms();
  const double s2 = sigma * sigma;
  const double lw = lambda.worker, lf = lambda.firm;
  const double a_w = lw * lw * sigma_w * sigma_w - lw * s2;
  const double b_w = lf * lf * sigma_f * sigma_f - lf * s2;
  const double a_f = lf * lf * sigma_f * sigma_f - lf * s2;
  const double b_f = lw * lw * sigma_w * sigma_w - lw * s2;

  MomentReport rep;
  rep.deterministic = true;
  const bool below_cap = std::max(n, p) <= opts.dense_cap;
  if (opts.full && !below_cap)
    throw std::invalid_argument("deterministic_variance: full matrices requested above the dense cap");

  Vec shift_w = en.expected_worker_degrees().array() + lw;
  Vec shift_f = en.expected_firm_degrees().array() + lf;

  if (opts.full) {
    auto inv_w = [&](const Vec& x) { return en.unnormalized_laplacian_inverse_apply(Side::workers, x); };
    auto inv_f = [&](const Vec& x) { return en.unnormalized_laplacian_inverse_apply(Side::firms, x); };
    Mat lw_inv = densify(symmetric_operator(n, inv_w));
    Mat lf_inv = densify(symmetric_operator(p, inv_f));
    Mat mid_w = b_w * densify(symmetric_operator(n, [&](const Vec& x) {
                  return en.b_apply(en.bt_apply(x).cwiseQuotient(shift_f.array().square().matrix()));
                }));
    mid_w.diagonal().array() += a_w;
    rep.var_mu = s2 * lw_inv + lw_inv * mid_w * lw_inv;
    Mat mid_f = b_f * densify(symmetric_operator(p, [&](const Vec& x) {
                  return en.bt_apply(en.b_apply(x).cwiseQuotient(shift_w.array().square().matrix()));
                }));
    mid_f.diagonal().array() += a_f;
    rep.var_phi = s2 * lf_inv + lf_inv * mid_f * lf_inv;
    rep.var_mu_diag = rep.var_mu.diagonal();
    rep.var_phi_diag = rep.var_phi.diagonal();
    rep.full = true;
    return rep;
  }

  const NodeAssignment& a = en.assignment();
  const Mat& c = en.affinity();
  const int kk = a.n_groups;

  // worker side
  {
    FactoredSide f;
    f.q = shift_w.cwiseInverse();
    f.h = en.core_w();
    f.se = Mat::Zero(kk, kk);
    f.d = Mat::Zero(kk, kk);
    Mat t_f = Mat::Zero(kk, kk);
    for (int k = 0; k < kk; ++k) {
      const int nk = a.worker_group_count[k];
      if (nk == 0) continue;
      const double shift = c.row(k).sum() / nk + lw;
      const double om = en.omega()[k];
      f.se(k, k) = nk * om * om / shift;
      f.d(k, k) = om / std::sqrt(shift);
    }
    for (Index j = 0; j < p; ++j) {
      const int l = a.firm_type[j];
      t_f(l, l) += a.theta[j] * a.theta[j] / (shift_f[j] * shift_f[j]);
    }
    f.g_b = c * t_f * c.transpose();
    f.u_coef = [&](Index i) {
      const int k = a.worker_type[i];
      return en.omega()[k] / std::sqrt(shift_w[i]);
    };
    f.uhat_coef = [&](Index i) { return 1.0 / a.worker_group_count[a.worker_type[i]]; };
    f.group = [&](Index i) { return a.worker_type[i]; };
    rep.var_mu_diag = factored_variance_diag(f, s2, a_w, b_w, n);
  }

  // firm side
  {
    FactoredSide f;
    f.q = shift_f.cwiseInverse();
    f.h = en.core_f();
    f.se = Mat::Zero(kk, kk);
    f.d = Mat::Zero(kk, kk);
    Mat t_w = Mat::Zero(kk, kk);
    for (Index j = 0; j < p; ++j) {
      const int l = a.firm_type[j];
      const double ph = en.phi()[j];
      f.se(l, l) += ph * ph / shift_f[j];
      f.d(l, l) += ph * a.theta[j] / std::sqrt(shift_f[j]);
    }
    for (int k = 0; k < kk; ++k) {
      const int nk = a.worker_group_count[k];
      if (nk == 0) continue;
      const double shift = c.row(k).sum() / nk + lw;
      t_w(k, k) = 1.0 / (nk * shift * shift);
    }
    f.g_b = c.transpose() * t_w * c;
    f.u_coef = [&](Index j) { return en.phi()[j] / std::sqrt(shift_f[j]); };
    f.uhat_coef = [&](Index j) { return a.theta[j]; };
    f.group = [&](Index j) { return a.firm_type[j]; };
    rep.var_phi_diag = factored_variance_diag(f, s2, a_f, b_f, p);
  }
  return rep;
}

namespace {

struct QuadraticForms {
  // Q_w = D_w - dw dw'/N on the worker block, Q_f likewise on the firm block,
  // Q_c couples the blocks through 2 mu' (B - dw df'/N) phi.
  const SpMat* b;
  Vec dw, df;
  double n_obs;

  std::array<std::pair<Vec, Vec>, 3> apply(const Vec& zw, const Vec& zf) const {
    std::array<std::pair<Vec, Vec>, 3> out;
    out[0] = {dw.cwiseProduct(zw) - dw * (dw.dot(zw) / n_obs), Vec::Zero(zf.size())};
    out[1] = {Vec::Zero(zw.size()), df.cwiseProduct(zf) - df * (df.dot(zf) / n_obs)};
    out[2] = {*b * zf - dw * (df.dot(zf) / n_obs), b->transpose() * zw - df * (dw.dot(zw) / n_obs)};
    return out;
  }
};

}  // namespace

DebiasResult debiased_quadratics(const OutcomePanel& panel, const RidgeFit& ols,
                                 const DebiasOptions& opts) {
  panel.validate();
  if (ols.pinned_firm < 0)
    throw std::invalid_argument("debiased_quadratics: requires an OLS fit with a pinned firm");
  const Index n = panel.graph.n_workers();
  const Index p = panel.graph.n_firms();
  const auto n_obs = static_cast<double>(panel.n_obs());
  const std::int64_t rank = n + p - 1;
  DebiasResult res;
  res.dof = panel.n_obs() - rank;
  if (res.dof <= 0)
    throw std::invalid_argument("debiased_quadratics: nonpositive residual degrees of freedom");
  res.sigma2_hat = ols.residuals.squaredNorm() / static_cast<double>(res.dof);

  // plug-in components, population (1/N) convention
  Vec x(panel.n_obs()), z(panel.n_obs());
  for (Index k = 0; k < panel.n_obs(); ++k) {
    x[k] = ols.mu[panel.obs_worker[k]];
    z[k] = ols.phi[panel.obs_firm[k]];
  }
  const double xm = x.mean(), zm = z.mean(), ym = panel.y.mean();
  res.plugin[0] = (x.array() - xm).square().mean();
  res.plugin[1] = (z.array() - zm).square().mean();
  res.plugin[2] = 2.0 * ((x.array() - xm) * (z.array() - zm)).mean();
  res.total_variance = (panel.y.array() - ym).square().mean();

  QuadraticForms q{&panel.graph.adjacency(), panel.graph.worker_degrees(),
                   panel.graph.firm_degrees(), n_obs};

  if (std::max(n, p) <= opts.dense_cap) {
    // exact: dense pseudo-inverse of the pinned normal equations
    Mat xtx = Mat::Zero(n + p, n + p);
    xtx.topLeftCorner(n, n).diagonal() = panel.graph.worker_degrees();
    xtx.bottomRightCorner(p, p).diagonal() = panel.graph.firm_degrees();
    xtx.topRightCorner(n, p) = Mat(panel.graph.adjacency());
    xtx.bottomLeftCorner(p, n) = xtx.topRightCorner(n, p).transpose();
    const Index pin = n + ols.pinned_firm;
    Mat red(n + p - 1, n + p - 1);
    std::vector<Index> keep;
    keep.reserve(n + p - 1);
    for (Index i = 0; i < n + p; ++i)
      if (i != pin) keep.push_back(i);
    for (Index r = 0; r < static_cast<Index>(keep.size()); ++r)
      for (Index c = 0; c < static_cast<Index>(keep.size()); ++c)
        red(r, c) = xtx(keep[r], keep[c]);
    Eigen::LLT<Mat> llt(red);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("debiased_quadratics: rank deficiency beyond the pinned column");
    Mat sred = llt.solve(Mat::Identity(red.rows(), red.cols()));
    Mat s = Mat::Zero(n + p, n + p);
    for (Index r = 0; r < static_cast<Index>(keep.size()); ++r)
      for (Index c = 0; c < static_cast<Index>(keep.size()); ++c)
        s(keep[r], keep[c]) = sred(r, c);

    const auto& dw = panel.graph.worker_degrees();
    const auto& df = panel.graph.firm_degrees();
    Mat s_ww = s.topLeftCorner(n, n);
    Mat s_ff = s.bottomRightCorner(p, p);
    Mat s_wf = s.topRightCorner(n, p);
    res.trace[0] = dw.dot(s_ww.diagonal()) - dw.dot(s_ww * dw) / n_obs;
    res.trace[1] = df.dot(s_ff.diagonal()) - df.dot(s_ff * df) / n_obs;
    double cross = 0.0;
    const SpMat& b = panel.graph.adjacency();
    for (Index j = 0; j < b.outerSize(); ++j)
      for (SpMat::InnerIterator it(b, j); it; ++it) cross += it.value() * s_wf(it.row(), it.col());
    res.trace[2] = 2.0 * (cross - df.dot(s_wf.transpose() * dw) / n_obs);
    res.exact_trace = true;
  } else {
    // Hutchinson probes with a fixed seed
    NormalEquations ne(panel.graph, {0.0, 0.0}, {}, ols.pinned_firm);
    RngStream s(stream_key(opts.probe_seed, "debias_probe"));
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    for (int t = 0; t < opts.probes; ++t) {
      Vec zw(n), zf(p);
      for (Index i = 0; i < n; ++i) zw[i] = s.next_sign();
      for (Index j = 0; j < p; ++j) zf[j] = s.next_sign();
      auto [sw, sf] = ne.solve(zw, zf);
      auto qs = q.apply(sw, sf);
      for (int m = 0; m < 3; ++m) acc[m] += zw.dot(qs[m].first) + zf.dot(qs[m].second);
    }
    for (int m = 0; m < 3; ++m) res.trace[m] = acc[m] / opts.probes;
    res.exact_trace = false;
  }

  double corrected_sum = 0.0;
  for (int m = 0; m < 3; ++m) {
    res.corrected[m] = res.plugin[m] - res.sigma2_hat * res.trace[m] / n_obs;
    res.shares[m] = res.corrected[m] / res.total_variance;
    corrected_sum += res.shares[m];
  }
  res.shares[3] = 1.0 - corrected_sum;
  return res;
}

}  // namespace ridgefe
