#include "ridgefe/decomposition.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "ridgefe/rng.hpp"

namespace ridgefe {

VarianceDecomposition decompose(const OutcomePanel& panel, const Vec& mu_eff,
                                const Vec& phi_eff) {
  panel.validate();
  if (mu_eff.size() != panel.graph.n_workers() || phi_eff.size() != panel.graph.n_firms())
    throw std::invalid_argument("decompose: fit does not cover all panel nodes");
  const Index n_obs = panel.n_obs();
  Vec x(n_obs), z(n_obs);
  for (Index k = 0; k < n_obs; ++k) {
    x[k] = mu_eff[panel.obs_worker[k]];
    z[k] = phi_eff[panel.obs_firm[k]];
  }
  const double ym = panel.y.mean();
  const double vy = (panel.y.array() - ym).square().mean();
  if (vy <= 0.0) throw std::invalid_argument("decompose: zero outcome variance");
  const double xm = x.mean(), zm = z.mean();
  const double vx = (x.array() - xm).square().mean();
  const double vz = (z.array() - zm).square().mean();
  const double cxz = ((x.array() - xm) * (z.array() - zm)).mean();

  VarianceDecomposition d;
  d.total_variance = vy;
  d.share_worker = vx / vy;
  d.share_firm = vz / vy;
  d.share_2cov = 2.0 * cxz / vy;
  d.share_residual = 1.0 - d.share_worker - d.share_firm - d.share_2cov;
  d.fe_correlation = vx > 0.0 && vz > 0.0 ? cxz / std::sqrt(vx * vz) : 0.0;
  return d;
}

VarianceDecomposition decompose(const OutcomePanel& panel, const RidgeFit& fit) {
  return decompose(panel, fit.mu, fit.phi);
}

OosMse out_of_sample_mse(const OutcomePanel& train, const RidgeFit& fit,
                         const OutcomePanel& test) {
  if (fit.mu.size() != train.graph.n_workers() || fit.phi.size() != train.graph.n_firms())
    throw std::invalid_argument("out_of_sample_mse: fit does not match the training panel");
  std::unordered_map<Index, Index> wmap, fmap;
  wmap.reserve(train.worker_ids.size());
  fmap.reserve(train.firm_ids.size());
  auto id_of = [](const std::vector<Index>& ids, Index local) {
    return ids.empty() ? local : ids[local];
  };
  for (Index i = 0; i < train.graph.n_workers(); ++i) wmap.emplace(id_of(train.worker_ids, i), i);
  for (Index j = 0; j < train.graph.n_firms(); ++j) fmap.emplace(id_of(train.firm_ids, j), j);

  OosMse res;
  double sse = 0.0;
  for (Index k = 0; k < test.n_obs(); ++k) {
    const auto wi = wmap.find(id_of(test.worker_ids, test.obs_worker[k]));
    const auto fj = fmap.find(id_of(test.firm_ids, test.obs_firm[k]));
    if (wi == wmap.end() || fj == fmap.end()) {
      ++res.dropped;
      continue;
    }
    const double e = test.y[k] - fit.mu[wi->second] - fit.phi[fj->second];
    sse += e * e;
    ++res.used;
  }
  if (res.used == 0)
    throw std::invalid_argument("out_of_sample_mse: no usable test observations");
  res.mse = sse / static_cast<double>(res.used);
  return res;
}

double effect_recovery_mse(const OutcomePanel& panel, const RidgeFit& fit,
                           const FixedEffectDgp& dgp) {
  const Index n = panel.graph.n_workers();
  const Index p = panel.graph.n_firms();
  auto id_of = [](const std::vector<Index>& ids, Index local) {
    return ids.empty() ? local : ids[local];
  };
  double sse = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double d = dgp.mu[id_of(panel.worker_ids, i)] - fit.mu[i];
    sse += d * d;
  }
  for (Index j = 0; j < p; ++j) {
    const double d = dgp.phi[id_of(panel.firm_ids, j)] - fit.phi[j];
    sse += d * d;
  }
  return sse / static_cast<double>(n + p);
}

OutcomePanel make_test_panel(const NodeAssignment& a, const Mat& affinity,
                             const FixedEffectDgp& dgp, std::uint64_t seed) {
  BipartiteGraph g = sample_network(a, affinity, seed);
  Subgraph sub = largest_component(g);
  return generate_outcomes(sub, dgp, seed);
}

CvResult cross_validate(const OutcomePanel& train, const OutcomePanel& test,
                        std::span<const std::pair<double, double>> grid, const CvOptions& opts) {
  if (grid.empty()) throw std::invalid_argument("cross_validate: empty grid");
  for (const auto& [lw, lf] : grid)
    if (lw <= 0.0 || lf <= 0.0)
      throw std::invalid_argument("cross_validate: grid penalties must be strictly positive");

  CvResult res;
  res.grid.assign(grid.begin(), grid.end());
  res.mse.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());

  auto evaluate = [&](std::size_t g) {
    try {
      RidgeFit fit = ridge_fit(train, {grid[g].first, grid[g].second}, opts.solver);
      if (!fit.ok) return;  // invalid grid point
      res.mse[g] = out_of_sample_mse(train, fit, test).mse;
    } catch (const std::exception&) {
      // invalid grid point, left as NaN
    }
  };
  if (opts.workers > 1) {
    std::vector<std::future<void>> tasks;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < opts.workers; ++w)
      tasks.push_back(std::async(std::launch::async, [&]() {
        for (std::size_t g = next.fetch_add(1); g < grid.size(); g = next.fetch_add(1)) evaluate(g);
      }));
    for (auto& t : tasks) t.get();
  } else {
    for (std::size_t g = 0; g < grid.size(); ++g) evaluate(g);
  }

  bool any = false;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (std::isnan(res.mse[g])) continue;
    if (!any) {
      res.best = g;
      any = true;
      continue;
    }
    const double cur = res.mse[res.best];
    const auto penalty_sum = [&](std::size_t k) { return res.grid[k].first + res.grid[k].second; };
    if (res.mse[g] < cur ||
        (res.mse[g] == cur && penalty_sum(g) > penalty_sum(res.best)))
      res.best = g;
  }
  if (!any) throw std::runtime_error("cross_validate: every grid point failed");

  const double avg_w =
      static_cast<double>(train.graph.n_obs()) / static_cast<double>(train.graph.n_workers());
  const double avg_f =
      static_cast<double>(train.graph.n_obs()) / static_cast<double>(train.graph.n_firms());
  res.normalized_w = res.grid[res.best].first / avg_w;
  res.normalized_f = res.grid[res.best].second / avg_f;
  return res;
}

namespace {

// Expected-network moments restricted to a panel's node set: expected degrees,
// the expected adjacency product, and the expected test observation count all
// sum p_ij over panel pairs only (p_ij keeps the universe group sizes).
struct RestrictedMoments {
  const NodeAssignment* a;
  Mat c;
  std::vector<Index> wids, fids;        // universe ids of panel nodes
  Vec theta_sum_by_group;               // over panel firms
  Vec workers_by_group;                 // panel worker counts per type
  Vec exp_deg_w, exp_deg_f;             // restricted expected degrees
  double expected_obs = 0.0;

  RestrictedMoments(const OutcomePanel& panel, const NodeAssignment& assign, const Mat& aff)
      : a(&assign), c(aff) {
    auto id_of = [](const std::vector<Index>& ids, Index local) {
      return ids.empty() ? local : ids[local];
    };
    const Index n = panel.graph.n_workers(), p = panel.graph.n_firms();
    wids.resize(n);
    fids.resize(p);
    for (Index i = 0; i < n; ++i) wids[i] = id_of(panel.worker_ids, i);
    for (Index j = 0; j < p; ++j) fids[j] = id_of(panel.firm_ids, j);
    const int kk = a->n_groups;
    theta_sum_by_group = Vec::Zero(kk);
    workers_by_group = Vec::Zero(kk);
    for (Index j = 0; j < p; ++j)
      theta_sum_by_group[a->firm_type[fids[j]]] += a->theta[fids[j]];
    for (Index i = 0; i < n; ++i) workers_by_group[a->worker_type[wids[i]]] += 1.0;

    exp_deg_w.resize(n);
    for (Index i = 0; i < n; ++i) {
      const int k = a->worker_type[wids[i]];
      exp_deg_w[i] = c.row(k).dot(theta_sum_by_group) / a->worker_group_count[k];
    }
    exp_deg_f.resize(p);
    for (Index j = 0; j < p; ++j) {
      const Index ju = fids[j];
      const int l = a->firm_type[ju];
      double s = 0.0;
      for (int k = 0; k < kk; ++k)
        s += workers_by_group[k] * c(k, l) / a->worker_group_count[k];
      exp_deg_f[j] = a->theta[ju] * s;
    }
    expected_obs = exp_deg_w.sum();
  }

  Vec b_apply(const Vec& x) const {
    const int kk = a->n_groups;
    Vec t = Vec::Zero(kk);
    for (Index j = 0; j < x.size(); ++j) t[a->firm_type[fids[j]]] += a->theta[fids[j]] * x[j];
    Vec s = c * t;
    Vec out(static_cast<Index>(wids.size()));
    for (Index i = 0; i < out.size(); ++i) {
      const int k = a->worker_type[wids[i]];
      out[i] = s[k] / a->worker_group_count[k];
    }
    return out;
  }

  /// Bernoulli test network over the panel pairs, same p_ij, per-block streams.
  BipartiteGraph sample(std::uint64_t seed) const {
    const int kk = a->n_groups;
    std::vector<std::vector<Index>> workers_by_type(kk), firms_by_type(kk);
    for (Index i = 0; i < static_cast<Index>(wids.size()); ++i)
      workers_by_type[a->worker_type[wids[i]]].push_back(i);
    for (Index j = 0; j < static_cast<Index>(fids.size()); ++j)
      firms_by_type[a->firm_type[fids[j]]].push_back(j);
    std::vector<Edge> edges;
    for (int k = 0; k < kk; ++k) {
      const auto& wk = workers_by_type[k];
      if (wk.empty()) continue;
      for (int l = 0; l < kk; ++l) {
        if (c(k, l) == 0.0) continue;
        RngStream rng(stream_key(seed, "test_edges", static_cast<std::uint64_t>(k),
                                 static_cast<std::uint64_t>(l)));
        for (Index j : firms_by_type[l]) {
          const double prob =
              std::min(1.0, a->theta[fids[j]] * c(k, l) / a->worker_group_count[k]);
          if (prob <= 0.0) continue;
          if (prob >= 1.0) {
            for (Index i : wk) edges.push_back({i, j, 1.0});
            continue;
          }
          std::int64_t pos = rng.next_geometric(prob);
          while (pos < static_cast<std::int64_t>(wk.size())) {
            edges.push_back({wk[pos], j, 1.0});
            pos += 1 + rng.next_geometric(prob);
          }
        }
      }
    }
    return BipartiteGraph::from_edges(static_cast<Index>(wids.size()),
                                      static_cast<Index>(fids.size()), edges);
  }
};

}  // namespace

SseBreakdown prediction_sse(const OutcomePanel& train, const NodeAssignment& a,
                            const Mat& affinity, const FixedEffectDgp& dgp,
                            const RidgePenalties& lambda, const SseOptions& opts) {
  train.validate();
  const Index n = train.graph.n_workers();
  const Index p = train.graph.n_firms();
  if (std::max(n, p) > opts.dense_cap)
    throw std::invalid_argument("prediction_sse: instance exceeds the dense cap");

  RestrictedMoments rm(train, a, affinity);

  // group-mean vectors on panel nodes
  Vec zw_mu(n), zf_phi(p);
  for (Index i = 0; i < n; ++i) zw_mu[i] = dgp.mu_star[a.worker_type[rm.wids[i]]];
  for (Index j = 0; j < p; ++j) zf_phi[j] = dgp.phi_star[a.firm_type[rm.fids[j]]];

  auto [b_mu, b_phi] = insample_bias(train.graph, lambda, zw_mu, zf_phi);
  MomentOptions mopts;
  mopts.dense_cap = opts.dense_cap;
  MomentReport var =
      random_beta_variance(train.graph, lambda, dgp.sigma, dgp.sigma_w, dgp.sigma_f, mopts);

  SseBreakdown out;
  out.sigma2_term = dgp.sigma * dgp.sigma * rm.expected_obs;
  out.bias_w = b_mu.dot(rm.exp_deg_w.cwiseProduct(b_mu));
  out.trace_w = rm.exp_deg_w.dot(var.var_mu_diag);
  out.bias_f = b_phi.dot(rm.exp_deg_f.cwiseProduct(b_phi));
  out.trace_f = rm.exp_deg_f.dot(var.var_phi_diag);
  out.cross_bias = 2.0 * b_mu.dot(rm.b_apply(b_phi));

  // C_lambda by Monte Carlo over joint (U, Uw, Uf) draws, network fixed;
  // only <B, C_lambda> is accumulated, never the n x p matrix.
  NormalEquations ne(train.graph, lambda, opts.solver);
  const int rc = std::max(2, opts.cov_draws);
  Mat xs(n, rc), zs(p, rc);
  for (int r = 0; r < rc; ++r) {
    const std::uint64_t rs = stream_key(opts.seed, "sse_cov", static_cast<std::uint64_t>(r));
    RngStream sw(stream_key(rs, "uw")), sf(stream_key(rs, "uf")), su(stream_key(rs, "u"));
    Vec mu(n), phi(p);
    for (Index i = 0; i < n; ++i) mu[i] = zw_mu[i] + dgp.sigma_w * sw.next_normal();
    for (Index j = 0; j < p; ++j) phi[j] = zf_phi[j] + dgp.sigma_f * sf.next_normal();
    Vec rw = Vec::Zero(n), rf = Vec::Zero(p);
    for (Index k = 0; k < train.n_obs(); ++k) {
      const double y = mu[train.obs_worker[k]] + phi[train.obs_firm[k]] +
                       dgp.sigma * su.next_normal();
      rw[train.obs_worker[k]] += y;
      rf[train.obs_firm[k]] += y;
    }
    auto [mu_hat, phi_hat] = ne.solve(rw, rf);
    xs.col(r) = mu_hat - mu;
    zs.col(r) = phi_hat - phi;
  }
  Vec xbar = xs.rowwise().mean(), zbar = zs.rowwise().mean();
  double cross = 0.0;
  for (int r = 0; r < rc; ++r)
    cross += (xs.col(r) - xbar).dot(rm.b_apply(zs.col(r) - zbar));
  out.cross_trace = 2.0 * cross / (rc - 1);
  out.cov_draws = rc;

  out.total = out.sigma2_term + out.bias_w + out.trace_w + out.cross_bias + out.cross_trace +
              out.bias_f + out.trace_f;

  if (opts.mc_draws > 0) {
    double acc = 0.0, acc2 = 0.0;
    for (int r = 0; r < opts.mc_draws; ++r) {
      const std::uint64_t rs = stream_key(opts.seed, "sse_mc", static_cast<std::uint64_t>(r));
      RngStream sw(stream_key(rs, "uw")), sf(stream_key(rs, "uf")), su(stream_key(rs, "u")),
          st(stream_key(rs, "ut"));
      Vec mu(n), phi(p);
      for (Index i = 0; i < n; ++i) mu[i] = zw_mu[i] + dgp.sigma_w * sw.next_normal();
      for (Index j = 0; j < p; ++j) phi[j] = zf_phi[j] + dgp.sigma_f * sf.next_normal();
      Vec rw = Vec::Zero(n), rf = Vec::Zero(p);
      for (Index k = 0; k < train.n_obs(); ++k) {
        const double y = mu[train.obs_worker[k]] + phi[train.obs_firm[k]] +
                         dgp.sigma * su.next_normal();
        rw[train.obs_worker[k]] += y;
        rf[train.obs_firm[k]] += y;
      }
      auto [mu_hat, phi_hat] = ne.solve(rw, rf);
      BipartiteGraph tg = rm.sample(rs);
      double sse = 0.0;
      const SpMat& tb = tg.adjacency();
      for (Index j = 0; j < tb.outerSize(); ++j)
        for (SpMat::InnerIterator it(tb, j); it; ++it) {
          const auto d = static_cast<std::int64_t>(std::llround(it.value()));
          for (std::int64_t s = 0; s < d; ++s) {
            const double e = mu[it.row()] + phi[it.col()] + dgp.sigma * st.next_normal() -
                             mu_hat[it.row()] - phi_hat[it.col()];
            sse += e * e;
          }
        }
      acc += sse;
      acc2 += sse * sse;
    }
    out.mc_draws = opts.mc_draws;
    out.mc_sse = acc / opts.mc_draws;
    if (opts.mc_draws > 1) {
      const double var = (acc2 - acc * acc / opts.mc_draws) / (opts.mc_draws - 1);
      out.mc_se = std::sqrt(std::max(0.0, var) / opts.mc_draws);
    }
  }
  return out;
}

DensityReport density_report(std::span<const double> values, int grid_points) {
  if (values.size() < 2)
    throw std::invalid_argument("density_report: need at least two values");
  const auto m = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / m;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (m - 1.0));

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * (m - 1.0);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);

  DensityReport rep;
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  rep.bandwidth = 0.9 * spread * std::pow(m, -0.2);
  if (rep.bandwidth <= 0.0) {
    rep.point_mass = true;
    rep.x = Vec::Constant(1, sorted.front());
    rep.density = Vec::Constant(1, std::numeric_limits<double>::infinity());
    return rep;
  }
  const double lo = sorted.front() - 3.0 * rep.bandwidth;
  const double hi = sorted.back() + 3.0 * rep.bandwidth;
  rep.x.resize(grid_points);
  rep.density.resize(grid_points);
  const double inv_norm = 1.0 / (m * rep.bandwidth * std::sqrt(2.0 * std::numbers::pi));
  for (int gix = 0; gix < grid_points; ++gix) {
    const double x = lo + (hi - lo) * gix / (grid_points - 1);
    double acc = 0.0;
    for (double v : sorted) {
      const double u = (x - v) / rep.bandwidth;
      acc += std::exp(-0.5 * u * u);
    }
    rep.x[gix] = x;
    rep.density[gix] = acc * inv_norm;
  }
  return rep;
}

}  // namespace ridgefe
