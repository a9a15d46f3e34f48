#pragma once

#include <Eigen/SparseCholesky>

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ridgefe/graph.hpp"
#include "ridgefe/sbm.hpp"

namespace ridgefe {

/// Outcome vector attached to a graph, one row per observation in canonical
/// (worker, firm, spell) order. The dummy design matrices W and F are never
/// materialized; obs_worker/obs_firm index the rows. worker_ids/firm_ids map
/// panel-local node indices back to the universe the effects were drawn on
/// (identity unless the panel came from a component selection).
struct OutcomePanel {
  BipartiteGraph graph;
  Vec y;
  std::vector<Index> obs_worker;
  std::vector<Index> obs_firm;
  std::vector<Index> worker_ids;
  std::vector<Index> firm_ids;

  Index n_obs() const { return static_cast<Index>(obs_worker.size()); }
  void validate() const;
};

/// Builds the canonical observation index for a graph (y filled later).
OutcomePanel make_panel(BipartiteGraph graph, Vec y);

/// Per-worker and per-firm outcome sums W'Y and F'Y.
Vec worker_sums(const OutcomePanel& panel);
Vec firm_sums(const OutcomePanel& panel);

/// Random-effects data generating process: mu = Zw mu* + Uw, phi = Zf phi* + Uf,
/// with realized draws stored on the full node universe.
struct FixedEffectDgp {
  Vec mu_star;
  Vec phi_star;
  double sigma = 0.0;
  double sigma_w = 0.0;
  double sigma_f = 0.0;
  Vec mu;   // realized, length n0
  Vec phi;  // realized, length p0
};

FixedEffectDgp draw_effects(const NodeAssignment& a, Vec mu_star, Vec phi_star, double sigma,
                            double sigma_w, double sigma_f, std::uint64_t seed);

/// Paper simulation preset: mu*_k = k-1 (sd sqrt(2)), phi*_l = 0.4(l-1) (sd 1).
/// The residual scale reproducing the published variance decompositions is
/// sqrt(3); see the README notes on the preset.
FixedEffectDgp paper_effects(const NodeAssignment& a, std::uint64_t seed);

/// y_ijs = mu_i + phi_j + sigma N(0,1), deterministic in (dgp, seed).
OutcomePanel generate_outcomes(const BipartiteGraph& g, std::vector<Index> worker_ids,
                               std::vector<Index> firm_ids, const FixedEffectDgp& dgp,
                               std::uint64_t seed);
OutcomePanel generate_outcomes(const Subgraph& sub, const FixedEffectDgp& dgp, std::uint64_t seed);

enum class SolveMethod { automatic, cholesky, conjugate_gradient };

struct SolverOptions {
  SolveMethod method = SolveMethod::automatic;
  double cg_tol = 1e-10;  // relative residual
  int cg_max_iter = 20000;
  std::int64_t fill_budget = 200'000'000;  // projection nnz above which CG is used
};

struct SolverInfo {
  std::string method;
  int iterations = 0;            // CG iterations (0 for direct)
  std::int64_t factor_nnz = 0;   // Cholesky factor fill
  double rel_residual = 0.0;     // solver's own residual
  bool converged = true;
};

/// Blockwise normal-equation solver: eliminates the worker block and solves
/// the p x p firm Schur system Ltilde_f,lambda. One factorization serves every
/// right-hand side, so bias/variance/debias reuse a single instance.
/// With pinned_firm >= 0 that firm's effect is fixed at zero (OLS normalization).
class NormalEquations {
 public:
  NormalEquations(const BipartiteGraph& g, RidgePenalties lambda,
                  SolverOptions opts = {}, Index pinned_firm = -1);

  /// Solves [D_w,l  B; B'  D_f,l] (x_w; x_f) = (rhs_w; rhs_f).
  std::pair<Vec, Vec> solve(const Vec& rhs_w, const Vec& rhs_f) const;
  Vec solve_worker(const Vec& v) const;  // Ltilde_w^{-1} v
  Vec solve_firm(const Vec& v) const;    // Ltilde_f^{-1} v

  /// Relative residual of the full normal equations at a candidate solution.
  double residual(const Vec& rhs_w, const Vec& rhs_f, const Vec& xw, const Vec& xf) const;

  const SolverInfo& info() const { return info_; }
  const RidgePenalties& penalties() const { return lambda_; }
  Index pinned_firm() const { return pinned_firm_; }

 private:
  std::shared_ptr<const SpMat> b_;
  Vec dw_, df_;  // shifted degrees
  RidgePenalties lambda_;
  Index pinned_firm_;
  SolverOptions opts_;
  std::shared_ptr<Eigen::SimplicialLDLT<SpMat>> factor_;
  Vec cg_diag_;
  mutable SolverInfo info_;

  Vec schur_apply(const Vec& x) const;
  Vec schur_solve(Vec rhs) const;
};

struct RidgeFit {
  Vec mu;
  Vec phi;
  RidgePenalties penalties;
  Vec residuals;
  SolverInfo solver;
  double normal_eq_rel_residual = 0.0;
  Index pinned_firm = -1;  // -1 for ridge fits
  bool ok = true;          // false when the normal-equation residual check fails
};

RidgeFit ridge_fit(const OutcomePanel& panel, const RidgePenalties& lambda,
                   const SolverOptions& opts = {});

/// OLS on a single connected component with all degrees positive; the lowest
/// firm index is pinned to zero. Fitted values are invariant to the pin.
RidgeFit ols_fit(const OutcomePanel& panel, const SolverOptions& opts = {});

/// E(mu_hat - mu | X, beta) and E(phi_hat - phi | X, beta); exact, two solves.
std::pair<Vec, Vec> insample_bias(const BipartiteGraph& g, const RidgePenalties& lambda,
                                  const Vec& mu, const Vec& phi);

struct MomentReport {
  Vec bias_mu, bias_phi;
  Vec var_mu_diag, var_phi_diag;
  Mat var_mu, var_phi, cov_mu_phi;  // filled only when full && below cap
  bool deterministic = false;       // expected network (fraktur objects)
  bool full = false;
  bool diag_estimated = false;      // probing estimator used for diagonals
};

struct MomentOptions {
  Index dense_cap = 2000;
  bool full = true;   // request full matrices (rejected above the cap)
  int probes = 64;
  std::uint64_t probe_seed = 0x9d2c5680u;
};

/// Fixed-beta conditional variances, all three second-moment displays.
MomentReport insample_variance(const BipartiteGraph& g, const RidgePenalties& lambda,
                               double sigma, const MomentOptions& opts = {});

/// Random-beta variances V_{w,lambda}, V_{f,lambda}.
MomentReport random_beta_variance(const BipartiteGraph& g, const RidgePenalties& lambda,
                                  double sigma, double sigma_w, double sigma_f,
                                  const MomentOptions& opts = {});

/// Deterministic-equivalent bias vectors via rank-K inverse applies.
std::pair<Vec, Vec> deterministic_bias(const ExpectedNetwork& en, const Vec& mu_star,
                                       const Vec& phi_star);

/// Deterministic-equivalent variances; full matrices below the dense cap,
/// exact O((n+p)K^2) diagonals otherwise.
MomentReport deterministic_variance(const ExpectedNetwork& en, double sigma, double sigma_w,
                                    double sigma_f, const MomentOptions& opts = {});

struct DebiasOptions {
  Index dense_cap = 2000;
  int probes = 64;
  std::uint64_t probe_seed = 0x6c078965u;
};

/// Homoscedastic plug-in debiasing of the variance-decomposition quadratics:
/// corrected_q = plugin_q - sigma2_hat tr(Q S)/N with S the pinned-OLS
/// parameter covariance factor. Exact trace below the dense cap, Hutchinson
/// probes with a fixed seed above it.
struct DebiasResult {
  double sigma2_hat = 0.0;
  std::int64_t dof = 0;
  std::array<double, 3> plugin{};     // worker, firm, 2cov variance components
  std::array<double, 3> corrected{};
  std::array<double, 3> trace{};      // tr(Q S) per quadratic
  double total_variance = 0.0;        // Var(y), population convention
  std::array<double, 4> shares{};     // corrected shares; residual is remainder
  bool exact_trace = true;
};

DebiasResult debiased_quadratics(const OutcomePanel& panel, const RidgeFit& ols,
                                 const DebiasOptions& opts = {});

}  // namespace ridgefe
