#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ridgefe/estimator.hpp"

namespace ridgefe {

/// Outcome-variance shares of V(W mu), V(F phi), 2 Cov and the remainder,
/// population (1/N) convention. Ridge residuals are not orthogonal to the
/// effects, so the residual share is defined as the remainder.
struct VarianceDecomposition {
  double share_worker = 0.0;
  double share_firm = 0.0;
  double share_2cov = 0.0;
  double share_residual = 0.0;
  double fe_correlation = 0.0;
  double total_variance = 0.0;
};

VarianceDecomposition decompose(const OutcomePanel& panel, const Vec& mu_eff, const Vec& phi_eff);
VarianceDecomposition decompose(const OutcomePanel& panel, const RidgeFit& fit);

struct OosMse {
  double mse = 0.0;
  Index used = 0;
  Index dropped = 0;  // test rows whose worker or firm is absent from the fit
};

/// MSE of y - mu_hat - phi_hat over test observations whose worker and firm
/// both appear in the training fit (matched through the universe node ids).
OosMse out_of_sample_mse(const OutcomePanel& train, const RidgeFit& fit,
                         const OutcomePanel& test);

/// Per-node recovery error (||mu-mu_hat||^2 + ||phi-phi_hat||^2) / (n+p),
/// the fixed-effect analogue of the out-of-sample error (feasible in
/// simulation where the realized effects are known).
double effect_recovery_mse(const OutcomePanel& panel, const RidgeFit& fit,
                           const FixedEffectDgp& dgp);

/// Fresh network on the same assignment and effects, fresh residuals,
/// largest component kept.
OutcomePanel make_test_panel(const NodeAssignment& a, const Mat& affinity,
                             const FixedEffectDgp& dgp, std::uint64_t seed);

struct CvOptions {
  SolverOptions solver;
  int workers = 1;
};

struct CvResult {
  std::vector<std::pair<double, double>> grid;  // (lambda_w, lambda_f)
  std::vector<double> mse;                       // NaN marks an invalid point
  std::size_t best = 0;
  double normalized_w = 0.0;  // lambda_w / (N/n)
  double normalized_f = 0.0;  // lambda_f / (N/p)
};

/// Grid search minimizing the out-of-sample MSE; ties go to larger penalties.
CvResult cross_validate(const OutcomePanel& train, const OutcomePanel& test,
                        std::span<const std::pair<double, double>> grid,
                        const CvOptions& opts = {});

/// Six-term prediction SSE on the expected test network, plus the residual
/// term sigma^2 E[N~]. Biases and variances are the closed forms on the
/// realized training network; the cross covariance C_lambda is estimated by
/// Monte Carlo over joint (U, U_w, U_f) draws with the network fixed. The
/// expectation is restricted to the training panel's nodes; mc_sse is the
/// fully simulated counterpart for the same restriction.
struct SseBreakdown {
  double sigma2_term = 0.0;
  double bias_w = 0.0, trace_w = 0.0;
  double cross_bias = 0.0, cross_trace = 0.0;
  double bias_f = 0.0, trace_f = 0.0;
  double total = 0.0;
  double mc_sse = 0.0;
  double mc_se = 0.0;
  int cov_draws = 0;
  int mc_draws = 0;
};

struct SseOptions {
  int cov_draws = 400;
  int mc_draws = 0;  // 0 skips the direct-simulation cross-check
  std::uint64_t seed = 1;
  Index dense_cap = 2000;
  SolverOptions solver;
};

SseBreakdown prediction_sse(const OutcomePanel& train, const NodeAssignment& a,
                            const Mat& affinity, const FixedEffectDgp& dgp,
                            const RidgePenalties& lambda, const SseOptions& opts = {});

/// Gaussian kernel density, Silverman bandwidth, 512-point grid.
struct DensityReport {
  Vec x;
  Vec density;
  double bandwidth = 0.0;
  bool point_mass = false;
};

DensityReport density_report(std::span<const double> values, int grid_points = 512);

}  // namespace ridgefe
