#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ridgefe/estimator.hpp"
#include "ridgefe/sbm.hpp"

namespace ridgefe {

/// Scalars entering every concentration bound. t = sqrt(3 M ln((n+p)/eps));
/// the theorems apply when M <= 1/(3 ln((n+p)/eps)), equivalently t <= 1.
struct BoundInputs {
  Index n = 0, p = 0;
  double lambda_w = 0, lambda_f = 0;
  double epsilon = 0;
  double gamma = 0;  // p/n
  double delta_min_w = 0, delta_max_w = 0;  // extremal expected worker degrees
  double delta_min_f = 0, delta_max_f = 0;
  double m_w = 0, m_f = 0, m = 0;
  double t = 0;
  double chi_w = 0, chi_f = 0;
  bool applicable = false;
};

BoundInputs bound_t(const ExpectedNetwork& en, double epsilon);

/// Bound expressions exactly as printed in the theorem statements. The
/// Theorem 4/5 displays mix chi_w and chi_f across sides; they are evaluated
/// as printed, asymmetry included.
double theorem1_bound_e(const BoundInputs& in);
double theorem1_bound_laplacian(const BoundInputs& in);
double theorem1_floor(const BoundInputs& in);

double theorem2_bound_firm(const BoundInputs& in);
double theorem2_bound_worker(const BoundInputs& in);
double theorem2_floor_firm(const BoundInputs& in);
double theorem2_floor_worker(const BoundInputs& in);

double theorem3_bound_firm(const BoundInputs& in);
double theorem3_bound_worker(const BoundInputs& in);
double theorem3_floor_firm(const BoundInputs& in);
double theorem3_floor_worker(const BoundInputs& in);

double theorem4_bound_mu(const BoundInputs& in, double mu_star_norm, double phi_star_norm);
double theorem4_bound_phi(const BoundInputs& in, double mu_star_norm, double phi_star_norm);
double theorem4_floor_mu(const BoundInputs& in);
double theorem4_floor_phi(const BoundInputs& in);

double theorem5_bound_worker(const BoundInputs& in, double sigma, double sigma_w, double sigma_f);
double theorem5_bound_firm(const BoundInputs& in, double sigma, double sigma_w, double sigma_f);
double theorem5_floor_worker(const BoundInputs& in);
double theorem5_floor_firm(const BoundInputs& in);

struct CheckOptions {
  int replications = 200;
  std::uint64_t seed = 1;
  double power_tol = 1e-6;
  int power_max_iter = 3000;
  double cg_tol = 1e-10;
  int cg_max_iter = 5000;
};

/// One verified inequality: theoretical bound, probability floor, and the
/// Monte Carlo deviations across network replications.
struct BoundEntry {
  std::string theorem;
  std::string side;
  double bound = 0.0;
  double probability_floor = 0.0;
  std::vector<double> deviations;
  double violation_rate = 0.0;
  bool applicable = false;
  int excluded = 0;  // replications dropped for solver non-convergence
  std::string note;
};

struct BoundReport {
  BoundInputs inputs;
  std::vector<BoundEntry> entries;
};

/// ||E - fraktur E||, ||L_w - fraktur L_w||, ||L_f - fraktur L_f|| against
/// 4t / 8t / 8t; full network draws, no component selection.
std::vector<BoundEntry> theorem1_check(const ExpectedNetwork& en, double epsilon,
                                       const CheckOptions& opts);

/// Inverse normalized Laplacian deviations, both sides.
std::vector<BoundEntry> theorem2_check(const ExpectedNetwork& en, double epsilon,
                                       const CheckOptions& opts);

/// Inverse un-normalized Laplacian deviations, both sides.
std::vector<BoundEntry> theorem3_check(const ExpectedNetwork& en, double epsilon,
                                       const CheckOptions& opts);

/// Bias-vector deviations ||b - fraktur b||, both sides.
std::vector<BoundEntry> theorem4_check(const ExpectedNetwork& en, double epsilon,
                                       const Vec& mu_star, const Vec& phi_star,
                                       const CheckOptions& opts);

/// Variance-matrix deviations in spectral norm, both sides; dense-cap sizes.
std::vector<BoundEntry> theorem5_check(const ExpectedNetwork& en, double epsilon, double sigma,
                                       double sigma_w, double sigma_f, const CheckOptions& opts);

}  // namespace ridgefe
