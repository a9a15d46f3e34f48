#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ridgefe/graph.hpp"

namespace ridgefe {

/// Degree-corrected stochastic block model parameters. Workers sample
/// uniformly within their type; firms carry a degree parameter theta drawn
/// from a Pareto law and renormalized to sum to one within each firm group.
struct SbmParams {
  Index n0 = 0;             // initial workers
  Index p0 = 0;             // initial firms
  int k = 1;                // number of groups
  Vec pi_w;                 // worker type probabilities, length k
  Vec pi_f;                 // firm type probabilities, length k
  Mat affinity;             // k x k, nonnegative
  double theta_alpha = 2.0; // Pareto shape
  double theta_min = 1.0;   // Pareto scale
  std::uint64_t seed = 0;

  void validate() const;
};

/// C = c (p0/K) [I_K + delta (J_K - I_K)].
Mat paper_affinity(double c, int k, Index p0, double delta);

struct NodeAssignment {
  std::vector<int> worker_type;      // in 0..K-1
  std::vector<int> firm_type;
  Vec theta;                          // length p0, sums to 1 within firm groups
  Eigen::VectorXi worker_group_count; // n_k
  Eigen::VectorXi firm_group_count;
  int n_groups = 0;
  std::vector<int> empty_firm_groups; // diagnostic: groups with no firms

  Index n_workers() const { return static_cast<Index>(worker_type.size()); }
  Index n_firms() const { return static_cast<Index>(firm_type.size()); }
};

NodeAssignment draw_assignment(const SbmParams& params, std::uint64_t seed);

/// Lazy accessor for p_ij = theta_j C(k_i, l_j) / n_{k_i}, clipped to [0,1].
class EdgeProbabilities {
 public:
  EdgeProbabilities(const NodeAssignment& a, const Mat& affinity);

  double operator()(Index i, Index j) const;
  /// Unclipped probability shared by every worker of type k matched with firm j.
  double block_probability(int k, Index j) const;

  std::int64_t clipped_pairs() const { return clipped_pairs_; }
  double clipped_mass() const { return clipped_mass_; }
  double total_mass() const { return total_mass_; }

 private:
  const NodeAssignment* a_;
  Mat c_;
  mutable std::int64_t clipped_pairs_ = 0;
  mutable double clipped_mass_ = 0.0;
  double total_mass_ = 0.0;
};

struct SampleStats {
  std::int64_t clipped_pairs = 0;
  double clipped_mass = 0.0;
  double total_mass = 0.0;
};

/// Bernoulli draw of the bipartite network given an assignment. Cost is
/// O(realized edges + K p0) via geometric skipping inside constant-probability
/// (type, firm) runs; each (k, l) block has its own counter-based stream so
/// blocks can be sampled in parallel with identical output.
/// Fails if clipped probability mass exceeds 0.1% of the total.
BipartiteGraph sample_network(const NodeAssignment& a, const Mat& affinity, std::uint64_t seed,
                              SampleStats* stats = nullptr);

/// Convenience: draws the assignment from params, then the network.
BipartiteGraph sample_network(const SbmParams& params, std::uint64_t seed,
                              SampleStats* stats = nullptr);

enum class Side { workers, firms };

/// Deterministic-equivalent network for a fixed assignment and penalty pair.
/// Everything is kept in rank-K factored form: the expected normalized
/// adjacency has entries omega_{k_i} Ctilde(k_i, l_j) phi_j, so all operators
/// are diagonal-times-indicator-times-K x K products and inverses use the
/// low-rank update identity at O((n+p)K + K^3) cost.
class ExpectedNetwork {
 public:
  ExpectedNetwork(const NodeAssignment& a, const Mat& affinity, const RidgePenalties& lambda);

  const NodeAssignment& assignment() const { return *a_; }
  const Mat& affinity() const { return c_; }
  const RidgePenalties& penalties() const { return lambda_; }
  Index n_workers() const { return a_->n_workers(); }
  Index n_firms() const { return a_->n_firms(); }

  const Vec& expected_worker_degrees() const { return exp_deg_w_; }
  const Vec& expected_firm_degrees() const { return exp_deg_f_; }
  double min_expected_worker_degree() const { return min_deg_w_; }
  double max_expected_worker_degree() const { return max_deg_w_; }
  double min_expected_firm_degree() const { return min_deg_f_; }
  double max_expected_firm_degree() const { return max_deg_f_; }

  const Mat& normalized_affinity() const { return c_tilde_; }  // Ctilde
  const Vec& omega() const { return omega_; }                  // length K
  const Vec& phi() const { return phi_; }                      // length p

  /// Expected adjacency (p_ij), unregularized.
  Vec b_apply(const Vec& x) const;
  Vec bt_apply(const Vec& x) const;

  /// Expected normalized adjacency at the construction penalties.
  LinearOperator e_op() const;
  /// Rank-K one-mode projections and normalized Laplacians.
  LinearOperator adjacency_op(Side side) const;
  LinearOperator laplacian_op(Side side) const;

  /// x -> L^{-1} x for the normalized expected Laplacian (Woodbury).
  Vec laplacian_inverse_apply(Side side, const Vec& x) const;
  /// x -> Ltilde^{-1} x for the un-normalized expected Laplacian.
  Vec unnormalized_laplacian_inverse_apply(Side side, const Vec& x) const;

  /// Factored pieces for the O((n+p)K^2) moment diagonals.
  const Mat& core_w() const { return h_w_; }  // K x K, Lw^{-1} = I + Uw Hw Uw'
  const Mat& core_f() const { return h_f_; }
  Vec factor_row_w(Index i) const;            // row i of Uw (single nonzero)
  Vec factor_row_f(Index j) const;

 private:
  const NodeAssignment* a_;
  Mat c_;
  RidgePenalties lambda_;
  Vec exp_deg_w_, exp_deg_f_;     // lambda-free expected degrees
  Vec shift_w_, shift_f_;          // expected degrees + lambda
  double min_deg_w_, max_deg_w_, min_deg_f_, max_deg_f_;
  Mat c_tilde_;
  Vec omega_;                      // per group
  Vec phi_;                        // per firm
  Vec row_sum_, col_sum_;          // C(k,.), C(.,l)
  Mat g_w_, g_f_;                  // A_w = Uw Gw Uw', A_f = Uf Gf Uf'
  Mat h_w_, h_f_;                  // Woodbury cores
  Mat s_w_, s_f_;                  // Uw'Uw, Uf'Uf (diagonal, stored dense)

  Vec u_w_apply_t(const Vec& x) const;  // Uw' x (K)
  Vec u_w_apply(const Vec& y) const;    // Uw y (n)
  Vec u_f_apply_t(const Vec& x) const;
  Vec u_f_apply(const Vec& y) const;

  friend class ExpectedMoments;
};

}  // namespace ridgefe
