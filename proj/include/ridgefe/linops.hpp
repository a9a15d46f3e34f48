#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>

namespace ridgefe {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Matrix-free linear map exposing products with itself and its transpose.
struct LinearOperator {
  Index rows = 0;
  Index cols = 0;
  std::function<Vec(const Vec&)> apply;
  std::function<Vec(const Vec&)> apply_t;

  Vec operator()(const Vec& x) const { return apply(x); }
};

inline LinearOperator symmetric_operator(Index size, std::function<Vec(const Vec&)> f) {
  LinearOperator op;
  op.rows = size;
  op.cols = size;
  op.apply = f;
  op.apply_t = std::move(f);
  return op;
}

/// a - b as an operator; shapes must agree.
inline LinearOperator operator_difference(const LinearOperator& a, const LinearOperator& b) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument("operator_difference: shape mismatch");
  LinearOperator d;
  d.rows = a.rows;
  d.cols = a.cols;
  d.apply = [a, b](const Vec& x) { return (a.apply(x) - b.apply(x)).eval(); };
  d.apply_t = [a, b](const Vec& x) { return (a.apply_t(x) - b.apply_t(x)).eval(); };
  return d;
}

struct NormResult {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
  Vec last_iterate;

  operator double() const { return value; }
};

/// Spectral norm by power iteration on A'A, deterministic all-ones start.
NormResult operator_norm(const LinearOperator& op, double tol = 1e-8, int max_iter = 5000);

/// Densifies by applying to basis vectors; test/diagnostic use only.
Mat densify(const LinearOperator& op);

/// Full symmetric eigendecomposition of a densified operator, ascending.
/// Rejects sizes above the cap (power iteration is the at-scale tool).
Vec dense_spectrum(const LinearOperator& op, Index cap = 2000);

struct CgResult {
  Vec x;
  bool converged = false;
  int iterations = 0;
  double rel_residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradient for an SPD operator.
CgResult conjugate_gradient(const LinearOperator& a, const Vec& b, const Vec& diag,
                            double tol = 1e-10, int max_iter = 10000);

}  // namespace ridgefe
