#include "ridgefe/linops.hpp"

#include <cmath>

namespace ridgefe {

NormResult operator_norm(const LinearOperator& op, double tol, int max_iter) {
  NormResult r;
  if (op.rows == 0 || op.cols == 0) {
    r.converged = true;
    return r;
  }
  Vec v = Vec::Ones(op.cols) / std::sqrt(static_cast<double>(op.cols));
  double sigma = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    Vec w = op.apply(v);
    const double s = w.norm();
    if (s == 0.0) {
      r.value = 0.0;
      r.converged = true;
      r.iterations = it;
      r.last_iterate = v;
      return r;
    }
    Vec u = op.apply_t(w);
    const double un = u.norm();
    if (un == 0.0) {
      r.value = s;
      r.converged = true;
      r.iterations = it;
      r.last_iterate = v;
      return r;
    }
    v = u / un;
    r.iterations = it;
    if (std::abs(s - sigma) <= tol * std::max(s, 1e-300)) {
      r.value = s;
      r.converged = true;
      r.last_iterate = v;
      return r;
    }
    sigma = s;
  }
  r.value = sigma;
  r.converged = false;
  r.last_iterate = v;
  return r;
}

Mat densify(const LinearOperator& op) {
  Mat m(op.rows, op.cols);
  Vec e = Vec::Zero(op.cols);
  for (Index j = 0; j < op.cols; ++j) {
    e[j] = 1.0;
    m.col(j) = op.apply(e);
    e[j] = 0.0;
  }
  return m;
}

Vec dense_spectrum(const LinearOperator& op, Index cap) {
  if (op.rows != op.cols) throw std::invalid_argument("dense_spectrum: operator not square");
  if (op.rows > cap)
    throw std::invalid_argument(
        "dense_spectrum: size exceeds the dense cap; use operator_norm (power iteration) instead");
  Mat m = densify(op);
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("dense_spectrum: eigensolver failed");
  return es.eigenvalues();
}

CgResult conjugate_gradient(const LinearOperator& a, const Vec& b, const Vec& diag,
                            double tol, int max_iter) {
  CgResult res;
  const double bnorm = b.norm();
  res.x = Vec::Zero(b.size());
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  Vec inv_diag = diag.unaryExpr([](double d) { return d > 0.0 ? 1.0 / d : 1.0; });
  Vec r = b;
  Vec z = inv_diag.cwiseProduct(r);
  Vec p = z;
  double rz = r.dot(z);
  for (int it = 1; it <= max_iter; ++it) {
    Vec ap = a.apply(p);
    const double pap = p.dot(ap);
    if (pap <= 0.0) break;  // loss of positive definiteness
    const double alpha = rz / pap;
    res.x += alpha * p;
    r -= alpha * ap;
    res.iterations = it;
    res.rel_residual = r.norm() / bnorm;
    if (res.rel_residual <= tol) {
      res.converged = true;
      return res;
    }
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return res;
}

}  // namespace ridgefe
