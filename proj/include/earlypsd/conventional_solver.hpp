#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "earlypsd/types.hpp"

namespace earlypsd {

struct ConventionalProblem {
  HermitianMatrix psi_xe_hat;
  RetfMatrix H_hat;
  double alpha = 1e3;
  std::optional<double> mu;  // empty means 1 / lambda_max(A_c)
  int i_max = 20;
  double tol = 1e-8;
};

struct SolveReport {
  PsdVector phi_s_hat;
  int iterations_used = 0;
  double final_objective = 0.0;
  bool converged = false;
  bool singular_init = false;
  std::vector<double> objective_trace;  // entry 0 is the initial point
};

struct NormalMatrices {
  RMatrix A;
  RVector b;
};

inline constexpr double kMaxNormalCondition = 1e10;

/// A_c0[n,n'] = |h_n^H h_n'|^2 and b_c0 = Re diag(H^H Psi H).
inline NormalMatrices normal_matrices(const RetfMatrix& H_hat, const HermitianMatrix& psi_xe_hat) {
  const CMatrix& H = H_hat.matrix();
  if (psi_xe_hat.dim() != H.rows()) throw Error(ErrorKind::InvalidInput, "normal_matrices dimension mismatch");
  NormalMatrices nm;
  nm.A = (H.adjoint() * H).cwiseAbs2();
  nm.b = (H.adjoint() * psi_xe_hat.matrix() * H).diagonal().real();
  return nm;
}

inline double symmetric_condition(const RMatrix& A) {
  Eigen::SelfAdjointEigenSolver<RMatrix> es(A, Eigen::EigenvaluesOnly);
  const RVector ev = es.eigenvalues().cwiseAbs();
  const double mn = ev.minCoeff();
  return mn > 0.0 ? ev.maxCoeff() / mn : kInf;
}

inline RVector solve_normal(const RMatrix& A, const RVector& b) {
  if (symmetric_condition(A) > kMaxNormalCondition)
    throw Error(ErrorKind::SingularNormalEquations, "normal matrix is singular");
  return A.ldlt().solve(b);
}

/// max(A_c0^{-1} b_c0, 0).
inline PsdVector solve_unconstrained(const RetfMatrix& H_hat, const HermitianMatrix& psi_xe_hat) {
  const NormalMatrices nm = normal_matrices(H_hat, psi_xe_hat);
  return PsdVector(RVector(solve_normal(nm.A, nm.b).cwiseMax(0.0)));
}

inline PsdVector solve_unconstrained(const ConventionalProblem& p) {
  return solve_unconstrained(p.H_hat, p.psi_xe_hat);
}

/// Frobenius error plus the soft sum-constraint penalty.
inline double conventional_objective(const HermitianMatrix& psi, const RetfMatrix& H_hat, const RVector& phi,
                                     double alpha) {
  const CMatrix& H = H_hat.matrix();
  const CMatrix E = psi.matrix() - H * phi.cast<Complex>().asDiagonal() * H.adjoint();
  const double e = psi(0, 0).real() - phi.sum();
  return E.squaredNorm() + alpha * e * e;
}

inline SolveReport solve_conventional_mp(const ConventionalProblem& p) {
  if (!(p.alpha >= 0.0) || !std::isfinite(p.alpha)) throw Error(ErrorKind::InvalidInput, "alpha must be finite and >= 0");
  if (p.i_max < 1) throw Error(ErrorKind::InvalidInput, "i_max must be positive");
  if (p.H_hat.sources() > p.H_hat.mics()) throw Error(ErrorKind::InvalidInput, "need N <= M");
  const NormalMatrices nm = normal_matrices(p.H_hat, p.psi_xe_hat);
  const Eigen::Index N = nm.b.size();
  const RMatrix A = nm.A + p.alpha * RMatrix::Ones(N, N);
  const RVector b = nm.b + RVector::Constant(N, p.alpha * p.psi_xe_hat(0, 0).real());

  SolveReport rep;
  RVector phi;
  try {
    phi = solve_normal(A, b);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::SingularNormalEquations) throw;
    rep.singular_init = true;
    phi = A.completeOrthogonalDecomposition().pseudoInverse() * b;
  }
  phi = phi.cwiseMax(0.0);

  double mu = 0.0;
  if (p.mu) {
    mu = *p.mu;
    if (!(mu > 0.0)) throw Error(ErrorKind::InvalidInput, "step size must be positive");
  } else {
    Eigen::SelfAdjointEigenSolver<RMatrix> es(A, Eigen::EigenvaluesOnly);
    const double lmax = es.eigenvalues().maxCoeff();
    mu = lmax > 0.0 ? 1.0 / lmax : 1.0;
  }

  rep.objective_trace.push_back(conventional_objective(p.psi_xe_hat, p.H_hat, phi, p.alpha));
  for (int i = 1; i <= p.i_max; ++i) {
    const RVector next = (phi + mu * (b - A * phi)).cwiseMax(0.0);
    const double change = (next - phi).norm();
    const double ref = phi.norm();
    phi = next;
    rep.iterations_used = i;
    rep.objective_trace.push_back(conventional_objective(p.psi_xe_hat, p.H_hat, phi, p.alpha));
    if (change <= p.tol * ref) {
      rep.converged = true;
      break;
    }
  }
  rep.phi_s_hat = PsdVector(phi);
  rep.final_objective = rep.objective_trace.back();
  return rep;
}

}  // namespace earlypsd
