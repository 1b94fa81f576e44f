#pragma once

#include <cmath>
#include <variant>
#include <vector>

#include "earlypsd/conventional_solver.hpp"
#include "earlypsd/matrix_kernels.hpp"
#include "earlypsd/types.hpp"

namespace earlypsd {

/// phi^{1/2} starts at sqrt([Psi_xe]_11 / N) for every source.
struct SumConstraintInit {};

/// phi^{1/2} starts at the elementwise root of a given PSD vector.
struct ConventionalSeed {
  PsdVector phi;
};

using SquareRootInit = std::variant<SumConstraintInit, ConventionalSeed>;

struct SquareRootProblem {
  EarlySqrt psi_sqrt_hat;
  RetfMatrix H_hat;
  double alpha = 1e3;
  int i_max = 20;
  double tol = 1e-8;
  SquareRootInit init = SumConstraintInit{};
};

struct SquareRootSolution {
  CMatrix omega_hat;
  CVector phi_sqrt_hat;
  PsdVector phi_s_hat;
  int iterations_used = 0;
  bool converged = false;
  bool non_unique = false;
  std::vector<double> objective_trace;  // one entry per iteration
  std::vector<RVector> phi_trace;       // phi_s after each iteration
};

struct ProcrustesStep {
  CMatrix omega;
  bool non_unique = false;
};

inline constexpr double kRankTolerance = 1e-12;

/// Unitary maximizer of Re tr(Omega C) with C = Diag(conj phi^{1/2}) H^H Psi^{1/2}.
inline ProcrustesStep procrustes_from_cross(const CMatrix& C) {
  const SvdResult s = svd(CMatrix(C.adjoint()));
  ProcrustesStep out;
  out.omega = s.U * s.V.adjoint();
  const double smax = s.S.size() ? s.S(0) : 0.0;
  const double smin = s.S.size() ? s.S(s.S.size() - 1) : 0.0;
  out.non_unique = !(smin > kRankTolerance * smax);
  return out;
}

inline ProcrustesStep procrustes_step(const EarlySqrt& psi_sqrt_hat, const RetfMatrix& H_hat, const CVector& phi_sqrt) {
  const CMatrix& H = H_hat.matrix();
  if (psi_sqrt_hat.rows() != H.rows() || psi_sqrt_hat.cols() != H.cols() || phi_sqrt.size() != H.cols())
    throw Error(ErrorKind::InvalidInput, "procrustes_step dimension mismatch");
  const CMatrix C = phi_sqrt.conjugate().asDiagonal() * (H.adjoint() * psi_sqrt_hat);
  return procrustes_from_cross(C);
}

/// Closed-form PSD square roots for fixed Omega.
inline CVector psd_sqrt_step(const EarlySqrt& psi_sqrt_hat, const RetfMatrix& H_hat, const CMatrix& omega_hat,
                             double alpha) {
  if (!(alpha >= 0.0)) throw Error(ErrorKind::InvalidInput, "alpha must be non-negative");
  const CMatrix& H = H_hat.matrix();
  const CMatrix D = psi_sqrt_hat * omega_hat;
  const RVector a = H.colwise().squaredNorm().transpose().array() + alpha;
  const CVector b = (H.adjoint() * D).diagonal() + alpha * D.row(0).transpose();
  return b.cwiseQuotient(a.cast<Complex>());
}

/// ||Psi^{1/2} Omega - H Diag(phi^{1/2})||^2 + alpha ||[Psi^{1/2} Omega]_1 - phi^{1/2}||^2
inline double square_root_objective(const EarlySqrt& psi_sqrt_hat, const RetfMatrix& H_hat, const CMatrix& omega,
                                    const CVector& phi_sqrt, double alpha) {
  const CMatrix D = psi_sqrt_hat * omega;
  const CMatrix E = D - H_hat.matrix() * phi_sqrt.asDiagonal();
  const CVector e = D.row(0).transpose() - phi_sqrt;
  return E.squaredNorm() + alpha * e.squaredNorm();
}

inline CVector initial_phi_sqrt(const SquareRootProblem& p) {
  const Eigen::Index N = p.H_hat.sources();
  if (const auto* seed = std::get_if<ConventionalSeed>(&p.init)) {
    if (seed->phi.size() != N) throw Error(ErrorKind::InvalidInput, "seed length mismatch");
    return seed->phi.values().cwiseSqrt().cast<Complex>();
  }
  const double psi11 = p.psi_sqrt_hat.row(0).squaredNorm();
  return CVector::Constant(N, Complex(std::sqrt(psi11 / static_cast<double>(N)), 0.0));
}

/// max(A_c0^{-1} b_c0, 0) with a pseudo-inverse when the system is singular.
inline PsdVector conventional_seed(const RetfMatrix& H_hat, const HermitianMatrix& psi_xe_hat) {
  const NormalMatrices nm = normal_matrices(H_hat, psi_xe_hat);
  RVector x;
  if (symmetric_condition(nm.A) > kMaxNormalCondition)
    x = nm.A.completeOrthogonalDecomposition().pseudoInverse() * nm.b;
  else
    x = nm.A.ldlt().solve(nm.b);
  return PsdVector(RVector(x.cwiseMax(0.0)));
}

inline SquareRootSolution solve_square_root_mp(const SquareRootProblem& p) {
  const CMatrix& H = p.H_hat.matrix();
  if (p.psi_sqrt_hat.rows() != H.rows() || p.psi_sqrt_hat.cols() != H.cols())
    throw Error(ErrorKind::InvalidInput, "square-root factor must be M x N");
  if (H.cols() > H.rows()) throw Error(ErrorKind::InvalidInput, "need N <= M");
  if (p.i_max < 1) throw Error(ErrorKind::InvalidInput, "i_max must be positive");
  if (!(p.alpha >= 0.0) || !std::isfinite(p.alpha)) throw Error(ErrorKind::InvalidInput, "alpha must be finite and >= 0");

  SquareRootSolution sol;
  CVector phi_sqrt = initial_phi_sqrt(p);
  RVector phi = phi_sqrt.cwiseAbs2();
  for (int i = 1; i <= p.i_max; ++i) {
    const ProcrustesStep st = procrustes_step(p.psi_sqrt_hat, p.H_hat, phi_sqrt);
    sol.non_unique = sol.non_unique || st.non_unique;
    sol.omega_hat = st.omega;
    phi_sqrt = psd_sqrt_step(p.psi_sqrt_hat, p.H_hat, st.omega, p.alpha);
    const RVector next = phi_sqrt.cwiseAbs2();
    sol.objective_trace.push_back(square_root_objective(p.psi_sqrt_hat, p.H_hat, st.omega, phi_sqrt, p.alpha));
    sol.phi_trace.push_back(next);
    sol.iterations_used = i;
    const double change = (next - phi).norm();
    const double ref = phi.norm();
    phi = next;
    if (change <= p.tol * ref) {
      sol.converged = true;
      break;
    }
  }
  sol.phi_sqrt_hat = phi_sqrt;
  sol.phi_s_hat = PsdVector(phi);
  return sol;
}

}  // namespace earlypsd
