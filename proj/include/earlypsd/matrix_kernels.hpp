#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "earlypsd/types.hpp"

namespace earlypsd {

struct EvdResult {
  RVector values;  // descending
  CMatrix vectors;
};

struct SvdResult {
  CMatrix U;
  RVector S;  // descending, non-negative
  CMatrix V;
};

/// Generalized eigenpairs with P^H B P = I.
struct GevdPair {
  CMatrix vectors;
  RVector values;  // descending
};

namespace detail {

// Stable descending order; ties keep input order.
inline std::vector<Eigen::Index> descending_order(const RVector& v) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return v(a) > v(b); });
  return idx;
}

inline void require_finite(const CMatrix& a, const char* what) {
  if (!all_finite(a)) throw Error(ErrorKind::InvalidInput, std::string("non-finite input to ") + what);
}

}  // namespace detail

inline EvdResult hermitian_evd(const HermitianMatrix& a) {
  detail::require_finite(a.matrix(), "hermitian_evd");
  Eigen::SelfAdjointEigenSolver<CMatrix> es(a.matrix());
  if (es.info() != Eigen::Success) throw Error(ErrorKind::InvalidInput, "eigensolver failed");
  // Eigen returns ascending values.
  const RVector asc = es.eigenvalues();
  const auto order = detail::descending_order(asc);
  EvdResult out;
  out.values.resize(asc.size());
  out.vectors.resize(a.dim(), a.dim());
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.values(static_cast<Eigen::Index>(k)) = asc(order[k]);
    out.vectors.col(static_cast<Eigen::Index>(k)) = es.eigenvectors().col(order[k]);
  }
  return out;
}

inline SvdResult svd(const CMatrix& a) {
  detail::require_finite(a, "svd");
  if (a.rows() == 0 || a.cols() == 0) throw Error(ErrorKind::InvalidInput, "empty matrix in svd");
  Eigen::JacobiSVD<CMatrix> s(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  // JacobiSVD already sorts descending.
  return {s.matrixU(), s.singularValues(), s.matrixV()};
}

/// Lower-triangular F with F F^H = B. Jitter (relative to the mean diagonal)
/// is added only if the plain factorization fails.
inline CMatrix factor_hpd(const HermitianMatrix& b, double jitter = 1e-10) {
  if (jitter < 0.0) throw Error(ErrorKind::InvalidInput, "jitter must be non-negative");
  detail::require_finite(b.matrix(), "factor_hpd");
  Eigen::LLT<CMatrix> llt(b.matrix());
  if (llt.info() == Eigen::Success) {
    CMatrix L = llt.matrixL();
    if (L.diagonal().real().minCoeff() > 0.0) return L;
  }
  if (jitter > 0.0) {
    const double scale = b.matrix().diagonal().real().mean();
    CMatrix shifted = b.matrix();
    shifted.diagonal().array() += jitter * scale;
    Eigen::LLT<CMatrix> llt2(shifted);
    if (llt2.info() == Eigen::Success) {
      CMatrix L = llt2.matrixL();
      if (L.diagonal().real().minCoeff() > 0.0) return L;
    }
  }
  throw Error(ErrorKind::NotPositiveDefinite, "matrix is not positive definite");
}

/// Solves A P = B P Diag(lambda) through whitening by the Cholesky factor of B.
inline GevdPair gevd(const HermitianMatrix& a, const HermitianMatrix& b, double jitter = 1e-10) {
  if (a.dim() != b.dim()) throw Error(ErrorKind::InvalidInput, "gevd dimension mismatch");
  const CMatrix F = factor_hpd(b, jitter);
  const Eigen::TriangularView<const CMatrix, Eigen::Lower> Fl(F);
  // W = F^{-1} A F^{-H}
  CMatrix tmp = Fl.solve(a.matrix());
  CMatrix W = Fl.solve(tmp.adjoint()).adjoint();
  const EvdResult e = hermitian_evd(HermitianMatrix(W));
  GevdPair out;
  out.values = e.values;
  out.vectors = F.adjoint().triangularView<Eigen::Upper>().solve(e.vectors);
  return out;
}

}  // namespace earlypsd
