#pragma once

#include <Eigen/Dense>

#include "earlypsd/rng.hpp"
#include "earlypsd/types.hpp"

namespace testutil {

using namespace earlypsd;

inline CMatrix random_complex(Eigen::Index r, Eigen::Index c, Rng& rng) {
  CMatrix a(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) a(i, j) = rng.complex_gaussian();
  return a;
}

inline HermitianMatrix random_hermitian(Eigen::Index n, Rng& rng) {
  const CMatrix a = random_complex(n, n, rng);
  return HermitianMatrix(CMatrix(a + a.adjoint()));
}

inline HermitianMatrix random_hpd(Eigen::Index n, Rng& rng) {
  const CMatrix a = random_complex(n, n, rng);
  return HermitianMatrix(CMatrix(a * a.adjoint() + 0.1 * CMatrix::Identity(n, n)));
}

/// Haar-distributed unitary via QR with phase correction.
inline CMatrix random_unitary(Eigen::Index n, Rng& rng) {
  const CMatrix a = random_complex(n, n, rng);
  Eigen::HouseholderQR<CMatrix> qr(a);
  CMatrix Q = qr.householderQ();
  const CMatrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < n; ++k) {
    const Complex d = R(k, k);
    if (std::abs(d) > 0.0) Q.col(k) *= d / std::abs(d);
  }
  return Q;
}

inline RetfMatrix random_retf(Eigen::Index m, Eigen::Index n, Rng& rng) {
  CMatrix h = random_complex(m, n, rng);
  h.row(0).setOnes();
  return RetfMatrix(h);
}

}  // namespace testutil
