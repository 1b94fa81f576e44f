#pragma once

#include <cmath>
#include <vector>

#include "earlypsd/types.hpp"

namespace earlypsd {

struct RetfUpdateConfig {
  double beta = 20.0;
  double xi_th_db = -2.0;
  double phi_reg = 0.0;

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw Error(ErrorKind::InvalidInput, "beta must be finite and positive");
    if (!(phi_reg >= 0.0)) throw Error(ErrorKind::InvalidInput, "phi_reg must be non-negative");
  }
};

/// Per-source regularizer. `hold` stands for an infinite beta: the prior
/// column is kept as is.
struct SourceGate {
  bool hold = true;
  double beta = 0.0;
};

using GateVector = std::vector<SourceGate>;

inline RVector power_ratio(const PsdVector& phi_s_hat, double phi_reg) {
  if (!(phi_reg >= 0.0)) throw Error(ErrorKind::InvalidInput, "phi_reg must be non-negative");
  const double den = phi_s_hat.sum() + phi_reg;
  if (den <= 0.0) return RVector::Zero(phi_s_hat.size());
  return phi_s_hat.values() / den;
}

inline GateVector gate(const RVector& xi, const RetfUpdateConfig& cfg) {
  cfg.validate();
  const double th = std::pow(10.0, cfg.xi_th_db / 10.0);
  GateVector g(static_cast<std::size_t>(xi.size()));
  for (Eigen::Index n = 0; n < xi.size(); ++n) {
    if (xi(n) >= th) g[static_cast<std::size_t>(n)] = {false, cfg.beta};
  }
  return g;
}

/// Blends the data-implied columns Psi^{1/2} Omega Diag(conj phi^{1/2}) / phi
/// with the prior, weighted by beta. Row one is reset to ones.
inline RetfMatrix update_retf(const RetfMatrix& H_prior, const EarlySqrt& psi_sqrt_hat, const CMatrix& omega_hat,
                              const CVector& phi_sqrt_hat, const GateVector& gates) {
  const Eigen::Index M = H_prior.mics();
  const Eigen::Index N = H_prior.sources();
  if (psi_sqrt_hat.rows() != M || psi_sqrt_hat.cols() != N || omega_hat.rows() != N || omega_hat.cols() != N ||
      phi_sqrt_hat.size() != N || static_cast<Eigen::Index>(gates.size()) != N)
    throw Error(ErrorKind::InvalidInput, "update_retf dimension mismatch");
  const CMatrix D = psi_sqrt_hat * omega_hat;
  CMatrix out = H_prior.matrix();
  for (Eigen::Index n = 0; n < N; ++n) {
    const SourceGate& g = gates[static_cast<std::size_t>(n)];
    if (g.hold) continue;
    const double den = std::norm(phi_sqrt_hat(n)) + g.beta;
    if (!(den > 0.0)) continue;
    for (Eigen::Index m = 1; m < M; ++m)
      out(m, n) = (D(m, n) * std::conj(phi_sqrt_hat(n)) + H_prior(m, n) * g.beta) / den;
  }
  out.row(0).setOnes();
  return RetfMatrix(out);
}

}  // namespace earlypsd
