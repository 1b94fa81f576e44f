#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "earlypsd/matrix_kernels.hpp"
#include "earlypsd/types.hpp"

namespace earlypsd {

/// Recursive averaging memory for one frequency bin.
struct SmootherState {
  double zeta = 0.9;
  std::optional<HermitianMatrix> psi_sm;  // empty means all-zero start
  RVector lambda_sm_prev;                 // previous smoothed eigenvalues, tracked order
  CMatrix p_prev;                         // previous eigenvectors, empty before the first GEVD
  long frame_count = 0;

  SmootherState() = default;
  explicit SmootherState(double z) : zeta(z) { validate(); }
  SmootherState(double z, HermitianMatrix initial) : zeta(z), psi_sm(std::move(initial)) { validate(); }

  void validate() const {
    if (!(zeta >= 0.0 && zeta < 1.0)) throw Error(ErrorKind::InvalidInput, "forgetting factor must lie in [0, 1)");
  }
};

struct EarlyEstimate {
  HermitianMatrix psi_xe_hat;
  EarlySqrt psi_xe_sqrt_hat;
  double phi_xl_hat = 0.0;
  RVector lambda_x_hat;
};

struct TrackResult {
  CMatrix P;           // columns in tracked order
  RVector lambda_sm;   // smoothed eigenvalues, same order as P
  RVector lambda_prev; // previous smoothed eigenvalues paired with lambda_sm
  bool ambiguous = false;
  double min_association = 1.0;
};

struct TrackOptions {
  double jitter = 1e-10;
  double ambiguity_threshold = 0.5;
  bool optimal_assignment = false;  // exhaustive search, only for M <= 8
};

inline void update_smooth(SmootherState& st, const HermitianMatrix& psi_inst) {
  st.validate();
  if (st.psi_sm && st.psi_sm->dim() != psi_inst.dim())
    throw Error(ErrorKind::InvalidInput, "smoother dimension mismatch");
  if (!st.psi_sm) {
    st.psi_sm = HermitianMatrix(CMatrix((1.0 - st.zeta) * psi_inst.matrix()));
  } else {
    st.psi_sm = HermitianMatrix(CMatrix(st.zeta * st.psi_sm->matrix() + (1.0 - st.zeta) * psi_inst.matrix()));
  }
  ++st.frame_count;
}

namespace detail {

// Returns perm with perm[slot] = new column index.
inline std::vector<Eigen::Index> greedy_assignment(const RMatrix& a) {
  const Eigen::Index M = a.rows();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(M), -1);
  std::vector<bool> row_used(static_cast<std::size_t>(M), false), col_used(static_cast<std::size_t>(M), false);
  for (Eigen::Index k = 0; k < M; ++k) {
    double best = -1.0;
    Eigen::Index bi = 0, bj = 0;
    for (Eigen::Index i = 0; i < M; ++i) {
      if (row_used[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = 0; j < M; ++j) {
        if (col_used[static_cast<std::size_t>(j)]) continue;
        if (a(i, j) > best) {
          best = a(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    row_used[static_cast<std::size_t>(bi)] = true;
    col_used[static_cast<std::size_t>(bj)] = true;
    perm[static_cast<std::size_t>(bi)] = bj;
  }
  return perm;
}

inline std::vector<Eigen::Index> optimal_assignment(const RMatrix& a) {
  const Eigen::Index M = a.rows();
  if (M > 8) return greedy_assignment(a);
  std::vector<Eigen::Index> p(static_cast<std::size_t>(M));
  std::iota(p.begin(), p.end(), Eigen::Index{0});
  std::vector<Eigen::Index> best = p;
  double best_score = -1.0;
  do {
    double s = 0.0;
    for (Eigen::Index i = 0; i < M; ++i) s += a(i, p[static_cast<std::size_t>(i)]);
    if (s > best_score) {
      best_score = s;
      best = p;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace detail

/// GEVD of the smoothed matrix against gamma, with columns associated to the
/// previous frame's eigenvectors. On an ambiguous association the result
/// falls back to descending order and `ambiguous` is set.
inline TrackResult track_gevd(SmootherState& st, const HermitianMatrix& gamma, const TrackOptions& opt = {}) {
  if (st.frame_count < 1 || !st.psi_sm) throw Error(ErrorKind::InvalidInput, "smoother not initialized");
  const GevdPair g = gevd(*st.psi_sm, gamma, opt.jitter);
  const Eigen::Index M = g.values.size();
  if (st.lambda_sm_prev.size() != M) st.lambda_sm_prev = RVector::Zero(M);

  TrackResult out;
  out.P = g.vectors;
  out.lambda_sm = g.values;
  if (st.p_prev.size() != 0) {
    const CMatrix assoc = st.p_prev.adjoint() * gamma.matrix() * g.vectors;
    const RMatrix mag = assoc.cwiseAbs();
    const auto perm = opt.optimal_assignment ? detail::optimal_assignment(mag) : detail::greedy_assignment(mag);
    double min_a = kInf;
    for (Eigen::Index i = 0; i < M; ++i) min_a = std::min(min_a, mag(i, perm[static_cast<std::size_t>(i)]));
    out.min_association = min_a;
    if (min_a < opt.ambiguity_threshold) {
      out.ambiguous = true;
    } else {
      for (Eigen::Index i = 0; i < M; ++i) {
        const Eigen::Index j = perm[static_cast<std::size_t>(i)];
        const Complex a = assoc(i, j);
        const Complex ph = std::abs(a) > 0.0 ? std::conj(a) / std::abs(a) : Complex(1.0, 0.0);
        out.P.col(i) = g.vectors.col(j) * ph;
        out.lambda_sm(i) = g.values(j);
      }
    }
  }
  if (out.ambiguous) {
    // Rank pairing: previous values re-sorted descending.
    RVector prev = st.lambda_sm_prev;
    std::sort(prev.data(), prev.data() + prev.size(), std::greater<double>());
    st.lambda_sm_prev = prev;
  }
  out.lambda_prev = st.lambda_sm_prev;
  st.p_prev = out.P;
  st.lambda_sm_prev = out.lambda_sm;
  return out;
}

/// Inverse of the first-order recursive average, followed by a clamp at zero.
inline RVector desmooth_unclamped(const RVector& now, const RVector& prev, double zeta) {
  if (now.size() != prev.size()) throw Error(ErrorKind::InvalidInput, "desmooth length mismatch");
  if (!(zeta >= 0.0 && zeta < 1.0)) throw Error(ErrorKind::InvalidInput, "forgetting factor must lie in [0, 1)");
  return (now - zeta * prev) / (1.0 - zeta);
}

inline RVector desmooth(const RVector& now, const RVector& prev, double zeta) {
  return desmooth_unclamped(now, prev, zeta).cwiseMax(0.0);
}

inline EarlyEstimate extract_early(const CMatrix& P, const RVector& lambda_hat, const HermitianMatrix& gamma,
                                   Eigen::Index n_sources) {
  const Eigen::Index M = P.rows();
  if (n_sources < 1 || n_sources >= M) throw Error(ErrorKind::InvalidInput, "need 1 <= N < M");
  if (lambda_hat.size() != M || P.cols() != M || gamma.dim() != M)
    throw Error(ErrorKind::InvalidInput, "extract_early dimension mismatch");
  EarlyEstimate e;
  e.lambda_x_hat = lambda_hat;
  e.phi_xl_hat = std::max(lambda_hat.tail(M - n_sources).mean(), 0.0);
  const RVector lam_xe = (lambda_hat.head(n_sources).array() - e.phi_xl_hat).cwiseMax(0.0);
  e.psi_xe_sqrt_hat = gamma.matrix() * P.leftCols(n_sources) * lam_xe.cwiseSqrt().asDiagonal();
  e.psi_xe_hat = HermitianMatrix(CMatrix(e.psi_xe_sqrt_hat * e.psi_xe_sqrt_hat.adjoint()));
  return e;
}

/// Extraction from an exact (non-recursive) correlation matrix.
inline EarlyEstimate estimate_early(const HermitianMatrix& psi_x, const HermitianMatrix& gamma, Eigen::Index n_sources,
                                    double jitter = 1e-10) {
  const GevdPair g = gevd(psi_x, gamma, jitter);
  return extract_early(g.vectors, g.values, gamma, n_sources);
}

struct FrameEstimate {
  EarlyEstimate early;
  bool ambiguous = false;
};

/// Smoothing, tracking, desmoothing and extraction for one bin and frame.
inline FrameEstimate process_frame(SmootherState& st, const HermitianMatrix& psi_inst, const HermitianMatrix& gamma,
                                   Eigen::Index n_sources, const TrackOptions& opt = {}) {
  update_smooth(st, psi_inst);
  const TrackResult tr = track_gevd(st, gamma, opt);
  const RVector lam = desmooth(tr.lambda_sm, tr.lambda_prev, st.zeta);
  // Extraction works on descending smoothed order; desmoothed values follow
  // their eigenvectors.
  const auto order = detail::descending_order(tr.lambda_sm);
  const Eigen::Index M = lam.size();
  CMatrix P(M, M);
  RVector l(M);
  for (Eigen::Index k = 0; k < M; ++k) {
    P.col(k) = tr.P.col(order[static_cast<std::size_t>(k)]);
    l(k) = lam(order[static_cast<std::size_t>(k)]);
  }
  return {extract_early(P, l, gamma, n_sources), tr.ambiguous};
}

}  // namespace earlypsd
