#include <gtest/gtest.h>

#include "earlypsd/metrics.hpp"
#include "earlypsd/procrustes_solver.hpp"
#include "earlypsd/scene_model.hpp"
#include "earlypsd/subspace_estimator.hpp"
#include "test_util.hpp"

using namespace earlypsd;
using namespace testutil;

namespace {
const ArrayGeometry kUla = ArrayGeometry::uniform_linear(5, 0.08);

double unitarity(const CMatrix& W) { return (W * W.adjoint() - CMatrix::Identity(W.rows(), W.rows())).norm(); }
}  // namespace

TEST(ProcrustesStep, HermitianPositiveCrossGivesIdentity) {
  Rng rng(1);
  const CMatrix C = random_hpd(3, rng).matrix();
  EXPECT_LE((procrustes_from_cross(C).omega - CMatrix::Identity(3, 3)).norm(), 1e-10);
}

TEST(ProcrustesStep, UnitaryCrossIsInverted) {
  Rng rng(2);
  const CMatrix Q = random_unitary(3, rng);
  EXPECT_LE((procrustes_from_cross(CMatrix(Q.adjoint())).omega - Q).norm(), 1e-10);
}

TEST(ProcrustesStep, RankDeficientIsFlagged) {
  Rng rng(3);
  const CMatrix a = random_complex(3, 1, rng);
  const ProcrustesStep s = procrustes_from_cross(CMatrix(a * a.adjoint()));
  EXPECT_TRUE(s.non_unique);
  EXPECT_LE(unitarity(s.omega), 1e-10);
}

TEST(ProcrustesStep, BeatsRandomUnitaries) {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const CMatrix C = random_complex(3, 3, rng);
    const CMatrix W = procrustes_from_cross(C).omega;
    const double best = (W * C).trace().real();
    for (int k = 0; k < 2000; ++k) EXPECT_GE(best, (random_unitary(3, rng) * C).trace().real() - 1e-12);
  }
}

TEST(PsdSqrtStep, LargeAlphaFollowsFirstRow) {
  Rng rng(5);
  const RetfMatrix H = random_retf(5, 3, rng);
  const CMatrix S = random_complex(5, 3, rng);
  const CMatrix W = random_unitary(3, rng);
  const CVector r = psd_sqrt_step(S, H, W, 1e12);
  const CVector first = (S * W).row(0).transpose();
  EXPECT_LE((r - first).norm(), 1e-4 * first.norm());
}

TEST(PsdSqrtStep, ZeroResidualFixedPoint) {
  Rng rng(6);
  const RetfMatrix H = random_retf(5, 3, rng);
  const CVector f = random_complex(3, 1, rng);
  const CMatrix W = random_unitary(3, rng);
  // Psi^{1/2} = H Diag(f) W^H so that Psi^{1/2} W = H Diag(f)
  const CMatrix S = H.matrix() * f.asDiagonal() * W.adjoint();
  for (double alpha : {0.0, 1.0, 1e3}) EXPECT_LE((psd_sqrt_step(S, H, W, alpha) - f).norm(), 1e-10);
}

TEST(PsdSqrtStep, DenseLeastSquaresOracle) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const RetfMatrix H = random_retf(5, 3, rng);
    const CMatrix S = random_complex(5, 3, rng);
    const CMatrix W = random_unitary(3, rng);
    const double alpha = 1.0;
    const CMatrix D = S * W;
    // unknowns f_n; rows: D(:,n) ~ h_n f_n and sqrt(alpha) D(0,n) ~ sqrt(alpha) f_n
    CMatrix A = CMatrix::Zero(18, 3);
    CVector y(18);
    for (int n = 0; n < 3; ++n) {
      A.block(5 * n, n, 5, 1) = H.matrix().col(n);
      y.segment(5 * n, 5) = D.col(n);
      A(15 + n, n) = std::sqrt(alpha);
      y(15 + n) = std::sqrt(alpha) * D(0, n);
    }
    const CVector ls = A.colPivHouseholderQr().solve(y);
    EXPECT_LE((psd_sqrt_step(S, H, W, alpha) - ls).norm(), 1e-9 * (1 + ls.norm()));
  }
}

TEST(SquareRootMp, ErrorFreeSceneRecoveredQuickly) {
  Rng rng(8);
  SceneConfig c;
  c.late_psd_phi_xl = 0.5;
  for (int t = 0; t < 20; ++t) {
    const CorrelationScene sc = synthesize_scene(kUla, c, rng);
    const EarlyEstimate e = estimate_early(sc.psi_x, sc.gamma, 3);
    SquareRootProblem p{e.psi_xe_sqrt_hat, sc.H_true, 1e3, 20, 1e-8,
                        ConventionalSeed{conventional_seed(sc.H_true, e.psi_xe_hat)}};
    const SquareRootSolution s = solve_square_root_mp(p);
    EXPECT_LE((s.phi_s_hat.values() - sc.phi_s_true.values()).norm(), 1e-8 * sc.phi_s_true.values().norm());
    EXPECT_LE(s.iterations_used, 2);
    EXPECT_LE(psd_error(s.phi_s_hat, sc.phi_s_true), -80.0);
  }
}

TEST(SquareRootMp, InvariantsHoldEveryIteration) {
  Rng rng(9);
  SceneConfig c;
  c.late_psd_phi_xl = 0.5;
  for (int t = 0; t < 100; ++t) {
    const CorrelationScene sc = synthesize_scene(kUla, c, rng);
    const EarlyEstimate e = estimate_early(sc.psi_x, sc.gamma, 3);
    const RetfMatrix Hh = perturb_retf(sc.H_true, rng.uniform(-30.0, 10.0), rng);
    const double alpha = std::pow(10.0, rng.uniform(-3.0, 5.0));
    const CMatrix& S = e.psi_xe_sqrt_hat;
    CVector f = initial_phi_sqrt({S, Hh, alpha, 20, 0.0, SumConstraintInit{}});
    CMatrix W = CMatrix::Identity(3, 3);
    for (int i = 0; i < 20; ++i) {
      // Omega step lowers the alpha-free part, phi step lowers the full objective.
      const double before_w = square_root_objective(S, Hh, W, f, 0.0);
      const CMatrix Wn = procrustes_step(S, Hh, f).omega;
      EXPECT_LE(unitarity(Wn), 1e-8);
      if (i > 0) {
        EXPECT_LE(square_root_objective(S, Hh, Wn, f, 0.0), before_w * (1 + 1e-10) + 1e-12);
      }
      W = Wn;
      const double before_f = square_root_objective(S, Hh, W, f, alpha);
      f = psd_sqrt_step(S, Hh, W, alpha);
      const double after = square_root_objective(S, Hh, W, f, alpha);
      EXPECT_LE(after, before_f * (1 + 1e-10) + 1e-12);
    }
    SquareRootProblem p{S, Hh, alpha, 20, 0.0, SumConstraintInit{}};
    const SquareRootSolution s = solve_square_root_mp(p);
    EXPECT_LE(unitarity(s.omega_hat), 1e-8);
    EXPECT_EQ((s.phi_s_hat.values() - s.phi_sqrt_hat.cwiseAbs2()).norm(), 0.0);
  }
}

TEST(SquareRootMp, InvariantToRightUnitaryRotation) {
  Rng rng(10);
  SceneConfig c;
  c.late_psd_phi_xl = 0.5;
  for (int t = 0; t < 20; ++t) {
    const CorrelationScene sc = synthesize_scene(kUla, c, rng);
    const EarlyEstimate e = estimate_early(sc.psi_x, sc.gamma, 3);
    const RetfMatrix Hh = perturb_retf(sc.H_true, -10.0, rng);
    const CMatrix Q = random_unitary(3, rng);
    const PsdVector seed = conventional_seed(Hh, e.psi_xe_hat);
    SquareRootProblem a{e.psi_xe_sqrt_hat, Hh, 1e3, 20, 1e-8, ConventionalSeed{seed}};
    SquareRootProblem b{CMatrix(e.psi_xe_sqrt_hat * Q), Hh, 1e3, 20, 1e-8, ConventionalSeed{seed}};
    const RVector pa = solve_square_root_mp(a).phi_s_hat.values(), pb = solve_square_root_mp(b).phi_s_hat.values();
    EXPECT_LE((pa - pb).norm(), 1e-8 * pa.norm());
  }
}

TEST(SquareRootMp, SumConstraintInitValue) {
  Rng rng(11);
  const CMatrix S = random_complex(5, 3, rng);
  const RetfMatrix H = random_retf(5, 3, rng);
  const CVector f = initial_phi_sqrt({S, H, 1.0, 20, 1e-8, SumConstraintInit{}});
  for (int n = 0; n < 3; ++n) EXPECT_NEAR(std::norm(f(n)), S.row(0).squaredNorm() / 3.0, 1e-12);
}

TEST(SquareRootMp, RejectsBadShapes) {
  Rng rng(12);
  SquareRootProblem p{random_complex(5, 2, rng), random_retf(5, 3, rng), 1.0, 20, 1e-8, SumConstraintInit{}};
  EXPECT_THROW(solve_square_root_mp(p), Error);
}
