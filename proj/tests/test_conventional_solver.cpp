#include <gtest/gtest.h>

#include "earlypsd/conventional_solver.hpp"
#include "earlypsd/scene_model.hpp"
#include "earlypsd/subspace_estimator.hpp"
#include "test_util.hpp"

using namespace earlypsd;
using namespace testutil;

namespace {

HermitianMatrix model(const RetfMatrix& H, const RVector& phi) {
  return HermitianMatrix(CMatrix(H.matrix() * phi.cast<Complex>().asDiagonal() * H.matrix().adjoint()));
}

const ArrayGeometry kUla = ArrayGeometry::uniform_linear(5, 0.08);

// Exact aliasing frequency of the (-30, 60) degree pair.
const double kAliasHz = 340.0 / (0.08 * (std::sin(kPi / 3) + 0.5));

}  // namespace

TEST(NormalMatrices, OrthogonalColumns) {
  const Eigen::Index M = 4;
  CMatrix h(M, 2);
  for (Eigen::Index m = 0; m < M; ++m) {
    h(m, 0) = 1.0;
    h(m, 1) = std::polar(1.0, 2 * kPi * static_cast<double>(m) / M);
  }
  const NormalMatrices nm = normal_matrices(RetfMatrix(h), HermitianMatrix::identity(M));
  EXPECT_LE((nm.A - 16.0 * RMatrix::Identity(2, 2)).norm(), 1e-12);
}

TEST(NormalMatrices, SingleSource) {
  Rng rng(1);
  const RetfMatrix H = random_retf(4, 1, rng);
  const HermitianMatrix P = random_hpd(4, rng);
  const NormalMatrices nm = normal_matrices(H, P);
  const CVector h = H.matrix().col(0);
  EXPECT_NEAR(nm.A(0, 0), std::pow(h.squaredNorm(), 2), 1e-10);
  EXPECT_NEAR(nm.b(0), (h.adjoint() * P.matrix() * h)(0).real(), 1e-10);
}

TEST(NormalMatrices, DirectFormulaOracle) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const RetfMatrix H = random_retf(5, 3, rng);
    const HermitianMatrix P = random_hermitian(5, rng);
    const NormalMatrices nm = normal_matrices(H, P);
    for (int n = 0; n < 3; ++n) {
      Complex bn = 0;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) bn += std::conj(H(i, n)) * P(i, j) * H(j, n);
      EXPECT_NEAR(nm.b(n), bn.real(), 1e-12 * (1 + std::abs(bn)));
      for (int k = 0; k < 3; ++k) {
        Complex ip = 0;
        for (int i = 0; i < 5; ++i) ip += std::conj(H(i, n)) * H(i, k);
        EXPECT_NEAR(nm.A(n, k), std::norm(ip), 1e-12 * (1 + std::norm(ip)));
      }
    }
    EXPECT_LE((nm.A - nm.A.transpose()).norm(), 0.0);
    EXPECT_GE(nm.A.minCoeff(), 0.0);
  }
}

TEST(SolveUnconstrained, ConsistentSystem) {
  const RetfMatrix H = steering_retf(kUla, {-30.0, 0.0, 60.0}, 2000.0);
  const RVector phi = Eigen::Vector3d(0.3, 1.7, 0.9);
  EXPECT_LE((solve_unconstrained(H, model(H, phi)).values() - phi).norm(), 1e-9);
}

TEST(SolveUnconstrained, AliasedColumnsAreSingular) {
  const RetfMatrix H = steering_retf(kUla, {-30.0, 0.0, 60.0}, kAliasHz);
  try {
    solve_unconstrained(H, model(H, RVector::Ones(3)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularNormalEquations);
  }
}

TEST(SolveUnconstrained, DenseLeastSquaresOracle) {
  Rng rng(3);
  SceneConfig c;
  c.late_psd_phi_xl = 0.5;
  for (int t = 0; t < 20; ++t) {
    const CorrelationScene sc = synthesize_scene(kUla, c, rng);
    const RetfMatrix Hh = perturb_retf(sc.H_true, -10.0, rng);
    // vec(Psi) = sum_n phi_n vec(h_n h_n^H), stacked as real and imaginary parts
    RMatrix D(50, 3);
    RVector y(50);
    for (int n = 0; n < 3; ++n) {
      const CMatrix hh = Hh.matrix().col(n) * Hh.matrix().col(n).adjoint();
      for (int i = 0; i < 25; ++i) {
        D(i, n) = hh(i % 5, i / 5).real();
        D(25 + i, n) = hh(i % 5, i / 5).imag();
      }
    }
    for (int i = 0; i < 25; ++i) {
      y(i) = sc.psi_xe(i % 5, i / 5).real();
      y(25 + i) = sc.psi_xe(i % 5, i / 5).imag();
    }
    const RVector ls = D.colPivHouseholderQr().solve(y).cwiseMax(0.0);
    EXPECT_LE((solve_unconstrained(Hh, sc.psi_xe).values() - ls).norm(), 1e-6 * (1 + ls.norm()));
  }
}

TEST(ConventionalMp, NonNegativeInitConvergesInOneIteration) {
  const RetfMatrix H = steering_retf(kUla, {-30.0, 0.0, 60.0}, 2000.0);
  const RVector phi = Eigen::Vector3d(0.3, 1.7, 0.9);
  ConventionalProblem p{model(H, phi), H, 1e3, std::nullopt, 20, 1e-8};
  const SolveReport r = solve_conventional_mp(p);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations_used, 1);
  EXPECT_LE((r.phi_s_hat.values() - phi).norm(), 1e-9);
}

TEST(ConventionalMp, ZeroAlphaMatchesUnconstrained) {
  Rng rng(4);
  SceneConfig c;
  int checked = 0;
  for (int t = 0; t < 50 && checked < 10; ++t) {
    const CorrelationScene sc = synthesize_scene(kUla, c, rng);
    const RetfMatrix Hh = perturb_retf(sc.H_true, -20.0, rng);
    const NormalMatrices nm = normal_matrices(Hh, sc.psi_xe);
    const RVector raw = nm.A.ldlt().solve(nm.b);
    if (raw.minCoeff() < 0.0) continue;
    ConventionalProblem p{sc.psi_xe, Hh, 0.0, std::nullopt, 20, 1e-8};
    EXPECT_LE((solve_conventional_mp(p).phi_s_hat.values() - solve_unconstrained(Hh, sc.psi_xe).values()).norm(),
              1e-9 * (1 + raw.norm()));
    ++checked;
  }
  EXPECT_EQ(checked, 10);
}

namespace {

// Plain projected gradient, run long.
RVector projected_gradient_oracle(const RMatrix& A, const RVector& b, RVector x, int iters) {
  Eigen::SelfAdjointEigenSolver<RMatrix> es(A);
  const double mu = 1.0 / es.eigenvalues().maxCoeff();
  for (int i = 0; i < iters; ++i) x = (x + mu * (b - A * x)).cwiseMax(0.0);
  return x;
}

}  // namespace

TEST(ConventionalMp, ActiveConstraintBeatsNaiveClamp) {
  Rng rng(5);
  int found = 0;
  for (int t = 0; t < 2000 && found < 5; ++t) {
    const RetfMatrix H = steering_retf(kUla, {-30.0, 0.0, 60.0}, 2000.0);
    const RetfMatrix Hh = perturb_retf(H, -5.0, rng);
    const RVector phi = Eigen::Vector3d(1.0, 1.0, 0.0);
    const HermitianMatrix P = model(H, phi);
    const double alpha = 10.0;
    const NormalMatrices nm = normal_matrices(Hh, P);
    const RMatrix A = nm.A + alpha * RMatrix::Ones(3, 3);
    const RVector b = nm.b + RVector::Constant(3, alpha * P(0, 0).real());
    const RVector raw = A.ldlt().solve(b);
    if (raw(2) >= 0.0 || raw(0) <= 0.0 || raw(1) <= 0.0) continue;
    ++found;
    ConventionalProblem p{P, Hh, alpha, std::nullopt, 20, 1e-8};
    const SolveReport r = solve_conventional_mp(p);
    const RVector clamp = raw.cwiseMax(0.0);
    EXPECT_LE(r.final_objective, conventional_objective(P, Hh, clamp, alpha) + 1e-12);
    EXPECT_EQ(r.phi_s_hat(2), 0.0);
    const RVector oracle = projected_gradient_oracle(A, b, clamp, 10000);
    EXPECT_LE(r.final_objective - conventional_objective(P, Hh, oracle, alpha),
              1e-3 * conventional_objective(P, Hh, clamp, alpha));
  }
  EXPECT_EQ(found, 5);
}

TEST(ConventionalMp, ObjectiveMonotoneAndNonNegative) {
  Rng rng(6);
  SceneConfig c;
  c.late_psd_phi_xl = 0.5;
  for (int t = 0; t < 200; ++t) {
    const CorrelationScene sc = synthesize_scene(kUla, c, rng);
    const EarlyEstimate e = estimate_early(sc.psi_x, sc.gamma, 3);
    const RetfMatrix Hh = perturb_retf(sc.H_true, rng.uniform(-30.0, 10.0), rng);
    ConventionalProblem p{e.psi_xe_hat, Hh, std::pow(10.0, rng.uniform(-3.0, 5.0)), std::nullopt, 20, 0.0};
    const SolveReport r = solve_conventional_mp(p);
    EXPECT_GE(r.phi_s_hat.values().minCoeff(), 0.0);
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
      EXPECT_LE(r.objective_trace[i], r.objective_trace[i - 1] * (1 + 1e-12) + 1e-12);
  }
}

TEST(ConventionalMp, HomogeneousAtZeroAlpha) {
  Rng rng(7);
  const RetfMatrix Hh = random_retf(5, 3, rng);
  const HermitianMatrix P = random_hpd(5, rng);
  ConventionalProblem a{P, Hh, 0.0, std::nullopt, 20, 1e-8};
  ConventionalProblem b{P * 4.0, Hh, 0.0, std::nullopt, 20, 1e-8};
  EXPECT_LE((solve_conventional_mp(b).phi_s_hat.values() - 4.0 * solve_conventional_mp(a).phi_s_hat.values()).norm(),
            1e-9 * (1 + solve_conventional_mp(b).phi_s_hat.values().norm()));
}

TEST(ConventionalMp, SingularInitFallsBackAndFlags) {
  const RetfMatrix H = steering_retf(kUla, {-30.0, 0.0, 60.0}, kAliasHz);
  ConventionalProblem p{model(H, RVector::Ones(3)), H, 1e3, std::nullopt, 20, 1e-8};
  const SolveReport r = solve_conventional_mp(p);
  EXPECT_TRUE(r.singular_init);
  EXPECT_GE(r.phi_s_hat.values().minCoeff(), 0.0);
  EXPECT_NEAR(r.phi_s_hat.sum(), 3.0, 1e-6);
}

TEST(ConventionalMp, RejectsBadParameters) {
  Rng rng(8);
  const RetfMatrix Hh = random_retf(4, 2, rng);
  ConventionalProblem p{HermitianMatrix::identity(4), Hh, -1.0, std::nullopt, 20, 1e-8};
  EXPECT_THROW(solve_conventional_mp(p), Error);
  p.alpha = 1.0;
  p.mu = 0.0;
  EXPECT_THROW(solve_conventional_mp(p), Error);
}
