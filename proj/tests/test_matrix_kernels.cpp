#include <gtest/gtest.h>

#include "earlypsd/matrix_kernels.hpp"
#include "earlypsd/scene_model.hpp"
#include "test_util.hpp"

using namespace earlypsd;
using namespace testutil;

TEST(HermitianEvd, IdentityHasUnitValues) {
  const EvdResult e = hermitian_evd(HermitianMatrix::identity(3));
  EXPECT_TRUE(e.values.isApprox(RVector::Ones(3)));
  EXPECT_LE((e.vectors.adjoint() * e.vectors - CMatrix::Identity(3, 3)).norm(), 1e-12);
}

TEST(HermitianEvd, DiagonalSortedDescending) {
  RMatrix d = RVector(Eigen::Vector3d(3, 1, 2)).asDiagonal();
  const EvdResult e = hermitian_evd(HermitianMatrix(d));
  EXPECT_NEAR(e.values(0), 3.0, 1e-14);
  EXPECT_NEAR(e.values(1), 2.0, 1e-14);
  EXPECT_NEAR(e.values(2), 1.0, 1e-14);
  // permutation of the identity up to phase
  const RMatrix mag = e.vectors.cwiseAbs();
  EXPECT_NEAR(mag(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(mag(2, 1), 1.0, 1e-12);
  EXPECT_NEAR(mag(1, 2), 1.0, 1e-12);
}

TEST(HermitianEvd, ReconstructsRandomMatrices) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const HermitianMatrix A = random_hermitian(4, rng);
    const EvdResult e = hermitian_evd(A);
    const CMatrix rec = e.vectors * e.values.cast<Complex>().asDiagonal() * e.vectors.adjoint();
    EXPECT_LE((rec - A.matrix()).norm(), 1e-10 * A.matrix().norm());
    EXPECT_LE((e.vectors.adjoint() * e.vectors - CMatrix::Identity(4, 4)).norm(), 1e-10);
    for (Eigen::Index k = 1; k < 4; ++k) EXPECT_GE(e.values(k - 1), e.values(k));
  }
}

TEST(HermitianEvd, RejectsNonFinite) {
  CMatrix a = CMatrix::Identity(2, 2);
  a(0, 1) = Complex(std::nan(""), 0.0);
  EXPECT_THROW(HermitianMatrix{a}, Error);
}

TEST(HermitianMatrixType, SymmetrizesOnConstruction) {
  Rng rng(3);
  const CMatrix a = random_complex(5, 5, rng);
  const HermitianMatrix h(a);
  EXPECT_LE((h.matrix() - h.matrix().adjoint()).norm(), 1e-12 * h.matrix().norm());
}

TEST(Svd, IdentityAndReordering) {
  EXPECT_TRUE(svd(CMatrix::Identity(2, 2)).S.isApprox(RVector::Ones(2)));
  CMatrix d = CMatrix::Zero(2, 2);
  d(0, 0) = 0.5;
  d(1, 1) = 2.0;
  const SvdResult s = svd(d);
  EXPECT_NEAR(s.S(0), 2.0, 1e-14);
  EXPECT_NEAR(s.S(1), 0.5, 1e-14);
}

TEST(Svd, SingularValuesMatchEvdOracle) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const CMatrix A = random_complex(3, 3, rng);
    const SvdResult s = svd(A);
    EXPECT_LE((s.U * s.S.cast<Complex>().asDiagonal() * s.V.adjoint() - A).norm(), 1e-10 * A.norm());
    const EvdResult e = hermitian_evd(HermitianMatrix(CMatrix(A.adjoint() * A)));
    for (Eigen::Index k = 0; k < 3; ++k) EXPECT_NEAR(s.S(k), std::sqrt(std::max(e.values(k), 0.0)), 1e-9);
  }
}

TEST(Svd, RejectsNonFinite) {
  CMatrix a = CMatrix::Identity(2, 2);
  a(1, 1) = Complex(INFINITY, 0.0);
  EXPECT_THROW(svd(a), Error);
}

TEST(FactorHpd, TrivialCases) {
  EXPECT_TRUE(factor_hpd(HermitianMatrix::identity(4), 0.0).isApprox(CMatrix::Identity(4, 4)));
  RMatrix d = RVector(Eigen::Vector2d(4, 9)).asDiagonal();
  const CMatrix F = factor_hpd(HermitianMatrix(d), 0.0);
  EXPECT_NEAR(F(0, 0).real(), 2.0, 1e-14);
  EXPECT_NEAR(F(1, 1).real(), 3.0, 1e-14);
  EXPECT_NEAR(std::abs(F(0, 1)), 0.0, 1e-14);
}

TEST(FactorHpd, LowFrequencyCoherenceReconstructs) {
  const auto geom = ArrayGeometry::uniform_linear(5, 0.08);
  const HermitianMatrix G = diffuse_coherence(geom, 100.0);
  const CMatrix F = factor_hpd(G, 1e-10);
  EXPECT_LE((F * F.adjoint() - G.matrix()).norm(), 1e-8 * G.matrix().norm());
  EXPECT_LE(F.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().norm(), 0.0);
}

TEST(FactorHpd, JitterRescuesSingularMatrix) {
  // rank one: plain Cholesky fails, the jittered one succeeds
  const CMatrix ones = CMatrix::Ones(3, 3);
  const HermitianMatrix B(ones);
  const CMatrix F = factor_hpd(B, 1e-10);
  const CMatrix expect = ones + 1e-10 * CMatrix::Identity(3, 3);
  EXPECT_LE((F * F.adjoint() - expect).norm(), 1e-10 * expect.norm());
}

TEST(FactorHpd, IndefiniteThrows) {
  RMatrix d = RVector(Eigen::Vector2d(1, -1)).asDiagonal();
  try {
    factor_hpd(HermitianMatrix(d), 1e-10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotPositiveDefinite);
  }
}

TEST(Gevd, IdentityPair) {
  const GevdPair g = gevd(HermitianMatrix::identity(3), HermitianMatrix::identity(3));
  EXPECT_TRUE(g.values.isApprox(RVector::Ones(3)));
  EXPECT_LE((g.vectors.adjoint() * g.vectors - CMatrix::Identity(3, 3)).norm(), 1e-12);
}

TEST(Gevd, ScaledPairHasConstantValues) {
  Rng rng(2);
  const HermitianMatrix B = random_hpd(4, rng);
  const GevdPair g = gevd(B * 0.7, B);
  for (Eigen::Index k = 0; k < 4; ++k) EXPECT_NEAR(g.values(k), 0.7, 1e-10);
}

TEST(Gevd, TrailingValuesExposeLatePsd) {
  Rng rng(9);
  const Eigen::Index M = 4, N = 2;
  const HermitianMatrix B = random_hpd(M, rng);
  const CMatrix H = random_complex(M, N, rng);
  const RVector phi = RVector(Eigen::Vector2d(2.0, 0.5));
  const double phi_l = 0.3;
  const HermitianMatrix A(CMatrix(H * phi.cast<Complex>().asDiagonal() * H.adjoint() + phi_l * B.matrix()));
  const GevdPair g = gevd(A, B);
  EXPECT_NEAR(g.values(2), phi_l, 1e-8);
  EXPECT_NEAR(g.values(3), phi_l, 1e-8);
  EXPECT_GT(g.values(1), phi_l);
}

TEST(Gevd, ContractsAndIndependentOracle) {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const HermitianMatrix A = random_hermitian(5, rng);
    const HermitianMatrix B = random_hpd(5, rng);
    const GevdPair g = gevd(A, B);
    const CMatrix& P = g.vectors;
    EXPECT_LE((P.adjoint() * B.matrix() * P - CMatrix::Identity(5, 5)).norm(), 1e-8);
    CMatrix D = P.adjoint() * A.matrix() * P;
    EXPECT_LE((D.diagonal().real() - g.values).cwiseAbs().maxCoeff(), 1e-8 * g.values.cwiseAbs().maxCoeff());
    D.diagonal().setZero();
    EXPECT_LE(D.cwiseAbs().maxCoeff(), 1e-8 * g.values.cwiseAbs().maxCoeff());
    Eigen::GeneralizedSelfAdjointEigenSolver<CMatrix> ref(A.matrix(), B.matrix());
    RVector rv = ref.eigenvalues().reverse();
    EXPECT_LE((rv - g.values).cwiseAbs().maxCoeff(), 1e-8 * (1.0 + g.values.cwiseAbs().maxCoeff()));
  }
}

TEST(Gevd, DimensionMismatchThrows) {
  EXPECT_THROW(gevd(HermitianMatrix::identity(2), HermitianMatrix::identity(3)), Error);
}
