#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>

#include <Eigen/Dense>

namespace earlypsd {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

/// M x N square-root factor of an early correlation matrix.
using EarlySqrt = CMatrix;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class ErrorKind {
  InvalidInput,
  NotPositiveDefinite,
  SingularNormalEquations,
  InvalidReference,
  ConfigError,
  IoError,
  InvariantViolation,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::SingularNormalEquations: return "SingularNormalEquations";
    case ErrorKind::InvalidReference: return "InvalidReference";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const auto v = m(i, j);
      if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Complex>) {
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
      } else {
        if (!std::isfinite(v)) return false;
      }
    }
  return true;
}

/// Square complex matrix kept conjugate-symmetric. Construction symmetrizes
/// the input as (A + A^H) / 2.
class HermitianMatrix {
 public:
  HermitianMatrix() = default;

  explicit HermitianMatrix(const CMatrix& a) {
    if (a.rows() != a.cols() || a.rows() == 0)
      throw Error(ErrorKind::InvalidInput, "Hermitian matrix must be square and non-empty");
    if (!all_finite(a)) throw Error(ErrorKind::InvalidInput, "non-finite matrix entry");
    m_ = 0.5 * (a + a.adjoint());
  }

  explicit HermitianMatrix(const RMatrix& a) : HermitianMatrix(CMatrix(a.cast<Complex>())) {}

  static HermitianMatrix zero(Eigen::Index dim) { return HermitianMatrix(CMatrix(CMatrix::Zero(dim, dim))); }
  static HermitianMatrix identity(Eigen::Index dim) {
    return HermitianMatrix(CMatrix(CMatrix::Identity(dim, dim)));
  }

  const CMatrix& matrix() const noexcept { return m_; }
  Eigen::Index dim() const noexcept { return m_.rows(); }
  Complex operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  HermitianMatrix operator+(const HermitianMatrix& o) const { return HermitianMatrix(CMatrix(m_ + o.m_)); }
  HermitianMatrix operator*(double c) const { return HermitianMatrix(CMatrix(c * m_)); }

 private:
  CMatrix m_;
};

/// M x N relative transfer function matrix whose first row is exactly one.
class RetfMatrix {
 public:
  RetfMatrix() = default;

  /// Accepts a matrix whose first row is one up to `tol`; the row is then
  /// set to exactly one.
  explicit RetfMatrix(CMatrix h, double tol = 1e-9) : h_(std::move(h)) {
    if (h_.rows() < 1 || h_.cols() < 1)
      throw Error(ErrorKind::InvalidInput, "RETF matrix must be non-empty");
    if (!all_finite(h_)) throw Error(ErrorKind::InvalidInput, "non-finite RETF entry");
    for (Eigen::Index n = 0; n < h_.cols(); ++n) {
      if (std::abs(h_(0, n) - Complex(1.0, 0.0)) > tol)
        throw Error(ErrorKind::InvalidInput, "RETF first row must be ones");
      h_(0, n) = Complex(1.0, 0.0);
    }
  }

  /// Divides every column by its first entry.
  static RetfMatrix normalized(const CMatrix& h) {
    CMatrix out = h;
    for (Eigen::Index n = 0; n < out.cols(); ++n) {
      const Complex ref = out(0, n);
      if (std::abs(ref) == 0.0)
        throw Error(ErrorKind::InvalidInput, "cannot normalize column with zero reference entry");
      out.col(n) /= ref;
    }
    return RetfMatrix(std::move(out));
  }

  const CMatrix& matrix() const noexcept { return h_; }
  Eigen::Index mics() const noexcept { return h_.rows(); }
  Eigen::Index sources() const noexcept { return h_.cols(); }
  Complex operator()(Eigen::Index m, Eigen::Index n) const { return h_(m, n); }

 private:
  CMatrix h_;
};

/// Non-negative early PSDs, one per source.
class PsdVector {
 public:
  PsdVector() = default;

  explicit PsdVector(RVector v) : v_(std::move(v)) {
    for (Eigen::Index i = 0; i < v_.size(); ++i)
      if (!(v_(i) >= 0.0) || !std::isfinite(v_(i)))
        throw Error(ErrorKind::InvalidInput, "PSD entries must be finite and non-negative");
  }

  /// Elementwise squared magnitude of complex PSD square roots.
  static PsdVector from_sqrt(const CVector& roots) {
    return PsdVector(RVector(roots.cwiseAbs2()));
  }

  const RVector& values() const noexcept { return v_; }
  Eigen::Index size() const noexcept { return v_.size(); }
  double operator()(Eigen::Index i) const { return v_(i); }
  double sum() const { return v_.sum(); }

 private:
  RVector v_;
};

inline double to_db(double power_ratio) { return 10.0 * std::log10(power_ratio); }

}  // namespace earlypsd
