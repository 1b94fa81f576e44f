#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "earlypsd/rng.hpp"
#include "earlypsd/types.hpp"

namespace earlypsd {

struct ArrayGeometry {
  std::vector<std::array<double, 3>> mic_positions;  // meters
  double speed_of_sound = 340.0;

  /// M microphones on the x axis, spaced `spacing` meters, first at the origin.
  static ArrayGeometry uniform_linear(int mics, double spacing, double c = 340.0) {
    ArrayGeometry g;
    g.speed_of_sound = c;
    for (int m = 0; m < mics; ++m) g.mic_positions.push_back({m * spacing, 0.0, 0.0});
    g.validate();
    return g;
  }

  Eigen::Index mics() const { return static_cast<Eigen::Index>(mic_positions.size()); }

  double distance(std::size_t i, std::size_t j) const {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = mic_positions[i][k] - mic_positions[j][k];
      s += d * d;
    }
    return std::sqrt(s);
  }

  void validate() const {
    if (mic_positions.size() < 2) throw Error(ErrorKind::InvalidInput, "need at least two microphones");
    if (!(speed_of_sound > 0.0)) throw Error(ErrorKind::InvalidInput, "speed of sound must be positive");
    for (std::size_t i = 0; i < mic_positions.size(); ++i)
      for (std::size_t j = i + 1; j < mic_positions.size(); ++j)
        if (distance(i, j) == 0.0) throw Error(ErrorKind::InvalidInput, "microphone positions must be distinct");
  }
};

struct SceneConfig {
  std::vector<double> doas_deg{-30.0, 0.0, 60.0};
  double freq_hz = 2000.0;
  double laplace_diversity_b = 1.0;
  double late_psd_phi_xl = 0.0;
  double sample_rate = 16000.0;
};

struct CorrelationScene {
  HermitianMatrix psi_x;
  HermitianMatrix psi_xe;
  EarlySqrt psi_xe_sqrt;
  RetfMatrix H_true;
  PsdVector phi_s_true;
  HermitianMatrix gamma;
  CVector s;
};

/// Unit vector of a far-field direction in the array plane; 0 deg is broadside.
inline std::array<double, 3> doa_direction(double doa_deg) {
  const double t = doa_deg * kPi / 180.0;
  return {std::sin(t), std::cos(t), 0.0};
}

/// Far-field propagation delay of each microphone relative to the origin.
inline double far_field_delay(const ArrayGeometry& geom, std::size_t m, double doa_deg) {
  const auto u = doa_direction(doa_deg);
  const auto& p = geom.mic_positions[m];
  return (p[0] * u[0] + p[1] * u[1] + p[2] * u[2]) / geom.speed_of_sound;
}

inline RetfMatrix steering_retf(const ArrayGeometry& geom, const std::vector<double>& doas_deg,
                                double freq_hz) {
  geom.validate();
  if (doas_deg.empty()) throw Error(ErrorKind::InvalidInput, "no directions given");
  if (!(freq_hz > 0.0)) throw Error(ErrorKind::InvalidInput, "frequency must be positive");
  const Eigen::Index M = geom.mics();
  const Eigen::Index N = static_cast<Eigen::Index>(doas_deg.size());
  CMatrix H(M, N);
  for (Eigen::Index n = 0; n < N; ++n) {
    const double d = doas_deg[static_cast<std::size_t>(n)];
    const double tau0 = far_field_delay(geom, 0, d);
    for (Eigen::Index m = 0; m < M; ++m) {
      const double dt = far_field_delay(geom, static_cast<std::size_t>(m), d) - tau0;
      H(m, n) = std::polar(1.0, -2.0 * kPi * freq_hz * dt);
    }
    H(0, n) = Complex(1.0, 0.0);
  }
  return RetfMatrix(H);
}

inline double sinc(double x) {
  if (x == 0.0) return 1.0;
  return std::sin(kPi * x) / (kPi * x);
}

/// Spherical-isotropic coherence sinc(2 f d_ij / c).
inline HermitianMatrix diffuse_coherence(const ArrayGeometry& geom, double freq_hz) {
  geom.validate();
  const Eigen::Index M = geom.mics();
  RMatrix G(M, M);
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = 0; j < M; ++j)
      G(i, j) = i == j ? 1.0
                       : sinc(2.0 * freq_hz *
                              geom.distance(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) /
                              geom.speed_of_sound);
  return HermitianMatrix(G);
}

/// Real and imaginary parts drawn from a Laplace law with scale b/2.
inline CVector sample_sources(double b, Eigen::Index n, Rng& rng) {
  if (!(b >= 0.0)) throw Error(ErrorKind::InvalidInput, "diversity must be non-negative");
  CVector s(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double re = rng.laplace(0.5 * b);
    const double im = rng.laplace(0.5 * b);
    s(i) = Complex(re, im);
  }
  return s;
}

/// Scene from given source coefficients.
inline CorrelationScene synthesize_scene(const ArrayGeometry& geom, const SceneConfig& cfg,
                                         const CVector& s) {
  if (cfg.doas_deg.size() > static_cast<std::size_t>(geom.mics()))
    throw Error(ErrorKind::InvalidInput, "more sources than microphones");
  if (!(cfg.freq_hz > 0.0) || cfg.freq_hz > cfg.sample_rate / 2.0)
    throw Error(ErrorKind::InvalidInput, "frequency outside (0, fs/2]");
  if (!(cfg.late_psd_phi_xl >= 0.0)) throw Error(ErrorKind::InvalidInput, "late PSD must be non-negative");
  if (s.size() != static_cast<Eigen::Index>(cfg.doas_deg.size()))
    throw Error(ErrorKind::InvalidInput, "source vector size mismatch");
  CorrelationScene sc;
  sc.H_true = steering_retf(geom, cfg.doas_deg, cfg.freq_hz);
  sc.gamma = diffuse_coherence(geom, cfg.freq_hz);
  sc.s = s;
  sc.phi_s_true = PsdVector(RVector(s.cwiseAbs2()));
  const CMatrix& H = sc.H_true.matrix();
  sc.psi_xe_sqrt = H * s.asDiagonal();
  sc.psi_xe = HermitianMatrix(CMatrix(sc.psi_xe_sqrt * sc.psi_xe_sqrt.adjoint()));
  sc.psi_x = HermitianMatrix(CMatrix(sc.psi_xe.matrix() + cfg.late_psd_phi_xl * sc.gamma.matrix()));
  return sc;
}

inline CorrelationScene synthesize_scene(const ArrayGeometry& geom, const SceneConfig& cfg, Rng& rng) {
  const CVector s = sample_sources(cfg.laplace_diversity_b,
                                   static_cast<Eigen::Index>(cfg.doas_deg.size()), rng);
  return synthesize_scene(geom, cfg, s);
}

/// I.i.d. complex Gaussian error direction with zero first row.
inline CMatrix draw_retf_error(Eigen::Index mics, Eigen::Index sources, Rng& rng) {
  CMatrix E = CMatrix::Zero(mics, sources);
  for (Eigen::Index n = 0; n < sources; ++n)
    for (Eigen::Index m = 1; m < mics; ++m) E(m, n) = rng.complex_gaussian();
  return E;
}

/// Adds the error direction E rescaled so that the RETF error hits the target.
inline RetfMatrix apply_retf_error(const RetfMatrix& H, const CMatrix& E, double target_eps_h_db) {
  if (std::isinf(target_eps_h_db) && target_eps_h_db < 0.0) return H;
  if (!std::isfinite(target_eps_h_db)) throw Error(ErrorKind::InvalidInput, "target must be finite or -inf");
  const double denom = H.matrix().squaredNorm() - static_cast<double>(H.sources());
  const double e2 = E.squaredNorm();
  if (!(e2 > 0.0)) throw Error(ErrorKind::InvalidInput, "zero error direction");
  const double scale = std::sqrt(denom * std::pow(10.0, target_eps_h_db / 10.0) / e2);
  CMatrix out = H.matrix() + scale * E;
  out.row(0).setOnes();
  return RetfMatrix(out);
}

inline RetfMatrix perturb_retf(const RetfMatrix& H, double target_eps_h_db, Rng& rng) {
  if (std::isinf(target_eps_h_db) && target_eps_h_db < 0.0) return H;
  return apply_retf_error(H, draw_retf_error(H.mics(), H.sources(), rng), target_eps_h_db);
}

}  // namespace earlypsd
