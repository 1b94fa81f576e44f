#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "earlypsd/types.hpp"

namespace earlypsd {

/// 10 log10(||H_hat - H||_F^2 / (tr(H^H H) - N)); -inf for an exact estimate.
inline double retf_error(const RetfMatrix& H_hat, const RetfMatrix& H_true) {
  if (H_hat.mics() != H_true.mics() || H_hat.sources() != H_true.sources())
    throw Error(ErrorKind::InvalidInput, "retf_error dimension mismatch");
  const double num = (H_hat.matrix() - H_true.matrix()).squaredNorm();
  const double den = H_true.matrix().squaredNorm() - static_cast<double>(H_true.sources());
  if (!(den > 0.0)) throw Error(ErrorKind::InvalidReference, "reference RETF has no energy beyond row one");
  if (num == 0.0) return -kInf;
  return to_db(num / den);
}

/// 10 log10(||sqrt(phi_hat) - sqrt(phi)||^2 / 1^T phi).
inline double psd_error(const PsdVector& phi_hat, const PsdVector& phi_true) {
  if (phi_hat.size() != phi_true.size()) throw Error(ErrorKind::InvalidInput, "psd_error length mismatch");
  const double den = phi_true.sum();
  if (!(den > 0.0)) throw Error(ErrorKind::InvalidReference, "reference PSD is all zero");
  const double num = (phi_hat.values().cwiseSqrt() - phi_true.values().cwiseSqrt()).squaredNorm();
  if (num == 0.0) return -kInf;
  return to_db(num / den);
}

/// Per-source PSD values over frames and bins. data[n] is L x K.
struct PsdTrack {
  std::vector<RMatrix> data;

  PsdTrack() = default;
  PsdTrack(Eigen::Index sources, Eigen::Index frames, Eigen::Index bins)
      : data(static_cast<std::size_t>(sources), RMatrix::Zero(frames, bins)) {}

  Eigen::Index sources() const { return static_cast<Eigen::Index>(data.size()); }
  Eigen::Index frames() const { return data.empty() ? 0 : data.front().rows(); }
  Eigen::Index bins() const { return data.empty() ? 0 : data.front().cols(); }

  void validate() const {
    for (const auto& d : data) {
      if (d.rows() != frames() || d.cols() != bins()) throw Error(ErrorKind::InvalidInput, "ragged PSD track");
      if (!all_finite(d) || (d.size() && d.minCoeff() < 0.0))
        throw Error(ErrorKind::InvalidInput, "PSD track must be finite and non-negative");
    }
  }
};

/// Square-root domain components; same layout as PsdTrack.
struct TrackDecomposition {
  std::vector<RMatrix> bar;
  std::vector<RMatrix> e_int;
  std::vector<RMatrix> e_art;
};

/// Projects each estimated sqrt track onto its own reference and onto the
/// span of all references, independently per bin over the L frames.
inline TrackDecomposition decompose_tracks(const PsdTrack& phi_hat, const PsdTrack& phi_ref) {
  phi_hat.validate();
  phi_ref.validate();
  if (phi_hat.sources() != phi_ref.sources() || phi_hat.frames() != phi_ref.frames() ||
      phi_hat.bins() != phi_ref.bins())
    throw Error(ErrorKind::InvalidInput, "track shapes differ");
  const Eigen::Index N = phi_hat.sources();
  const Eigen::Index L = phi_hat.frames();
  const Eigen::Index K = phi_hat.bins();
  TrackDecomposition out;
  out.bar.assign(static_cast<std::size_t>(N), RMatrix::Zero(L, K));
  out.e_int = out.bar;
  out.e_art = out.bar;
  RMatrix R(L, N);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index n = 0; n < N; ++n) R.col(n) = phi_ref.data[static_cast<std::size_t>(n)].col(k).cwiseSqrt();
    // Orthonormal basis of the reference span; zero or dependent columns drop out.
    Eigen::ColPivHouseholderQR<RMatrix> qr(R);
    qr.setThreshold(1e-12);
    const Eigen::Index rank = qr.rank();
    const RMatrix Q = RMatrix(qr.householderQ()).leftCols(rank);
    for (Eigen::Index n = 0; n < N; ++n) {
      const auto sn = static_cast<std::size_t>(n);
      const RVector y = phi_hat.data[sn].col(k).cwiseSqrt();
      const RVector r = R.col(n);
      const double rr = r.squaredNorm();
      const RVector bar = rr > 0.0 ? RVector(r * (r.dot(y) / rr)) : RVector(RVector::Zero(L));
      const RVector all = Q * (Q.transpose() * y);
      out.bar[sn].col(k) = bar;
      out.e_int[sn].col(k) = all - bar;
      out.e_art[sn].col(k) = y - all;
    }
  }
  return out;
}

struct Band {
  double lo_hz = 0.0;
  double hi_hz = 0.0;
  double center_hz = 0.0;
};

/// Base-2 third-octave bands around 1 kHz, clipped to (0, fs/2]. Only bands
/// holding at least one bin centre of an n_stft-point transform are kept.
inline std::vector<Band> third_octave_bands(double fs, Eigen::Index n_stft) {
  const double nyq = fs / 2.0;
  const double df = fs / static_cast<double>(n_stft);
  std::vector<Band> out;
  for (int k = -40; k <= 40; ++k) {
    const double fc = 1000.0 * std::pow(2.0, k / 3.0);
    double lo = fc * std::pow(2.0, -1.0 / 6.0);
    double hi = fc * std::pow(2.0, 1.0 / 6.0);
    if (lo >= nyq) break;
    hi = std::min(hi, nyq);
    lo = std::max(lo, 0.0);
    bool any = false;
    for (Eigen::Index b = 1; b <= n_stft / 2 && !any; ++b) {
      const double f = b * df;
      any = f > lo && f <= hi;
    }
    if (any) out.push_back({lo, hi, fc});
  }
  return out;
}

struct BandRatios {
  Band band;
  double sir_db = 0.0;
  double sar_db = 0.0;
  double sdr_db = 0.0;
};

/// 10 log10(num/den) with +inf for den = 0, -inf for num = 0 and NaN if both vanish.
inline double ratio_db(double num, double den) {
  if (den == 0.0 && num == 0.0) return std::numeric_limits<double>::quiet_NaN();
  if (den == 0.0) return kInf;
  if (num == 0.0) return -kInf;
  return to_db(num / den);
}

/// Summed squared norms per band over bins, frames and sources.
struct BandEnergies {
  double bar = 0.0;
  double e_int = 0.0;
  double e_art = 0.0;
  double signal = 0.0;      // ||bar + e_int||^2
  double distortion = 0.0;  // ||e_int + e_art||^2
};

inline std::vector<BandEnergies> band_energies(const TrackDecomposition& d, double fs, Eigen::Index n_stft,
                                               const std::vector<Band>& bands) {
  if (d.bar.empty()) throw Error(ErrorKind::InvalidInput, "empty decomposition");
  const Eigen::Index K = d.bar.front().cols();
  if (K != n_stft / 2 + 1) throw Error(ErrorKind::InvalidInput, "bin count does not match transform length");
  const double df = fs / static_cast<double>(n_stft);
  std::vector<BandEnergies> out;
  for (const Band& b : bands) {
    BandEnergies e;
    for (Eigen::Index k = 1; k < K; ++k) {
      const double f = static_cast<double>(k) * df;
      if (!(f > b.lo_hz && f <= b.hi_hz)) continue;
      for (std::size_t n = 0; n < d.bar.size(); ++n) {
        e.bar += d.bar[n].col(k).squaredNorm();
        e.e_int += d.e_int[n].col(k).squaredNorm();
        e.e_art += d.e_art[n].col(k).squaredNorm();
        e.signal += (d.bar[n].col(k) + d.e_int[n].col(k)).squaredNorm();
        e.distortion += (d.e_int[n].col(k) + d.e_art[n].col(k)).squaredNorm();
      }
    }
    out.push_back(e);
  }
  return out;
}

inline std::vector<BandRatios> band_ratios(const TrackDecomposition& d, double fs, Eigen::Index n_stft,
                                           const std::vector<Band>& bands) {
  const std::vector<BandEnergies> en = band_energies(d, fs, n_stft, bands);
  std::vector<BandRatios> out;
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const BandEnergies& e = en[i];
    out.push_back({bands[i], ratio_db(e.bar, e.e_int), ratio_db(e.signal, e.e_art), ratio_db(e.bar, e.distortion)});
  }
  return out;
}

inline std::vector<BandRatios> band_ratios(const TrackDecomposition& d, double fs, Eigen::Index n_stft) {
  return band_ratios(d, fs, n_stft, third_octave_bands(fs, n_stft));
}

/// Type-7 sample quantile. Interpolation next to an infinite value takes the
/// lower order statistic.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double g = h - static_cast<double>(lo);
  if (g == 0.0 || !std::isfinite(v[lo]) || !std::isfinite(v[hi])) return v[lo];
  return v[lo] + g * (v[hi] - v[lo]);
}

inline double median(const std::vector<double>& v) { return quantile(v, 0.5); }

}  // namespace earlypsd
