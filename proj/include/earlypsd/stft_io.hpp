#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "earlypsd/metrics.hpp"
#include "earlypsd/rng.hpp"
#include "earlypsd/scene_model.hpp"
#include "earlypsd/types.hpp"

namespace earlypsd {

/// samples is length x channels.
struct Waveform {
  RMatrix samples;
  double sample_rate = 16000.0;

  Eigen::Index length() const { return samples.rows(); }
  Eigen::Index channels() const { return samples.cols(); }
};

/// channels[c] is L x K with K = n_stft / 2 + 1.
struct StftTensor {
  std::vector<CMatrix> channels;
  Eigen::Index n_stft = 512;
  Eigen::Index hop = 256;
  Eigen::Index signal_length = 0;
  double sample_rate = 16000.0;
  bool padded = false;

  Eigen::Index frames() const { return channels.empty() ? 0 : channels.front().rows(); }
  Eigen::Index bins() const { return n_stft / 2 + 1; }
};

struct Rir {
  RVector taps;
  double sample_rate = 16000.0;
  Eigen::Index early_len = 512;
};

/// Square root of the periodic Hann window.
inline RVector sqrt_hann(Eigen::Index n) {
  RVector w(n);
  for (Eigen::Index i = 0; i < n; ++i)
    w(i) = std::sqrt(0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n)));
  return w;
}

inline Eigen::Index stft_frame_count(Eigen::Index length, Eigen::Index n_stft) {
  const Eigen::Index hop = n_stft / 2;
  if (length < n_stft) return 1;
  return (length - n_stft) / hop + 1;
}

inline StftTensor stft_analyze(const Waveform& w, Eigen::Index n_stft = 512) {
  if (n_stft < 2 || n_stft % 2 != 0) throw Error(ErrorKind::InvalidInput, "transform length must be even");
  if (!all_finite(w.samples)) throw Error(ErrorKind::InvalidInput, "non-finite samples");
  StftTensor t;
  t.n_stft = n_stft;
  t.hop = n_stft / 2;
  t.sample_rate = w.sample_rate;
  t.signal_length = w.length();
  RMatrix x = w.samples;
  if (x.rows() < n_stft) {
    t.padded = true;
    RMatrix p = RMatrix::Zero(n_stft, x.cols());
    p.topRows(x.rows()) = x;
    x = p;
  }
  const Eigen::Index L = stft_frame_count(x.rows(), n_stft);
  const Eigen::Index K = n_stft / 2 + 1;
  const RVector win = sqrt_hann(n_stft);
  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(n_stft));
  std::vector<Complex> spec;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    CMatrix S(L, K);
    for (Eigen::Index l = 0; l < L; ++l) {
      for (Eigen::Index i = 0; i < n_stft; ++i)
        frame[static_cast<std::size_t>(i)] = x(l * t.hop + i, c) * win(i);
      fft.fwd(spec, frame);
      for (Eigen::Index k = 0; k < K; ++k) S(l, k) = spec[static_cast<std::size_t>(k)];
    }
    t.channels.push_back(std::move(S));
  }
  return t;
}

/// Weighted overlap-add. Samples in [hop, L*hop) are reconstructed exactly.
inline Waveform stft_synthesize(const StftTensor& t) {
  const Eigen::Index n = t.n_stft;
  const Eigen::Index L = t.frames();
  const Eigen::Index K = t.bins();
  const Eigen::Index len = L == 0 ? 0 : (L - 1) * t.hop + n;
  const RVector win = sqrt_hann(n);
  Waveform w;
  w.sample_rate = t.sample_rate;
  w.samples = RMatrix::Zero(len, static_cast<Eigen::Index>(t.channels.size()));
  Eigen::FFT<double> fft;
  std::vector<Complex> spec(static_cast<std::size_t>(n));
  std::vector<double> frame;
  for (std::size_t c = 0; c < t.channels.size(); ++c) {
    for (Eigen::Index l = 0; l < L; ++l) {
      for (Eigen::Index k = 0; k < K; ++k) spec[static_cast<std::size_t>(k)] = t.channels[c](l, k);
      for (Eigen::Index k = K; k < n; ++k) spec[static_cast<std::size_t>(k)] = std::conj(t.channels[c](l, n - k));
      fft.inv(frame, spec);
      for (Eigen::Index i = 0; i < n; ++i)
        w.samples(l * t.hop + i, static_cast<Eigen::Index>(c)) += frame[static_cast<std::size_t>(i)] * win(i);
    }
  }
  return w;
}

/// Linear convolution through the FFT, full length.
inline RVector fft_convolve(const RVector& x, const RVector& h) {
  if (x.size() == 0 || h.size() == 0) return RVector();
  const Eigen::Index out_len = x.size() + h.size() - 1;
  Eigen::Index n = 1;
  while (n < out_len) n <<= 1;
  std::vector<double> a(static_cast<std::size_t>(n), 0.0), b(static_cast<std::size_t>(n), 0.0);
  std::copy(x.data(), x.data() + x.size(), a.begin());
  std::copy(h.data(), h.data() + h.size(), b.begin());
  Eigen::FFT<double> fft;
  std::vector<Complex> A, B;
  fft.fwd(A, a);
  fft.fwd(B, b);
  for (std::size_t i = 0; i < A.size(); ++i) A[i] *= B[i];
  std::vector<double> y;
  fft.inv(y, A);
  RVector out(out_len);
  for (Eigen::Index i = 0; i < out_len; ++i) out(i) = y[static_cast<std::size_t>(i)];
  return out;
}

/// Adds a windowed-sinc fractional-delay impulse of the given gain at `delay` samples.
inline void add_fractional_impulse(RVector& taps, double delay, double gain, int half_width = 16) {
  const double rounded = std::round(delay);
  if (std::abs(delay - rounded) < 1e-9) {
    const auto i = static_cast<Eigen::Index>(rounded);
    if (i >= 0 && i < taps.size()) taps(i) += gain;
    return;
  }
  const auto centre = static_cast<Eigen::Index>(std::floor(delay));
  for (Eigen::Index i = centre - half_width + 1; i <= centre + half_width; ++i) {
    if (i < 0 || i >= taps.size()) continue;
    const double x = static_cast<double>(i) - delay;
    const double hann = 0.5 + 0.5 * std::cos(kPi * x / static_cast<double>(half_width));
    taps(i) += gain * sinc(x) * hann;
  }
}

inline double decay_envelope(double t, double t60) { return std::exp(-3.0 * std::log(10.0) * t / t60); }

/// Unit direct tap followed by an exponentially decaying Gaussian tail.
inline Rir synth_rir(Rng& rng, double t60_s, double sample_rate, double direct_delay_s, double length_s = 0.0,
                     double tail_gain = 0.1, Eigen::Index early_len = 512) {
  if (!(t60_s > 0.0)) throw Error(ErrorKind::InvalidInput, "t60 must be positive");
  if (!(direct_delay_s >= 0.0)) throw Error(ErrorKind::InvalidInput, "direct delay must be non-negative");
  if (length_s <= 0.0) length_s = direct_delay_s + t60_s;
  Rir r;
  r.sample_rate = sample_rate;
  r.early_len = early_len;
  const auto len = static_cast<Eigen::Index>(std::ceil(length_s * sample_rate));
  r.taps = RVector::Zero(std::max<Eigen::Index>(len, 1));
  const double d = direct_delay_s * sample_rate;
  add_fractional_impulse(r.taps, d, 1.0);
  const auto start = static_cast<Eigen::Index>(std::floor(d)) + 1;
  for (Eigen::Index i = start; i < r.taps.size(); ++i) {
    const double t = (static_cast<double>(i) - d) / sample_rate;
    r.taps(i) += tail_gain * rng.gaussian() * decay_envelope(t, t60_s);
  }
  r.early_len = std::min(r.early_len, r.taps.size());
  return r;
}

struct ArrayRirConfig {
  double t60_s = 0.61;
  double length_s = 0.7;
  double base_delay_s = 0.002;
  double drr_db = -6.0;           // direct-to-reverberant energy ratio at mic one
  double reflection_density = 4000.0;  // reflections per second
  Eigen::Index early_len = 512;
};

/// Multichannel RIRs for a far-field source. The tail is a sum of plane-wave
/// reflections from uniformly random 3-D directions, which makes it diffuse.
inline std::vector<Rir> synth_array_rirs(const ArrayGeometry& geom, double doa_deg, double sample_rate,
                                         const ArrayRirConfig& cfg, Rng& rng) {
  geom.validate();
  const Eigen::Index M = geom.mics();
  const auto len = static_cast<Eigen::Index>(std::ceil(cfg.length_s * sample_rate));
  std::vector<RVector> direct(static_cast<std::size_t>(M), RVector::Zero(len));
  std::vector<RVector> tail(static_cast<std::size_t>(M), RVector::Zero(len));
  // Keep every delay positive: shift by the largest aperture lead.
  double aperture = 0.0;
  for (std::size_t m = 0; m < static_cast<std::size_t>(M); ++m) aperture = std::max(aperture, geom.distance(0, m));
  const double lead = aperture / geom.speed_of_sound;
  const double t0 = cfg.base_delay_s + lead;
  for (Eigen::Index m = 0; m < M; ++m)
    add_fractional_impulse(direct[static_cast<std::size_t>(m)],
                           (t0 + far_field_delay(geom, static_cast<std::size_t>(m), doa_deg)) * sample_rate, 1.0);
  const double span = cfg.length_s - t0 - lead - 0.002;
  const auto count = static_cast<long>(cfg.reflection_density * span);
  for (long j = 0; j < count; ++j) {
    const double t = t0 + 0.001 + rng.uniform() * span;
    const double z = rng.uniform(-1.0, 1.0);
    const double az = rng.uniform(0.0, 2.0 * kPi);
    const double rxy = std::sqrt(1.0 - z * z);
    const std::array<double, 3> u{rxy * std::cos(az), rxy * std::sin(az), z};
    const double g = rng.gaussian() * decay_envelope(t - t0, cfg.t60_s);
    for (Eigen::Index m = 0; m < M; ++m) {
      const auto& p = geom.mic_positions[static_cast<std::size_t>(m)];
      const double dt = (p[0] * u[0] + p[1] * u[1] + p[2] * u[2]) / geom.speed_of_sound;
      add_fractional_impulse(tail[static_cast<std::size_t>(m)], (t + dt) * sample_rate, g, 8);
    }
  }
  const double e_direct = direct[0].squaredNorm();
  const double e_tail = tail[0].squaredNorm();
  const double scale = e_tail > 0.0 ? std::sqrt(e_direct / e_tail * std::pow(10.0, -cfg.drr_db / 10.0)) : 0.0;
  std::vector<Rir> out;
  for (Eigen::Index m = 0; m < M; ++m) {
    Rir r;
    r.sample_rate = sample_rate;
    r.taps = direct[static_cast<std::size_t>(m)] + scale * tail[static_cast<std::size_t>(m)];
    r.early_len = std::min(cfg.early_len, len);
    out.push_back(std::move(r));
  }
  return out;
}

/// Squared STFT magnitude at the first channel of the source convolved with
/// the early part of the RIR. Returned as frames x bins.
inline RMatrix reference_early_psd(const Waveform& source, const Rir& rir, Eigen::Index n_stft = 512) {
  if (rir.early_len > rir.taps.size() || rir.early_len < 1)
    throw Error(ErrorKind::InvalidInput, "early length outside the RIR");
  const RVector x = source.samples.col(0);
  const RVector y = fft_convolve(x, rir.taps.head(rir.early_len)).head(x.size());
  Waveform w{RMatrix(y), source.sample_rate};
  const StftTensor t = stft_analyze(w, n_stft);
  return t.channels.front().cwiseAbs2();
}

// ---------------------------------------------------------------- WAV

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(const std::vector<char>& buf, std::size_t off) {
  if (off + sizeof(T) > buf.size()) throw Error(ErrorKind::IoError, "truncated WAV file");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

}  // namespace detail

enum class WavFormat { Pcm16, Float32 };

/// Little-endian RIFF/WAVE, PCM16 or float32, any channel count.
inline void write_wav(const std::string& path, const Waveform& w, WavFormat fmt = WavFormat::Float32) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::IoError, "cannot open " + path);
  const auto ch = static_cast<std::uint16_t>(w.channels());
  const std::uint16_t bits = fmt == WavFormat::Pcm16 ? 16 : 32;
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.length()) * ch * (bits / 8);
  os.write("RIFF", 4);
  detail::put<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  detail::put<std::uint32_t>(os, 16);
  detail::put<std::uint16_t>(os, fmt == WavFormat::Pcm16 ? 1 : 3);
  detail::put<std::uint16_t>(os, ch);
  detail::put<std::uint32_t>(os, rate);
  detail::put<std::uint32_t>(os, rate * ch * (bits / 8));
  detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(ch * (bits / 8)));
  detail::put<std::uint16_t>(os, bits);
  os.write("data", 4);
  detail::put<std::uint32_t>(os, data_bytes);
  for (Eigen::Index i = 0; i < w.length(); ++i)
    for (Eigen::Index c = 0; c < w.channels(); ++c) {
      const double v = w.samples(i, c);
      if (fmt == WavFormat::Pcm16) {
        const double s = std::clamp(v, -1.0, 1.0) * 32767.0;
        detail::put<std::int16_t>(os, static_cast<std::int16_t>(std::lround(s)));
      } else {
        detail::put<float>(os, static_cast<float>(v));
      }
    }
  if (!os) throw Error(ErrorKind::IoError, "write failed for " + path);
}

inline Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw Error(ErrorKind::IoError, path + " is not a RIFF/WAVE file");
  std::uint16_t format = 0, ch = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_off = 0, data_len = 0;
  bool have_fmt = false;
  for (std::size_t off = 12; off + 8 <= buf.size();) {
    const std::string id(buf.data() + off, 4);
    const auto size = detail::get<std::uint32_t>(buf, off + 4);
    const std::size_t body = off + 8;
    if (id == "fmt ") {
      format = detail::get<std::uint16_t>(buf, body);
      ch = detail::get<std::uint16_t>(buf, body + 2);
      rate = detail::get<std::uint32_t>(buf, body + 4);
      bits = detail::get<std::uint16_t>(buf, body + 14);
      if (format == 0xFFFE && size >= 26) format = detail::get<std::uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      data_off = body;
      data_len = std::min<std::size_t>(size, buf.size() - body);
      break;
    }
    off = body + size + (size & 1u);
  }
  if (!have_fmt || data_off == 0) throw Error(ErrorKind::IoError, path + " lacks fmt or data chunk");
  if (ch == 0) throw Error(ErrorKind::IoError, path + " has zero channels");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) throw Error(ErrorKind::IoError, path + ": only PCM16 and float32 are supported");
  const std::size_t frame_bytes = static_cast<std::size_t>(ch) * (bits / 8);
  const auto frames = static_cast<Eigen::Index>(data_len / frame_bytes);
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(frames, ch);
  for (Eigen::Index i = 0; i < frames; ++i)
    for (Eigen::Index c = 0; c < ch; ++c) {
      const std::size_t off = data_off + static_cast<std::size_t>(i) * frame_bytes + static_cast<std::size_t>(c) * (bits / 8);
      w.samples(i, c) = pcm16 ? std::max(detail::get<std::int16_t>(buf, off) / 32767.0, -1.0) : detail::get<float>(buf, off);
    }
  if (!all_finite(w.samples)) throw Error(ErrorKind::IoError, path + " holds non-finite samples");
  return w;
}

/// One tap per line; blank lines and lines starting with '#' are skipped.
inline Rir read_rir_csv(const std::string& path, double sample_rate, Eigen::Index early_len = 512) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::vector<double> taps;
  std::string line;
  while (std::getline(is, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line.substr(first));
    double v = 0.0;
    if (!(ss >> v) || !std::isfinite(v)) throw Error(ErrorKind::IoError, path + ": bad tap value '" + line + "'");
    taps.push_back(v);
  }
  if (taps.empty()) throw Error(ErrorKind::IoError, path + " holds no taps");
  Rir r;
  r.sample_rate = sample_rate;
  r.taps = Eigen::Map<RVector>(taps.data(), static_cast<Eigen::Index>(taps.size()));
  r.early_len = std::min<Eigen::Index>(early_len, r.taps.size());
  return r;
}

// ------------------------------------------------- synthetic sources

struct SpeechLikeConfig {
  double duration_s = 5.0;
  double f0_hz = 150.0;
  double sample_rate = 16000.0;
  double syllable_rate_hz = 4.0;
};

/// Voiced harmonic segments with a wandering pitch, separated by pauses and
/// short noise bursts. Output peak is normalized to 0.5.
inline Waveform speech_like_source(const SpeechLikeConfig& cfg, Rng& rng) {
  const auto len = static_cast<Eigen::Index>(std::lround(cfg.duration_s * cfg.sample_rate));
  RVector x = RVector::Zero(len);
  const double fs = cfg.sample_rate;
  double phase = 0.0;
  double f0 = cfg.f0_hz;
  Eigen::Index i = 0;
  while (i < len) {
    const double seg_s = rng.uniform(0.5, 1.5) / cfg.syllable_rate_hz;
    const auto seg = std::min<Eigen::Index>(static_cast<Eigen::Index>(seg_s * fs), len - i);
    const double kind = rng.uniform();
    if (kind < 0.65) {
      // voiced
      const int harmonics = 30;
      std::vector<double> amp(harmonics);
      const double formant1 = rng.uniform(300.0, 900.0);
      const double formant2 = rng.uniform(900.0, 2500.0);
      for (int h = 0; h < harmonics; ++h) {
        const double f = (h + 1) * f0;
        amp[static_cast<std::size_t>(h)] =
            (std::exp(-std::pow((f - formant1) / 250.0, 2)) + 0.5 * std::exp(-std::pow((f - formant2) / 400.0, 2)) +
             0.05) / (1.0 + h);
      }
      for (Eigen::Index j = 0; j < seg; ++j) {
        f0 = std::clamp(f0 * (1.0 + 0.0005 * rng.gaussian()), 0.7 * cfg.f0_hz, 1.4 * cfg.f0_hz);
        phase += 2.0 * kPi * f0 / fs;
        if (phase > 2.0 * kPi) phase -= 2.0 * kPi;
        const double env = std::sin(kPi * static_cast<double>(j) / static_cast<double>(seg));
        double v = 0.0;
        for (int h = 0; h < harmonics; ++h) {
          if ((h + 1) * f0 >= fs / 2.0) break;
          v += amp[static_cast<std::size_t>(h)] * std::sin((h + 1) * phase);
        }
        x(i + j) = env * v;
      }
    } else if (kind < 0.8) {
      // unvoiced burst
      double lp = 0.0;
      for (Eigen::Index j = 0; j < seg; ++j) {
        const double n = rng.gaussian();
        const double hp = n - lp;
        lp = 0.7 * lp + 0.3 * n;
        const double env = std::sin(kPi * static_cast<double>(j) / static_cast<double>(seg));
        x(i + j) = 0.15 * env * hp;
      }
    }
    i += seg;
  }
  const double peak = x.cwiseAbs().maxCoeff();
  if (peak > 0.0) x *= 0.5 / peak;
  return Waveform{RMatrix(x), fs};
}

}  // namespace earlypsd
