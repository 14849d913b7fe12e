// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "mpl/core.hpp"
#include "mpl/fft.hpp"
#include "mpl/io.hpp"

namespace mpl::signal {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  long size() const { return static_cast<long>(samples.size()); }
};

inline void validate(const Waveform& w) {
  require_input(w.sample_rate > 0, "waveform: sample_rate must be positive");
  require_input(!w.samples.empty(), "waveform: empty");
  for (double s : w.samples)
    require_input(std::isfinite(s), "waveform: non-finite sample");
}

// mean squared amplitude
inline double avg_energy(const Waveform& w) {
  require_input(!w.samples.empty(), "avg_energy: empty waveform");
  double acc = 0.0;
  for (double s : w.samples) acc += s * s;
  return acc / static_cast<double>(w.samples.size());
}

struct MixResult {
  Waveform mixture;
  double gain = 1.0;  // applied to the interferer
};

// mixture = target + gain * interferer, with
// 10*log10(E_target / (gain^2 * E_interferer)) == snr_db.
inline MixResult mix_at_snr(const Waveform& target, const Waveform& interferer, double snr_db) {
  require_input(target.samples.size() == interferer.samples.size(),
                "mix_at_snr: length mismatch");
  require_input(target.sample_rate == interferer.sample_rate,
                "mix_at_snr: sample-rate mismatch");
  const double et = avg_energy(target);
  const double ei = avg_energy(interferer);
  require_input(et > 0.0 && ei > 0.0, "mix_at_snr: zero-energy input");
  const double gain = std::sqrt(et / ei) * std::pow(10.0, -snr_db / 20.0);
  MixResult r;
  r.gain = gain;
  r.mixture.sample_rate = target.sample_rate;
  r.mixture.samples.resize(target.samples.size());
  for (size_t i = 0; i < target.samples.size(); ++i)
    r.mixture.samples[i] = target.samples[i] + gain * interferer.samples[i];
  return r;
}

// Scale-invariant SDR in dB. Exact-zero error returns +inf, a zero projection
// (alpha == 0) returns -inf; callers that need finite values clamp for display.
inline double si_sdr(const Waveform& estimate, const Waveform& reference) {
  require_input(estimate.samples.size() == reference.samples.size(), "si_sdr: length mismatch");
  double dot = 0.0, rr = 0.0;
  for (size_t i = 0; i < reference.samples.size(); ++i) {
    dot += estimate.samples[i] * reference.samples[i];
    rr += reference.samples[i] * reference.samples[i];
  }
  require_input(rr > 0.0, "si_sdr: zero-energy reference");
  const double alpha = dot / rr;
  double sig = 0.0, err = 0.0;
  for (size_t i = 0; i < reference.samples.size(); ++i) {
    const double s = alpha * reference.samples[i];
    const double e = s - estimate.samples[i];
    sig += s * s;
    err += e * e;
  }
  // zero projection first: a zero estimate carries no signal at all
  if (sig == 0.0) return -std::numeric_limits<double>::infinity();
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sig / err);
}

inline double clamp_db(double x, double limit = 100.0) {
  return std::clamp(x, -limit, limit);
}

// ---------------------------------------------------------------------------
// STFT / ISTFT
// ---------------------------------------------------------------------------

inline std::vector<double> make_window(const std::string& name, int frame_len) {
  std::vector<double> w(static_cast<size_t>(frame_len));
  const double twopi = 6.283185307179586476925286766559;
  for (int n = 0; n < frame_len; ++n) {
    const double hann = 0.5 - 0.5 * std::cos(twopi * n / frame_len);  // periodic
    if (name == "sqrt_hann")
      w[n] = std::sqrt(hann);
    else if (name == "hann")
      w[n] = hann;
    else if (name == "rect")
      w[n] = 1.0;
    else
      throw ConfigError("unknown window: " + name);
  }
  return w;
}

struct StftConfig {
  int frame_len = 400;
  int hop = 160;
  std::string window = "sqrt_hann";
};

struct Spectrogram {
  long n_frames = 0;
  long n_bins = 0;  // frame_len / 2 + 1
  int frame_len = 400;
  int hop = 160;
  int sample_rate = 16000;
  std::string window = "sqrt_hann";
  std::vector<std::complex<double>> frames;  // row-major n_frames x n_bins

  std::complex<double>& at(long t, long f) { return frames[t * n_bins + f]; }
  const std::complex<double>& at(long t, long f) const { return frames[t * n_bins + f]; }
};

inline void validate(const StftConfig& cfg) {
  require_config(cfg.frame_len > 0 && cfg.hop > 0, "stft: frame_len and hop must be positive");
  require_config(cfg.hop <= cfg.frame_len, "stft: hop larger than frame (gaps cannot be resynthesized)");
  make_window(cfg.window, cfg.frame_len);  // throws on unknown name
}

inline Spectrogram stft(const Waveform& w, const StftConfig& cfg = {}) {
  validate(cfg);
  require_input(w.size() >= cfg.frame_len, "stft: waveform shorter than one frame");
  const auto win = make_window(cfg.window, cfg.frame_len);
  Spectrogram s;
  s.frame_len = cfg.frame_len;
  s.hop = cfg.hop;
  s.window = cfg.window;
  s.sample_rate = w.sample_rate;
  s.n_frames = (w.size() - cfg.frame_len) / cfg.hop + 1;
  s.n_bins = cfg.frame_len / 2 + 1;
  s.frames.resize(static_cast<size_t>(s.n_frames * s.n_bins));
  std::vector<double> buf(static_cast<size_t>(cfg.frame_len));
  for (long t = 0; t < s.n_frames; ++t) {
    const long off = t * cfg.hop;
    for (int n = 0; n < cfg.frame_len; ++n) buf[n] = w.samples[off + n] * win[n];
    auto bins = fft::rfft(buf);
    std::copy(bins.begin(), bins.end(), s.frames.begin() + t * s.n_bins);
  }
  return s;
}

// Weighted overlap-add with window-square normalization; reconstruction is
// exact (up to FFT roundoff) wherever the synthesis coverage is nonzero.
inline Waveform istft(const Spectrogram& s) {
  StftConfig cfg{s.frame_len, s.hop, s.window};
  validate(cfg);
  const auto win = make_window(s.window, s.frame_len);
  const long out_len = (s.n_frames - 1) * s.hop + s.frame_len;
  std::vector<double> num(static_cast<size_t>(out_len), 0.0);
  std::vector<double> den(static_cast<size_t>(out_len), 0.0);
  std::vector<fft::cplx> bins(static_cast<size_t>(s.n_bins));
  for (long t = 0; t < s.n_frames; ++t) {
    std::copy(s.frames.begin() + t * s.n_bins, s.frames.begin() + (t + 1) * s.n_bins,
              bins.begin());
    auto frame = fft::irfft(bins, static_cast<size_t>(s.frame_len));
    const long off = t * s.hop;
    for (int n = 0; n < s.frame_len; ++n) {
      num[off + n] += win[n] * frame[n];
      den[off + n] += win[n] * win[n];
    }
  }
  double den_max = 0.0;
  for (long i = s.frame_len; i + s.frame_len <= out_len; ++i) den_max = std::max(den_max, den[i]);
  if (s.n_frames > 1 && den_max > 0.0) {
    for (long i = s.frame_len; i + s.frame_len <= out_len; ++i)
      require_config(den[i] > 1e-6 * den_max,
                     "istft: window/hop combination leaves uncovered samples");
  }
  Waveform out;
  out.sample_rate = s.sample_rate;
  out.samples.resize(static_cast<size_t>(out_len));
  for (long i = 0; i < out_len; ++i)
    out.samples[i] = den[i] > 1e-12 ? num[i] / den[i] : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Phase-sensitive mask
// ---------------------------------------------------------------------------

struct Mask {
  long n_frames = 0;
  long n_bins = 0;
  std::vector<double> v;  // row-major, in [0, 1]

  double& at(long t, long f) { return v[t * n_bins + f]; }
  double at(long t, long f) const { return v[t * n_bins + f]; }
};

// m = clamp(|S|/|Y| * cos(theta_S - theta_Y), 0, 1), zero where |Y| == 0.
inline Mask psm_target(const Spectrogram& mixture, const Spectrogram& source) {
  require_input(mixture.n_frames == source.n_frames && mixture.n_bins == source.n_bins,
                "psm_target: shape mismatch");
  Mask m;
  m.n_frames = mixture.n_frames;
  m.n_bins = mixture.n_bins;
  m.v.resize(mixture.frames.size());
  for (size_t i = 0; i < mixture.frames.size(); ++i) {
    const auto y = mixture.frames[i];
    const auto s = source.frames[i];
    const double ymag2 = std::norm(y);
    if (ymag2 == 0.0) {
      m.v[i] = 0.0;
      continue;
    }
    // |S|/|Y| cos(dtheta) == Re(S * conj(Y)) / |Y|^2
    const double val = (s.real() * y.real() + s.imag() * y.imag()) / ymag2;
    m.v[i] = std::clamp(val, 0.0, 1.0);
  }
  return m;
}

// Applies a (clamped) magnitude mask to the mixture, keeping mixture phase.
inline Spectrogram apply_mask(const Spectrogram& mixture, const Mask& m) {
  require_input(mixture.n_frames == m.n_frames && mixture.n_bins == m.n_bins,
                "apply_mask: shape mismatch");
  Spectrogram out = mixture;
  for (size_t i = 0; i < out.frames.size(); ++i)
    out.frames[i] *= std::clamp(m.v[i], 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// File I/O: 16-bit PCM mono WAV and raw float32 fixtures
// ---------------------------------------------------------------------------

inline void write_wav16(const std::filesystem::path& path, const Waveform& w) {
  validate(w);
  auto os = io::open_out(path);
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_bytes = n * 2;
  const uint32_t sr = static_cast<uint32_t>(w.sample_rate);
  os.write("RIFF", 4);
  io::write_pod<uint32_t>(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  io::write_pod<uint32_t>(os, 16);
  io::write_pod<uint16_t>(os, 1);  // PCM
  io::write_pod<uint16_t>(os, 1);  // mono
  io::write_pod<uint32_t>(os, sr);
  io::write_pod<uint32_t>(os, sr * 2);
  io::write_pod<uint16_t>(os, 2);
  io::write_pod<uint16_t>(os, 16);
  os.write("data", 4);
  io::write_pod<uint32_t>(os, data_bytes);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    io::write_pod<int16_t>(os, static_cast<int16_t>(std::lrint(c * 32767.0)));
  }
}

inline Waveform read_wav16(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  char tag[4];
  is.read(tag, 4);
  require_input(is && std::memcmp(tag, "RIFF", 4) == 0, "wav: not a RIFF file");
  io::read_pod<uint32_t>(is);
  is.read(tag, 4);
  require_input(is && std::memcmp(tag, "WAVE", 4) == 0, "wav: not a WAVE file");
  Waveform w;
  uint16_t bits = 0, channels = 0;
  while (is.read(tag, 4)) {
    const uint32_t size = io::read_pod<uint32_t>(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const uint16_t fmt = io::read_pod<uint16_t>(is);
      channels = io::read_pod<uint16_t>(is);
      w.sample_rate = static_cast<int>(io::read_pod<uint32_t>(is));
      io::read_pod<uint32_t>(is);
      io::read_pod<uint16_t>(is);
      bits = io::read_pod<uint16_t>(is);
      require_input(fmt == 1 && channels == 1 && bits == 16, "wav: only 16-bit PCM mono supported");
      is.ignore(size - 16);
    } else if (std::memcmp(tag, "data", 4) == 0) {
      const uint32_t n = size / 2;
      w.samples.resize(n);
      for (uint32_t i = 0; i < n; ++i)
        w.samples[i] = static_cast<double>(io::read_pod<int16_t>(is)) / 32767.0;
      return w;
    } else {
      is.ignore(size);
    }
  }
  throw InvalidInputError("wav: no data chunk: " + path.string());
}

inline void write_f32(const std::filesystem::path& path, const Waveform& w) {
  auto os = io::open_out(path);
  io::write_pod<uint32_t>(os, static_cast<uint32_t>(w.samples.size()));
  io::write_pod<uint32_t>(os, static_cast<uint32_t>(w.sample_rate));
  for (double s : w.samples) io::write_pod<float>(os, static_cast<float>(s));
}

inline Waveform read_f32(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  const uint32_t n = io::read_pod<uint32_t>(is);
  Waveform w;
  w.sample_rate = static_cast<int>(io::read_pod<uint32_t>(is));
  w.samples.resize(n);
  for (uint32_t i = 0; i < n; ++i) w.samples[i] = io::read_pod<float>(is);
  return w;
}

}  // namespace mpl::signal
