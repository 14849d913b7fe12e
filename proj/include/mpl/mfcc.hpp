// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mpl/core.hpp"
#include "mpl/fft.hpp"
#include "mpl/signal.hpp"

namespace mpl::labeler {

struct FeatureSequence {
  long frames = 0;
  long dim = 0;
  std::vector<double> v;  // row-major frames x dim

  double* row(long t) { return v.data() + t * dim; }
  const double* row(long t) const { return v.data() + t * dim; }
};

struct MfccConfig {
  int win = 400;        // 25 ms at 16 kHz
  int hop = 320;        // 20 ms, matches the model frame rate
  int n_mels = 26;
  int n_ceps = 13;      // c0..c12, then deltas and delta-deltas -> 39 dims
  double fmin = 20.0;
  double fmax = 7800.0;
};

namespace detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// triangular mel filters over the rfft bins
inline std::vector<std::vector<double>> mel_filters(const MfccConfig& cfg, int sample_rate) {
  const int n_bins = cfg.win / 2 + 1;
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(std::min(cfg.fmax, sample_rate / 2.0));
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  std::vector<std::vector<double>> filt(cfg.n_mels, std::vector<double>(n_bins, 0.0));
  for (int m = 0; m < cfg.n_mels; ++m) {
    for (int b = 0; b < n_bins; ++b) {
      const double hz = static_cast<double>(b) * sample_rate / cfg.win;
      if (hz >= edges[m] && hz <= edges[m + 1] && edges[m + 1] > edges[m])
        filt[m][b] = (hz - edges[m]) / (edges[m + 1] - edges[m]);
      else if (hz > edges[m + 1] && hz <= edges[m + 2] && edges[m + 2] > edges[m + 1])
        filt[m][b] = (edges[m + 2] - hz) / (edges[m + 2] - edges[m + 1]);
    }
  }
  return filt;
}

// +/-2 frame regression deltas with edge replication
inline void append_deltas(const std::vector<double>& base, long frames, int dim,
                          std::vector<double>& out, long out_dim, int offset) {
  auto at = [&](long t, int d) {
    t = std::clamp(t, 0L, frames - 1);
    return base[t * dim + d];
  };
  const double denom = 2.0 * (1 + 4);  // sum of k^2 for k in {-2..2}
  for (long t = 0; t < frames; ++t)
    for (int d = 0; d < dim; ++d) {
      double acc = 0;
      for (int k = 1; k <= 2; ++k) acc += k * (at(t + k, d) - at(t - k, d));
      out[t * out_dim + offset + d] = acc / denom;
    }
}

}  // namespace detail

// 39-dim MFCC (13 cepstra + deltas + delta-deltas) at a 20 ms hop.
inline FeatureSequence extract_features(const signal::Waveform& w, const MfccConfig& cfg = {}) {
  require_input(w.size() >= cfg.win, "extract_features: waveform shorter than one window");
  const long frames = (w.size() - cfg.win) / cfg.hop + 1;
  const int n_bins = cfg.win / 2 + 1;
  const auto filt = detail::mel_filters(cfg, w.sample_rate);
  const auto win = signal::make_window("hann", cfg.win);

  // DCT-II (orthonormal) basis for the cepstral lift
  std::vector<double> dct(static_cast<size_t>(cfg.n_ceps) * cfg.n_mels);
  for (int k = 0; k < cfg.n_ceps; ++k) {
    const double norm = std::sqrt((k == 0 ? 1.0 : 2.0) / cfg.n_mels);
    for (int m = 0; m < cfg.n_mels; ++m)
      dct[k * cfg.n_mels + m] = norm * std::cos(M_PI * k * (m + 0.5) / cfg.n_mels);
  }

  std::vector<double> ceps(static_cast<size_t>(frames) * cfg.n_ceps);
  std::vector<double> buf(static_cast<size_t>(cfg.win));
  std::vector<double> mel(static_cast<size_t>(cfg.n_mels));
  for (long t = 0; t < frames; ++t) {
    const long off = t * cfg.hop;
    for (int n = 0; n < cfg.win; ++n) buf[n] = w.samples[off + n] * win[n];
    auto bins = fft::rfft(buf);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double acc = 0;
      for (int b = 0; b < n_bins; ++b) acc += filt[m][b] * std::norm(bins[b]);
      mel[m] = std::log(std::max(acc, 1e-10));
    }
    for (int k = 0; k < cfg.n_ceps; ++k) {
      double acc = 0;
      for (int m = 0; m < cfg.n_mels; ++m) acc += dct[k * cfg.n_mels + m] * mel[m];
      ceps[t * cfg.n_ceps + k] = acc;
    }
  }

  FeatureSequence f;
  f.frames = frames;
  f.dim = 3 * cfg.n_ceps;
  f.v.assign(static_cast<size_t>(frames) * f.dim, 0.0);
  for (long t = 0; t < frames; ++t)
    for (int d = 0; d < cfg.n_ceps; ++d) f.v[t * f.dim + d] = ceps[t * cfg.n_ceps + d];
  detail::append_deltas(ceps, frames, cfg.n_ceps, f.v, f.dim, cfg.n_ceps);
  // delta-deltas: deltas of the delta block
  std::vector<double> d1(static_cast<size_t>(frames) * cfg.n_ceps);
  for (long t = 0; t < frames; ++t)
    for (int d = 0; d < cfg.n_ceps; ++d) d1[t * cfg.n_ceps + d] = f.v[t * f.dim + cfg.n_ceps + d];
  detail::append_deltas(d1, frames, cfg.n_ceps, f.v, f.dim, 2 * cfg.n_ceps);
  return f;
}

}  // namespace mpl::labeler
