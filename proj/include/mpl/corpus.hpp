// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpl/core.hpp"
#include "mpl/rng.hpp"
#include "mpl/signal.hpp"

namespace mpl::corpus {

enum class MixtureKind { Raw, Noisy, Overlapped, NoisyOverlapped };

inline const char* kind_name(MixtureKind k) {
  switch (k) {
    case MixtureKind::Raw: return "raw";
    case MixtureKind::Noisy: return "noisy";
    case MixtureKind::Overlapped: return "overlapped";
    case MixtureKind::NoisyOverlapped: return "noisy_overlapped";
  }
  return "?";
}

inline MixtureKind kind_from_name(const std::string& s) {
  if (s == "raw") return MixtureKind::Raw;
  if (s == "noisy") return MixtureKind::Noisy;
  if (s == "overlapped") return MixtureKind::Overlapped;
  if (s == "noisy_overlapped") return MixtureKind::NoisyOverlapped;
  throw InvalidInputError("unknown mixture kind: " + s);
}

constexpr std::array<MixtureKind, 4> kAllKinds = {
    MixtureKind::Raw, MixtureKind::Noisy, MixtureKind::Overlapped,
    MixtureKind::NoisyOverlapped};

struct MixtureRecord {
  std::string id;
  MixtureKind kind = MixtureKind::Raw;
  std::vector<std::string> source_ids;  // 1 or 2 speech sources, manifest order
  std::optional<double> speech_snr_db;  // speaker 1 vs speaker 2, [1, 6]
  std::optional<double> noise_snr_db;   // speech vs noise, [-5, 15]
  std::optional<std::string> noise_id;
  uint64_t seed = 0;
  double duration_s = 2.0;
};

inline void validate(const MixtureRecord& r) {
  require_input(!r.id.empty(), "record: empty id");
  require_input(r.duration_s > 0, "record: non-positive duration");
  const bool overlapped =
      r.kind == MixtureKind::Overlapped || r.kind == MixtureKind::NoisyOverlapped;
  const bool noisy = r.kind == MixtureKind::Noisy || r.kind == MixtureKind::NoisyOverlapped;
  require_input(r.source_ids.size() == (overlapped ? 2u : 1u),
                "record " + r.id + ": wrong source count for kind");
  if (overlapped) {
    require_input(r.speech_snr_db.has_value(), "record " + r.id + ": missing speech_snr_db");
    require_input(*r.speech_snr_db >= 1.0 && *r.speech_snr_db <= 6.0,
                  "record " + r.id + ": speech_snr_db outside [1, 6]");
  } else {
    require_input(!r.speech_snr_db.has_value(), "record " + r.id + ": unexpected speech_snr_db");
  }
  if (noisy) {
    require_input(r.noise_id.has_value() && r.noise_snr_db.has_value(),
                  "record " + r.id + ": missing noise fields");
    require_input(*r.noise_snr_db >= -5.0 && *r.noise_snr_db <= 15.0,
                  "record " + r.id + ": noise_snr_db outside [-5, 15]");
  } else {
    require_input(!r.noise_id.has_value() && !r.noise_snr_db.has_value(),
                  "record " + r.id + ": unexpected noise fields");
  }
}

struct CorpusManifest {
  int schema_version = 1;
  uint64_t global_seed = 0;
  int sample_rate = 16000;
  std::string audio_mode = "synth";  // "synth" regenerates sources; "wav" loads fixtures
  std::vector<MixtureRecord> records;

  std::map<MixtureKind, long> counts() const {
    std::map<MixtureKind, long> c;
    for (auto k : kAllKinds) c[k] = 0;
    for (const auto& r : records) ++c[r.kind];
    return c;
  }
};

// ---------------------------------------------------------------------------
// Synthetic sources (stand-ins for real speech/noise corpora)
// ---------------------------------------------------------------------------

enum class SourceKind { Speech, Noise };

// Speech: 3-6 harmonics on a piecewise-constant fundamental in [80, 300] Hz,
// amplitude-modulated with silent stretches, peak 0.5. Noise: one-pole
// low-passed uniform noise, peak 0.5. Fully determined by the seed.
inline signal::Waveform synthesize_source(uint64_t seed, double duration_s, SourceKind kind,
                                          int sample_rate = 16000) {
  require_input(duration_s > 0, "synthesize_source: non-positive duration");
  Rng rng(seed);
  signal::Waveform w;
  w.sample_rate = sample_rate;
  const long n = std::lround(duration_s * sample_rate);
  w.samples.assign(static_cast<size_t>(n), 0.0);

  if (kind == SourceKind::Noise) {
    // low-passed noise with bursty segment levels
    const double cutoff = 800.0 * std::pow(7.5, rng.below(8) / 7.0);  // 8-step grid to 6 kHz
    const double a = 1.0 - std::exp(-2.0 * M_PI * cutoff / sample_rate);
    double y = 0.0;
    long seg_end = 0;
    double level = 1.0;
    const long ramp = sample_rate / 100;
    long seg_start = 0;
    double prev_level = 1.0;
    for (long i = 0; i < n; ++i) {
      if (i >= seg_end) {
        seg_start = i;
        prev_level = level;
        level = rng.uniform(0.15, 1.0);
        seg_end = i + std::lround(rng.uniform(0.08, 0.25) * sample_rate);
      }
      y += a * (rng.uniform(-1.0, 1.0) - y);
      double env = level;
      if (i - seg_start < ramp)  // smooth the burst boundary
        env = prev_level + (level - prev_level) * (i - seg_start) / static_cast<double>(ramp);
      w.samples[i] = env * y;
    }
  } else {
    const int n_harm = 3 + static_cast<int>(rng.below(4));  // 3..6
    std::array<double, 6> amp{};
    for (int k = 0; k < n_harm; ++k) amp[k] = 1.0 / (k + 1);

    // segment plan: piecewise-constant f0, each segment voiced or silent
    struct Seg {
      long end;
      double f0;
      double level;  // 0 for silence
    };
    std::vector<Seg> segs;
    long pos = 0;
    bool any_voiced = false;
    while (pos < n) {
      const long len = std::lround(rng.uniform(0.3, 0.7) * sample_rate);
      const bool last = pos + len >= n;
      bool voiced = rng.uniform() < 0.7;
      if (last && !any_voiced) voiced = true;
      any_voiced = any_voiced || voiced;
      // fundamentals live on a 16-step log grid so the codebook's harmonic
      // patterns recur across utterances
      const double f0 = 80.0 * std::pow(300.0 / 80.0, rng.below(16) / 15.0);
      segs.push_back({std::min(n, pos + len), f0, voiced ? rng.uniform(0.4, 1.0) : 0.0});
      pos += len;
    }

    const double trem_hz = rng.uniform(2.0, 6.0);
    const double trem_depth = rng.uniform(0.25, 0.55);
    const long ramp = sample_rate / 50;  // 20 ms attack/decay
    std::array<double, 6> phase{};
    size_t si = 0;
    long seg_start = 0;
    for (long i = 0; i < n; ++i) {
      while (i >= segs[si].end) {
        seg_start = segs[si].end;
        ++si;
      }
      const Seg& sg = segs[si];
      double env = sg.level;
      if (env > 0) {
        const long into = i - seg_start;
        const long left = sg.end - i;
        if (into < ramp) env *= 0.5 - 0.5 * std::cos(M_PI * into / ramp);
        if (left < ramp) env *= 0.5 - 0.5 * std::cos(M_PI * left / ramp);
        env *= 1.0 - trem_depth + trem_depth * (0.5 + 0.5 * std::sin(2.0 * M_PI * trem_hz * i / sample_rate));
      }
      double s = 0.0;
      for (int k = 0; k < n_harm; ++k) {
        phase[k] += 2.0 * M_PI * (k + 1) * sg.f0 / sample_rate;
        if (phase[k] > 2.0 * M_PI) phase[k] -= 2.0 * M_PI;
        s += amp[k] * std::sin(phase[k]);
      }
      w.samples[i] = env * s;
    }
  }

  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  if (peak > 0) {
    const double g = 0.5 / peak;
    for (auto& s : w.samples) s *= g;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Corpus construction
// ---------------------------------------------------------------------------

inline std::string record_id(long index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "r%06ld", index);
  return buf;
}

inline uint64_t record_seed(uint64_t global_seed, long index) {
  return hash64(global_seed, static_cast<uint64_t>(index));
}

inline CorpusManifest build_corpus(long n_records, uint64_t global_seed, double duration_s = 2.0,
                                   int sample_rate = 16000) {
  require_input(n_records >= 4, "build_corpus: need at least 4 records");
  require_input(duration_s > 0, "build_corpus: non-positive duration");
  CorpusManifest m;
  m.global_seed = global_seed;
  m.sample_rate = sample_rate;
  m.records.reserve(static_cast<size_t>(n_records));
  for (long i = 0; i < n_records; ++i) {
    MixtureRecord r;
    r.id = record_id(i);
    r.kind = kAllKinds[i % 4];  // exact 1:1:1:1 interleave
    r.seed = record_seed(global_seed, i);
    r.duration_s = duration_s;
    Rng rng(hash64(r.seed, 0x536e72ull));  // SNR draw stream
    const bool overlapped =
        r.kind == MixtureKind::Overlapped || r.kind == MixtureKind::NoisyOverlapped;
    const bool noisy = r.kind == MixtureKind::Noisy || r.kind == MixtureKind::NoisyOverlapped;
    r.source_ids.push_back(r.id + "_s0");
    if (overlapped) {
      r.source_ids.push_back(r.id + "_s1");
      r.speech_snr_db = rng.uniform(1.0, 6.0);
    }
    if (noisy) {
      r.noise_id = r.id + "_n";
      r.noise_snr_db = rng.uniform(-5.0, 15.0);
    }
    validate(r);
    m.records.push_back(std::move(r));
  }
  return m;
}

// Seed for a named source of a record. Independent per source.
inline uint64_t source_seed(const MixtureRecord& r, const std::string& source_id) {
  return hash64(r.seed, io::fnv1a(source_id.data(), source_id.size()));
}

struct Realized {
  signal::Waveform mixture;
  std::vector<signal::Waveform> components;  // gain-applied clean speech
  std::optional<signal::Waveform> noise;     // gain-applied noise, if any
};

// Deterministically reconstructs the mixture and its gain-applied components.
// In "wav" mode sources are loaded from {corpus_dir}/sources/{id}.wav.
inline Realized realize(const MixtureRecord& r, int sample_rate,
                        const std::string& audio_mode = "synth",
                        const std::filesystem::path& corpus_dir = {}) {
  validate(r);
  auto load = [&](const std::string& id, SourceKind kind) {
    if (audio_mode == "wav") {
      auto w = signal::read_wav16(corpus_dir / "sources" / (id + ".wav"));
      require_input(w.sample_rate == sample_rate, "source " + id + ": sample-rate mismatch");
      return w;
    }
    return synthesize_source(source_seed(r, id), r.duration_s, kind, sample_rate);
  };

  Realized out;
  auto s0 = load(r.source_ids[0], SourceKind::Speech);
  switch (r.kind) {
    case MixtureKind::Raw: {
      out.mixture = s0;
      out.components.push_back(std::move(s0));
      break;
    }
    case MixtureKind::Noisy: {
      auto nz = load(*r.noise_id, SourceKind::Noise);
      auto mix = signal::mix_at_snr(s0, nz, *r.noise_snr_db);
      for (auto& s : nz.samples) s *= mix.gain;
      out.mixture = std::move(mix.mixture);
      out.components.push_back(std::move(s0));
      out.noise = std::move(nz);
      break;
    }
    case MixtureKind::Overlapped: {
      auto s1 = load(r.source_ids[1], SourceKind::Speech);
      auto mix = signal::mix_at_snr(s0, s1, *r.speech_snr_db);
      for (auto& s : s1.samples) s *= mix.gain;
      out.mixture = std::move(mix.mixture);
      out.components.push_back(std::move(s0));
      out.components.push_back(std::move(s1));
      break;
    }
    case MixtureKind::NoisyOverlapped: {
      auto s1 = load(r.source_ids[1], SourceKind::Speech);
      auto mix = signal::mix_at_snr(s0, s1, *r.speech_snr_db);
      for (auto& s : s1.samples) s *= mix.gain;
      auto nz = load(*r.noise_id, SourceKind::Noise);
      auto noisy = signal::mix_at_snr(mix.mixture, nz, *r.noise_snr_db);
      for (auto& s : nz.samples) s *= noisy.gain;
      out.mixture = std::move(noisy.mixture);
      out.components.push_back(std::move(s0));
      out.components.push_back(std::move(s1));
      out.noise = std::move(nz);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest JSONL I/O
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const MixtureRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["kind"] = kind_name(r.kind);
  j["source_ids"] = r.source_ids;
  j["speech_snr_db"] = r.speech_snr_db ? nlohmann::json(*r.speech_snr_db) : nlohmann::json();
  j["noise_snr_db"] = r.noise_snr_db ? nlohmann::json(*r.noise_snr_db) : nlohmann::json();
  j["noise_id"] = r.noise_id ? nlohmann::json(*r.noise_id) : nlohmann::json();
  j["seed"] = r.seed;
  j["duration_s"] = r.duration_s;
  return j;
}

inline MixtureRecord record_from_json(const nlohmann::json& j) {
  MixtureRecord r;
  r.id = j.at("id").get<std::string>();
  r.kind = kind_from_name(j.at("kind").get<std::string>());
  r.source_ids = j.at("source_ids").get<std::vector<std::string>>();
  if (!j.at("speech_snr_db").is_null()) r.speech_snr_db = j["speech_snr_db"].get<double>();
  if (!j.at("noise_snr_db").is_null()) r.noise_snr_db = j["noise_snr_db"].get<double>();
  if (!j.at("noise_id").is_null()) r.noise_id = j["noise_id"].get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  r.duration_s = j.at("duration_s").get<double>();
  return r;
}

inline void save_manifest(const CorpusManifest& m, const std::filesystem::path& path) {
  auto os = io::open_out(path);
  nlohmann::ordered_json hdr;
  hdr["schema_version"] = m.schema_version;
  hdr["global_seed"] = m.global_seed;
  hdr["sample_rate"] = m.sample_rate;
  hdr["audio_mode"] = m.audio_mode;
  hdr["n_records"] = m.records.size();
  os << hdr.dump() << "\n";
  for (const auto& r : m.records) os << to_json(r).dump() << "\n";
}

inline CorpusManifest load_manifest(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  std::string line;
  require_input(static_cast<bool>(std::getline(is, line)), "manifest: empty file");
  auto hdr = nlohmann::json::parse(line);
  CorpusManifest m;
  m.schema_version = hdr.at("schema_version").get<int>();
  m.global_seed = hdr.at("global_seed").get<uint64_t>();
  m.sample_rate = hdr.at("sample_rate").get<int>();
  m.audio_mode = hdr.value("audio_mode", "synth");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto r = record_from_json(nlohmann::json::parse(line));
    validate(r);
    m.records.push_back(std::move(r));
  }
  return m;
}

}  // namespace mpl::corpus
