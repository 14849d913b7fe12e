// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "mpl/core.hpp"
#include "mpl/corpus.hpp"
#include "mpl/io.hpp"
#include "mpl/mfcc.hpp"
#include "mpl/rng.hpp"

namespace mpl::labeler {

using LabelSequence = std::vector<uint16_t>;

struct Codebook {
  long C = 0;
  long D = 0;
  std::vector<double> centers;  // row-major C x D

  const double* center(long c) const { return centers.data() + c * D; }
};

namespace detail {

inline double sq_dist(const double* a, const double* b, long d) {
  double acc = 0;
  for (long i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    acc += t * t;
  }
  return acc;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded to
// the point farthest from the empty cluster's stale center. Deterministic
// for a fixed seed.
inline Codebook kmeans_fit(const std::vector<double>& data, long n, long dim, long C,
                           int max_iters, uint64_t seed) {
  require_input(C >= 2, "kmeans_fit: need at least 2 classes");
  require_input(n >= C, "kmeans_fit: fewer vectors than classes");
  require_input(static_cast<long>(data.size()) == n * dim, "kmeans_fit: bad data size");

  Rng rng(seed);
  Codebook cb;
  cb.C = C;
  cb.D = dim;
  cb.centers.resize(static_cast<size_t>(C) * dim);

  // k-means++ seeding
  std::vector<double> best_d(static_cast<size_t>(n), std::numeric_limits<double>::max());
  {
    const long first = static_cast<long>(rng.below(static_cast<uint64_t>(n)));
    std::copy_n(data.data() + first * dim, dim, cb.centers.data());
    for (long c = 1; c < C; ++c) {
      double total = 0;
      const double* prev = cb.center(c - 1);
      for (long i = 0; i < n; ++i) {
        best_d[i] = std::min(best_d[i], detail::sq_dist(data.data() + i * dim, prev, dim));
        total += best_d[i];
      }
      long pick = 0;
      if (total > 0) {
        double target = rng.uniform() * total, acc = 0;
        for (long i = 0; i < n; ++i) {
          acc += best_d[i];
          if (acc >= target) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<long>(rng.below(static_cast<uint64_t>(n)));
      }
      std::copy_n(data.data() + pick * dim, dim, cb.centers.data() + c * dim);
    }
  }

  std::vector<long> assign(static_cast<size_t>(n), -1);
  std::vector<long> counts(static_cast<size_t>(C));
  std::vector<double> sums(static_cast<size_t>(C) * dim);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (long i = 0; i < n; ++i) {
      long best = 0;
      double bd = std::numeric_limits<double>::max();
      for (long c = 0; c < C; ++c) {
        const double d = detail::sq_dist(data.data() + i * dim, cb.center(c), dim);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed && it > 0) break;

    std::fill(counts.begin(), counts.end(), 0L);
    std::fill(sums.begin(), sums.end(), 0.0);
    for (long i = 0; i < n; ++i) {
      ++counts[assign[i]];
      const double* x = data.data() + i * dim;
      double* s = sums.data() + assign[i] * dim;
      for (long d = 0; d < dim; ++d) s[d] += x[d];
    }
    for (long c = 0; c < C; ++c) {
      if (counts[c] > 0) {
        for (long d = 0; d < dim; ++d) cb.centers[c * dim + d] = sums[c * dim + d] / counts[c];
      } else {
        long far = 0;
        double fd = -1;
        for (long i = 0; i < n; ++i) {
          const double d = detail::sq_dist(data.data() + i * dim, cb.center(c), dim);
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        std::copy_n(data.data() + far * dim, dim, cb.centers.data() + c * dim);
      }
    }
  }
  return cb;
}

inline Codebook kmeans_fit(const std::vector<FeatureSequence>& seqs, long C, int max_iters,
                           uint64_t seed) {
  require_input(!seqs.empty(), "kmeans_fit: no feature sequences");
  const long dim = seqs[0].dim;
  long n = 0;
  for (const auto& s : seqs) {
    require_input(s.dim == dim, "kmeans_fit: dimension mismatch across sequences");
    n += s.frames;
  }
  std::vector<double> data;
  data.reserve(static_cast<size_t>(n) * dim);
  for (const auto& s : seqs) data.insert(data.end(), s.v.begin(), s.v.end());
  return kmeans_fit(data, n, dim, C, max_iters, seed);
}

// nearest center by squared euclidean distance; ties go to the lowest id
inline LabelSequence assign_labels(const FeatureSequence& f, const Codebook& cb) {
  require_input(f.dim == cb.D, "assign_labels: dimension mismatch");
  LabelSequence out(static_cast<size_t>(f.frames));
  for (long t = 0; t < f.frames; ++t) {
    long best = 0;
    double bd = std::numeric_limits<double>::max();
    for (long c = 0; c < cb.C; ++c) {
      const double d = detail::sq_dist(f.row(t), cb.center(c), cb.D);
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    out[t] = static_cast<uint16_t>(best);
  }
  return out;
}

inline double inertia(const std::vector<double>& data, long n, long dim, const Codebook& cb) {
  double acc = 0;
  for (long i = 0; i < n; ++i) {
    double bd = std::numeric_limits<double>::max();
    for (long c = 0; c < cb.C; ++c)
      bd = std::min(bd, detail::sq_dist(data.data() + i * dim, cb.center(c), dim));
    acc += bd;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Multi-label targets
// ---------------------------------------------------------------------------

struct MultiLabelTarget {
  LabelSequence z1;       // ids in [0, C)
  LabelSequence z2;       // ids in [0, C]; id C is the reserved ABSENT class
  uint16_t absent_id = 0;
};

// Raw/Noisy: z1 = speech labels, z2 = ABSENT everywhere. Overlapped kinds:
// z1 = labels of the higher-energy component, z2 = the other; equal energies
// fall back to manifest order.
inline MultiLabelTarget make_targets(const corpus::MixtureRecord& record,
                                     const std::vector<LabelSequence>& component_labels,
                                     const std::vector<double>& component_energies,
                                     long n_classes) {
  const bool overlapped = record.kind == corpus::MixtureKind::Overlapped ||
                          record.kind == corpus::MixtureKind::NoisyOverlapped;
  const size_t expect = overlapped ? 2 : 1;
  require_input(component_labels.size() == expect && component_energies.size() == expect,
                "make_targets: component count does not match record kind");
  for (const auto& seq : component_labels)
    for (uint16_t z : seq)
      require_input(z < n_classes, "make_targets: label id out of range");

  MultiLabelTarget t;
  t.absent_id = static_cast<uint16_t>(n_classes);
  if (!overlapped) {
    t.z1 = component_labels[0];
    t.z2.assign(t.z1.size(), t.absent_id);
    return t;
  }
  require_input(component_labels[0].size() == component_labels[1].size(),
                "make_targets: component label lengths differ");
  const int primary = component_energies[1] > component_energies[0] ? 1 : 0;
  t.z1 = component_labels[primary];
  t.z2 = component_labels[1 - primary];
  return t;
}

// ---------------------------------------------------------------------------
// Persistence: codebook + per-record label files
// ---------------------------------------------------------------------------

constexpr uint32_t kCodebookMagic = 0x4d4b4d43;  // "CMKM"
constexpr uint32_t kLabelsMagic = 0x4d4c424c;    // "LBLM"

inline void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
  auto os = io::open_out(path);
  io::write_pod<uint32_t>(os, kCodebookMagic);
  io::write_pod<uint32_t>(os, 1);  // version
  io::write_pod<uint64_t>(os, static_cast<uint64_t>(cb.C));
  io::write_pod<uint64_t>(os, static_cast<uint64_t>(cb.D));
  io::write_array(os, cb.centers);
}

inline Codebook load_codebook(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  require_input(io::read_pod<uint32_t>(is) == kCodebookMagic, "codebook: bad magic");
  require_input(io::read_pod<uint32_t>(is) == 1, "codebook: unsupported version");
  Codebook cb;
  cb.C = static_cast<long>(io::read_pod<uint64_t>(is));
  cb.D = static_cast<long>(io::read_pod<uint64_t>(is));
  cb.centers.resize(static_cast<size_t>(cb.C) * cb.D);
  io::read_array(is, cb.centers);
  return cb;
}

// Labels of every clean component of one record, keyed on disk by record id.
inline void save_labels(const std::vector<LabelSequence>& seqs,
                        const std::filesystem::path& path) {
  auto os = io::open_out(path);
  io::write_pod<uint32_t>(os, kLabelsMagic);
  io::write_pod<uint32_t>(os, static_cast<uint32_t>(seqs.size()));
  for (const auto& s : seqs) {
    io::write_pod<uint64_t>(os, static_cast<uint64_t>(s.size()));
    io::write_array(os, s);
  }
}

inline std::vector<LabelSequence> load_labels(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  require_input(io::read_pod<uint32_t>(is) == kLabelsMagic, "labels: bad magic");
  const uint32_t n = io::read_pod<uint32_t>(is);
  std::vector<LabelSequence> seqs(n);
  for (auto& s : seqs) {
    s.resize(io::read_pod<uint64_t>(is));
    io::read_array(is, s);
  }
  return seqs;
}

inline std::filesystem::path label_path(const std::filesystem::path& dir,
                                        const std::string& record_id) {
  return dir / (record_id + ".labels");
}

}  // namespace mpl::labeler
