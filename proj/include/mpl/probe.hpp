// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpl/model.hpp"
#include "mpl/signal.hpp"
#include "mpl/train.hpp"

namespace mpl::probe {

// ---------------------------------------------------------------------------
// Weighted layer sum and PIT (plain, tape-free forms for tests/eval)
// ---------------------------------------------------------------------------

inline std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double z = 0;
  std::vector<double> p(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& x : p) x /= z;
  return p;
}

template <typename T>
ad::Tensor<T> weighted_layer_sum(const std::vector<ad::Tensor<T>>& layers,
                                 const std::vector<double>& logits) {
  require_input(!layers.empty() && layers.size() == logits.size(),
                "weighted_layer_sum: weight count must match layer count");
  auto w = softmax(logits);
  ad::Tensor<T> out(layers[0].shape);
  for (size_t l = 0; l < layers.size(); ++l) {
    require_input(layers[l].shape == layers[0].shape, "weighted_layer_sum: shape mismatch");
    for (long i = 0; i < out.numel(); ++i)
      out.v[i] += static_cast<T>(w[l]) * layers[l].v[i];
  }
  return out;
}

struct PitResult {
  double loss = 0;
  bool swapped = false;  // permutation: identity or swap (2 sources)
};

// min over the two source permutations of the per-source-averaged MSE
inline PitResult pit_mse(const std::vector<double>& e1, const std::vector<double>& e2,
                         const std::vector<double>& r1, const std::vector<double>& r2) {
  require_input(e1.size() == e2.size() && r1.size() == r2.size() && e1.size() == r1.size(),
                "pit_mse: shape mismatch");
  require_input(!e1.empty(), "pit_mse: empty masks");
  auto mse = [](const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0;
    for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc / static_cast<double>(a.size());
  };
  const double ident = 0.5 * (mse(e1, r1) + mse(e2, r2));
  const double swap = 0.5 * (mse(e1, r2) + mse(e2, r1));
  PitResult r;
  r.swapped = swap < ident;
  r.loss = r.swapped ? swap : ident;
  return r;
}

// ---------------------------------------------------------------------------
// Probe configuration and report
// ---------------------------------------------------------------------------

struct ProbeConfig {
  int context = 3;  // +/- frames fed to the regressor
  int hidden = 96;
  long steps = 400;
  int batch_size = 8;
  double lr = 2e-3;
  double holdout_fraction = 0.2;
  uint64_t seed = 1;
  signal::StftConfig stft{};
};

struct ProbeReport {
  std::string task;
  std::string route;
  std::string checkpoint = "-";
  std::string metric;
  double value = 0;
  double oracle_ceiling = 0;
  long n_records = 0;
  uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const ProbeReport& r) {
  j = nlohmann::json{{"task", r.task},
                     {"route", r.route},
                     {"checkpoint", r.checkpoint},
                     {"metric", r.metric},
                     {"value", r.value},
                     {"oracle_ceiling", r.oracle_ceiling},
                     {"n_records", r.n_records},
                     {"seed", r.seed}};
}

// ---------------------------------------------------------------------------
// Shared probe machinery
// ---------------------------------------------------------------------------

namespace detail {

// one separation/enhancement record with frozen-backbone features
struct SepItem {
  std::vector<ad::Tensor<double>> layers;   // (n_layers+1) x [T, d]
  ad::Tensor<double> target;                // [T, S*F] stacked per-source masks
  signal::Spectrogram mix_spec;
  std::vector<signal::Waveform> components;
  signal::Waveform mixture;
  long frames = 0;  // model frames
};

template <typename T>
std::vector<ad::Tensor<double>> backbone_layers(model::SslModel<T>& m,
                                                const signal::Waveform& wave,
                                                model::Route route) {
  std::vector<T> w(wave.samples.begin(), wave.samples.end());
  auto feats = m.forward_features(w, route);
  std::vector<ad::Tensor<double>> out;
  for (const auto& l : feats.per_layer) {
    ad::Tensor<double> d(l.shape);
    for (long i = 0; i < l.numel(); ++i) d.v[i] = static_cast<double>(l.v[i]);
    out.push_back(std::move(d));
  }
  return out;
}

// PSM against the mixture, averaged down to the model frame rate
inline ad::Tensor<double> downsampled_psm(const signal::Spectrogram& mix,
                                          const signal::Waveform& source, long model_frames,
                                          const signal::StftConfig& cfg, long hop_model) {
  auto psm = signal::psm_target(mix, signal::stft(source, cfg));
  const long F = psm.n_bins;
  const long ratio = std::max(1L, hop_model / cfg.hop);
  ad::Tensor<double> out({model_frames, F});
  for (long t = 0; t < model_frames; ++t) {
    long n = 0;
    for (long s = t * ratio; s < std::min<long>((t + 1) * ratio, psm.n_frames); ++s, ++n)
      for (long f = 0; f < F; ++f) out.v[t * F + f] += psm.at(s, f);
    if (n > 1)
      for (long f = 0; f < F; ++f) out.v[t * F + f] /= static_cast<double>(n);
  }
  return out;
}

// duplicate model-rate mask frames back up to the STFT rate and clamp
inline signal::Mask upsample_mask(const double* mask, long model_frames, long F,
                                  long stft_frames, long ratio) {
  signal::Mask m;
  m.n_frames = stft_frames;
  m.n_bins = F;
  m.v.resize(static_cast<size_t>(stft_frames * F));
  for (long s = 0; s < stft_frames; ++s) {
    const long t = std::min(s / ratio, model_frames - 1);
    for (long f = 0; f < F; ++f)
      m.v[s * F + f] = std::clamp(mask[t * F + f], 0.0, 1.0);
  }
  return m;
}

struct ProbeNet {
  ad::ParamStore<double> params;
  long n_layers = 0;

  static ProbeNet init(long layer_count, long d_model, long out_dim, const ProbeConfig& cfg,
                       bool zero_final) {
    ProbeNet net;
    net.n_layers = layer_count;
    Rng rng(hash64(cfg.seed, 0x9090));
    net.params.add("layer_logits", {layer_count});
    auto& w1 = net.params.add("w1", {cfg.hidden, (2L * cfg.context + 1) * d_model});
    ad::fill_normal(w1.value, rng, std::sqrt(1.0 / static_cast<double>(w1.value.dim(1))));
    net.params.add("b1", {cfg.hidden});
    auto& w2 = net.params.add("w2", {out_dim, cfg.hidden});
    if (!zero_final)
      ad::fill_normal(w2.value, rng, std::sqrt(1.0 / static_cast<double>(cfg.hidden)));
    net.params.add("b2", {out_dim});
    return net;
  }

  ad::Node<double>* forward(ad::Tape<double>& tape,
                            const std::vector<ad::Tensor<double>>& layers,
                            const ProbeConfig& cfg) {
    std::vector<const ad::Tensor<double>*> lp;
    for (const auto& l : layers) lp.push_back(&l);
    auto* coeff = tape.softmax_vec(tape.leaf(params.at("layer_logits")));
    auto* feat = tape.lincomb(lp, coeff);
    auto* ctx = tape.context_window(feat, cfg.context);
    auto* h = tape.relu(tape.linear(ctx, tape.leaf(params.at("w1")), tape.leaf(params.at("b1"))));
    return tape.linear(h, tape.leaf(params.at("w2")), tape.leaf(params.at("b2")));
  }
};

inline train::TrainConfig probe_train_config(const ProbeConfig& cfg) {
  train::TrainConfig tc;
  tc.total_steps = std::max(1L, cfg.steps);
  tc.peak_lr = cfg.lr;
  tc.batch_size = cfg.batch_size;
  tc.seed = cfg.seed;
  return tc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Separation / enhancement probes
// ---------------------------------------------------------------------------

// Trains a windowed mask regressor on frozen backbone features and reports
// mean SI-SDR over the held-out records (sources best-permutation for the
// 2-speaker task). `sources` = 2 selects Overlapped records (SS), 1 selects
// Noisy records (SE).
template <typename T>
ProbeReport run_separation_probe(model::SslModel<T>& m, model::Route route,
                                 const corpus::CorpusManifest& manifest, int sources,
                                 const ProbeConfig& cfg) {
  require_input(sources == 1 || sources == 2, "probe: sources must be 1 or 2");
  const auto want =
      sources == 2 ? corpus::MixtureKind::Overlapped : corpus::MixtureKind::Noisy;
  const long hop_model = model::conv_downsample_factor(m.cfg);
  const long ratio = std::max(1L, hop_model / cfg.stft.hop);

  std::vector<detail::SepItem> items;
  for (const auto& rec : manifest.records) {
    if (rec.kind != want) continue;
    auto rz = corpus::realize(rec, manifest.sample_rate, manifest.audio_mode);
    detail::SepItem it;
    it.mixture = rz.mixture;
    it.components = rz.components;
    it.mix_spec = signal::stft(rz.mixture, cfg.stft);
    it.layers = detail::backbone_layers(m, rz.mixture, route);
    it.frames = it.layers[0].dim(0);
    const long F = it.mix_spec.n_bins;
    it.target = ad::Tensor<double>({it.frames, sources * F});
    for (int s = 0; s < sources; ++s) {
      auto psm = detail::downsampled_psm(it.mix_spec, rz.components[s], it.frames, cfg.stft,
                                         hop_model);
      for (long t = 0; t < it.frames; ++t)
        std::copy_n(&psm.v[t * F], F, &it.target.v[t * sources * F + s * F]);
    }
    items.push_back(std::move(it));
  }
  require_input(!items.empty(), sources == 2 ? "probe: no overlapped records"
                                             : "probe: no noisy records");

  const size_t n_hold = static_cast<size_t>(items.size() * cfg.holdout_fraction);
  const size_t n_train = items.size() - n_hold;
  require_input(n_train >= 1 && n_hold >= 1, "probe: split leaves an empty side");

  const long F = items[0].mix_spec.n_bins;
  const long d = m.cfg.d_model;
  auto net = detail::ProbeNet::init(static_cast<long>(items[0].layers.size()), d, sources * F,
                                    cfg, /*zero_final=*/true);
  auto tc = detail::probe_train_config(cfg);
  auto st = train::TrainState<double>::fresh(net, cfg.seed);

  // swapped reference for the tape-level PIT branch
  auto swapped_target = [&](const detail::SepItem& it) {
    ad::Tensor<double> sw(it.target.shape);
    for (long t = 0; t < it.frames; ++t) {
      std::copy_n(&it.target.v[t * 2 * F + F], F, &sw.v[t * 2 * F]);
      std::copy_n(&it.target.v[t * 2 * F], F, &sw.v[t * 2 * F + F]);
    }
    return sw;
  };

  for (long step = 1; step <= tc.total_steps && cfg.steps > 0; ++step) {
    net.params.zero_grads();
    ad::Tape<double> tape;
    ad::Node<double>* total = nullptr;
    for (int b = 0; b < tc.batch_size; ++b) {
      const auto& it = items[st.rng.below(n_train)];
      auto* masks = net.forward(tape, it.layers, cfg);
      ad::Node<double>* loss = nullptr;
      if (sources == 2) {
        auto* ident = tape.mse(masks, it.target);
        auto* swap = tape.mse(masks, swapped_target(it));
        loss = swap->value().v[0] < ident->value().v[0] ? swap : ident;
      } else {
        loss = tape.mse(masks, it.target);
      }
      total = total ? tape.add(total, loss) : loss;
    }
    auto* loss = tape.scale(total, 1.0 / tc.batch_size);
    tape.backward(loss);
    train::adam_step(net.params, st, train::lr_at_step(step, tc), tc);
  }

  // held-out evaluation: masks -> mixture phase -> SI-SDR
  double sum_db = 0, sum_oracle = 0;
  long n_eval = 0;
  for (size_t i = n_train; i < items.size(); ++i) {
    const auto& it = items[i];
    ad::Tape<double> tape;
    auto* masks = net.forward(tape, it.layers, cfg);

    auto reconstruct = [&](const signal::Mask& msk) {
      return signal::istft(signal::apply_mask(it.mix_spec, msk));
    };
    std::vector<signal::Waveform> est;
    for (int s = 0; s < sources; ++s) {
      // per-source block of the regressor output
      ad::Tensor<double> block({it.frames, F});
      for (long t = 0; t < it.frames; ++t)
        std::copy_n(&masks->value().v[t * sources * F + s * F], F, &block.v[t * F]);
      est.push_back(reconstruct(detail::upsample_mask(block.v.data(), it.frames, F,
                                                      it.mix_spec.n_frames, ratio)));
    }
    auto truncated = [&](const signal::Waveform& ref, size_t n) {
      signal::Waveform t;
      t.sample_rate = ref.sample_rate;
      t.samples.assign(ref.samples.begin(), ref.samples.begin() + n);
      return t;
    };
    const size_t n_out = est[0].samples.size();
    auto si = [&](const signal::Waveform& e, const signal::Waveform& r) {
      return signal::clamp_db(signal::si_sdr(e, truncated(r, n_out)));
    };
    double got;
    if (sources == 2) {
      const double ident = 0.5 * (si(est[0], it.components[0]) + si(est[1], it.components[1]));
      const double swap = 0.5 * (si(est[0], it.components[1]) + si(est[1], it.components[0]));
      got = std::max(ident, swap);
    } else {
      got = si(est[0], it.components[0]);
    }
    sum_db += got;

    // oracle ceiling: ideal PSM at native STFT resolution
    double oracle = 0;
    for (int s = 0; s < sources; ++s) {
      auto ideal = signal::psm_target(it.mix_spec, signal::stft(it.components[s], cfg.stft));
      oracle += si(reconstruct(ideal), it.components[s]);
    }
    sum_oracle += oracle / sources;
    ++n_eval;
  }

  ProbeReport rep;
  rep.task = sources == 2 ? "ss" : "se";
  rep.route = model::route_name(route);
  rep.metric = "si_sdr_db";
  rep.value = sum_db / n_eval;
  rep.oracle_ceiling = sum_oracle / n_eval;
  rep.n_records = n_eval;
  rep.seed = cfg.seed;
  return rep;
}

template <typename T>
ProbeReport run_ss_probe(model::SslModel<T>& m, model::Route route,
                         const corpus::CorpusManifest& manifest, const ProbeConfig& cfg) {
  return run_separation_probe(m, route, manifest, 2, cfg);
}

template <typename T>
ProbeReport run_se_probe(model::SslModel<T>& m, model::Route route,
                         const corpus::CorpusManifest& manifest, const ProbeConfig& cfg) {
  return run_separation_probe(m, route, manifest, 1, cfg);
}

// ---------------------------------------------------------------------------
// Retention probe: frame-label accuracy on clean speech
// ---------------------------------------------------------------------------

// Linear classifier over the weighted layer sum predicting the head-1 pseudo
// labels of Raw records; the desk proxy for original-task retention.
template <typename T>
ProbeReport run_retention_probe(model::SslModel<T>& m, model::Route route,
                                const train::Dataset<T>& ds, const ProbeConfig& cfg) {
  struct Item {
    std::vector<ad::Tensor<double>> layers;
    std::vector<uint16_t> labels;
    long frames = 0;
  };
  std::vector<Item> items;
  for (const auto& ex : ds.examples) {
    if (ex.kind != corpus::MixtureKind::Raw) continue;
    Item it;
    signal::Waveform w;
    w.sample_rate = ds.sample_rate;
    w.samples.assign(ex.wave.begin(), ex.wave.end());
    it.layers = detail::backbone_layers(m, w, route);
    it.frames = std::min<long>(it.layers[0].dim(0), static_cast<long>(ex.z1.size()));
    it.labels = ex.z1;
    items.push_back(std::move(it));
  }
  require_input(!items.empty(), "retention probe: no raw records");
  const size_t n_hold = static_cast<size_t>(items.size() * cfg.holdout_fraction);
  const size_t n_train = items.size() - n_hold;
  require_input(n_train >= 1 && n_hold >= 1, "retention probe: split leaves an empty side");

  const long C = ds.n_classes;
  ProbeConfig head_cfg = cfg;
  head_cfg.context = 0;  // plain per-frame linear classifier
  head_cfg.hidden = std::max<int>(16, m.cfg.d_model);
  auto net = detail::ProbeNet::init(static_cast<long>(items[0].layers.size()), m.cfg.d_model, C,
                                    head_cfg, /*zero_final=*/false);
  auto tc = detail::probe_train_config(cfg);
  auto st = train::TrainState<double>::fresh(net, cfg.seed);

  for (long step = 1; step <= tc.total_steps && cfg.steps > 0; ++step) {
    net.params.zero_grads();
    ad::Tape<double> tape;
    ad::Node<double>* total = nullptr;
    long rows_total = 0;
    for (int b = 0; b < tc.batch_size; ++b) {
      const auto& it = items[st.rng.below(n_train)];
      auto* logits = net.forward(tape, it.layers, head_cfg);
      std::vector<long> rows(static_cast<size_t>(it.frames));
      for (long r = 0; r < it.frames; ++r) rows[r] = r;
      auto* loss = tape.ce_rows(logits, it.labels, rows, 1.0);
      rows_total += it.frames;
      total = total ? tape.add(total, loss) : loss;
    }
    auto* loss = tape.scale(total, 1.0 / std::max(1L, rows_total));
    tape.backward(loss);
    train::adam_step(net.params, st, train::lr_at_step(step, tc), tc);
  }

  long ok = 0, n = 0;
  for (size_t i = n_train; i < items.size(); ++i) {
    const auto& it = items[i];
    ad::Tape<double> tape;
    auto* logits = net.forward(tape, it.layers, head_cfg);
    for (long t = 0; t < it.frames; ++t) {
      long best = 0;
      for (long c = 1; c < C; ++c)
        if (logits->value().v[t * C + c] > logits->value().v[t * C + best]) best = c;
      ++n;
      ok += best == it.labels[t];
    }
  }

  ProbeReport rep;
  rep.task = "retention";
  rep.route = model::route_name(route);
  rep.metric = "frame_label_accuracy";
  rep.value = n ? static_cast<double>(ok) / n : 0;
  rep.oracle_ceiling = 1.0;
  rep.n_records = static_cast<long>(items.size() - n_train);
  rep.seed = cfg.seed;
  return rep;
}

}  // namespace mpl::probe
