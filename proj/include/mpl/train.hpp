// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpl/adapter.hpp"
#include "mpl/checkpoint.hpp"
#include "mpl/corpus.hpp"
#include "mpl/gradcheck.hpp"
#include "mpl/labeler.hpp"
#include "mpl/model.hpp"

namespace mpl::train {

enum class Mode { Full, Adapter, FinetuneUnfrozen };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Full: return "full";
    case Mode::Adapter: return "adapter";
    case Mode::FinetuneUnfrozen: return "finetune-unfrozen";
  }
  return "?";
}

inline Mode mode_from_name(const std::string& s) {
  if (s == "full") return Mode::Full;
  if (s == "adapter") return Mode::Adapter;
  if (s == "finetune-unfrozen") return Mode::FinetuneUnfrozen;
  throw InvalidInputError("unknown training mode: " + s);
}

struct TrainConfig {
  long total_steps = 2000;
  double peak_lr = 3e-4;
  double warmup_fraction = 0.08;
  int batch_size = 4;
  uint64_t seed = 1;
  Mode mode = Mode::Full;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  long checkpoint_every = 0;  // 0: every 10% of total_steps
  bool check_frozen_grads = true;
  std::vector<corpus::MixtureKind> kinds;  // empty: all four kinds
};

inline void validate(const TrainConfig& c) {
  require_config(c.total_steps >= 1, "train: total_steps must be >= 1");
  require_config(c.peak_lr > 0, "train: peak_lr must be positive");
  require_config(c.warmup_fraction > 0 && c.warmup_fraction < 1,
                 "train: warmup_fraction must be in (0, 1)");
  require_config(c.batch_size >= 1, "train: batch_size must be >= 1");
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"total_steps", c.total_steps},
                     {"peak_lr", c.peak_lr},
                     {"warmup_fraction", c.warmup_fraction},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"mode", mode_name(c.mode)},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"grad_clip", c.grad_clip},
                     {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.total_steps = j.value("total_steps", d.total_steps);
  c.peak_lr = j.value("peak_lr", d.peak_lr);
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.mode = mode_from_name(j.value("mode", std::string("full")));
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
}

// linear 0 -> peak over the warm-up, then linear peak -> 0
inline double lr_at_step(long step, const TrainConfig& cfg) {
  validate(cfg);
  require_input(step >= 0 && step <= cfg.total_steps, "lr_at_step: step out of range");
  const long w = std::max(1L, std::lround(cfg.warmup_fraction * cfg.total_steps));
  if (step <= w) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(w);
  return cfg.peak_lr * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - w);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

template <typename T>
struct TrainState {
  long step = 0;
  Rng rng;
  // first/second moments, exactly one pair per trainable tensor
  std::map<std::string, std::pair<ad::Tensor<T>, ad::Tensor<T>>> moments;
  double last_loss = 0.0;
  double best_loss = std::numeric_limits<double>::infinity();

  template <typename M>
  static TrainState fresh(const M& model, uint64_t seed) {
    TrainState st;
    st.rng = Rng(hash64(seed, 0x7261696e));
    for (const auto& [name, p] : model.params)
      if (p.trainable)
        st.moments.emplace(name,
                           std::make_pair(ad::Tensor<T>(p.value.shape), ad::Tensor<T>(p.value.shape)));
    return st;
  }
};

// bias-corrected Adam over the trainable tensors only; a nonzero gradient on
// a frozen tensor is a broken contract
template <typename T>
void adam_step(ad::ParamStore<T>& params, TrainState<T>& state, double lr,
               const TrainConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  double clip_scale = 1.0;
  if (cfg.grad_clip > 0) {
    double norm2 = 0;
    for (const auto& [name, p] : params)
      if (p.trainable)
        for (T g : p.grad.v) norm2 += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(norm2);
    if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
  }

  for (auto& [name, p] : params) {
    if (!p.trainable) {
      if (cfg.check_frozen_grads)
        for (T g : p.grad.v)
          if (g != T(0))
            throw ContractViolation("gradient on frozen tensor: " + name);
      continue;
    }
    auto it = state.moments.find(name);
    require_config(it != state.moments.end(), "adam: missing moments for " + name);
    auto& [m, v] = it->second;
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T one = T(1);
    for (long i = 0; i < p.value.numel(); ++i) {
      const T g = p.grad.v[i] * static_cast<T>(clip_scale);
      m.v[i] = b1 * m.v[i] + (one - b1) * g;
      v.v[i] = b2 * v.v[i] + (one - b2) * g * g;
      const T mhat = m.v[i] / static_cast<T>(bc1);
      const T vhat = v.v[i] / static_cast<T>(bc2);
      p.value.v[i] -= static_cast<T>(lr) * mhat / (std::sqrt(vhat) + static_cast<T>(cfg.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Dataset: realized mixtures plus their multi-label targets
// ---------------------------------------------------------------------------

template <typename T>
struct Example {
  std::string id;
  corpus::MixtureKind kind = corpus::MixtureKind::Raw;
  std::vector<T> wave;  // mixture samples
  std::vector<uint16_t> z1, z2;
};

template <typename T>
struct Dataset {
  std::vector<Example<T>> examples;
  long n_classes = 0;
  int sample_rate = 16000;

  std::vector<size_t> of_kind(corpus::MixtureKind k) const {
    std::vector<size_t> idx;
    for (size_t i = 0; i < examples.size(); ++i)
      if (examples[i].kind == k) idx.push_back(i);
    return idx;
  }
};

// realizes every record and assembles targets from the stored labels
template <typename T>
Dataset<T> build_dataset(const corpus::CorpusManifest& manifest,
                         const std::filesystem::path& labels_dir, long n_classes,
                         const std::filesystem::path& corpus_dir = {}) {
  Dataset<T> ds;
  ds.n_classes = n_classes;
  ds.sample_rate = manifest.sample_rate;
  for (const auto& rec : manifest.records) {
    auto rz = corpus::realize(rec, manifest.sample_rate, manifest.audio_mode, corpus_dir);
    auto seqs = labeler::load_labels(labeler::label_path(labels_dir, rec.id));
    require_input(seqs.size() == rz.components.size(),
                  "dataset: label/component count mismatch for " + rec.id);
    std::vector<double> energies;
    for (const auto& c : rz.components) energies.push_back(signal::avg_energy(c));
    auto target = labeler::make_targets(rec, seqs, energies, n_classes);
    Example<T> ex;
    ex.id = rec.id;
    ex.kind = rec.kind;
    ex.wave.assign(rz.mixture.samples.begin(), rz.mixture.samples.end());
    ex.z1 = std::move(target.z1);
    ex.z2 = std::move(target.z2);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

// index split by record order; kinds stay balanced because build_corpus
// interleaves them
template <typename T>
std::pair<Dataset<T>, Dataset<T>> split_dataset(const Dataset<T>& ds, double holdout_fraction) {
  Dataset<T> tr, ho;
  tr.n_classes = ho.n_classes = ds.n_classes;
  tr.sample_rate = ho.sample_rate = ds.sample_rate;
  const size_t n_hold = static_cast<size_t>(ds.examples.size() * holdout_fraction);
  const size_t n_train = ds.examples.size() - n_hold;
  for (size_t i = 0; i < ds.examples.size(); ++i)
    (i < n_train ? tr : ho).examples.push_back(ds.examples[i]);
  return {std::move(tr), std::move(ho)};
}

// ---------------------------------------------------------------------------
// Pre-training loop
// ---------------------------------------------------------------------------

struct TraceRow {
  long step = 0;
  double lr = 0;
  double loss = 0;
  double head1_loss = 0;
  double head2_loss = 0;
  long masked_frames = 0;
};

inline void write_trace(const std::vector<TraceRow>& rows, const std::filesystem::path& path) {
  auto os = io::open_out(path);
  os << "step,lr,loss,head1_loss,head2_loss,masked_frames\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%ld,%.10g,%.10g,%.10g,%.10g,%ld\n", r.step, r.lr, r.loss,
                  r.head1_loss, r.head2_loss, r.masked_frames);
    os << buf;
  }
}

template <typename T>
struct PretrainResult {
  std::vector<TraceRow> trace;
  double first_loss = 0;
  double final_loss = 0;
  uint64_t fwd_macs_last_step = 0;
  uint64_t bwd_macs_last_step = 0;
};

template <typename T>
ckpt::CheckpointData pack_checkpoint(const model::SslModel<T>& m,
                                     const adapter::FreezeLedger& ledger,
                                     const TrainState<T>& st, Mode mode) {
  ckpt::CheckpointData c;
  c.cfg = m.cfg;
  c.adapters = m.adapters;
  c.ledger = ledger;
  c.rng_state = st.rng.state();
  c.step = st.step;
  c.mode = mode_name(mode);
  for (const auto& [name, p] : m.params) c.tensors.emplace(name, ckpt::to_f32(p.value));
  for (const auto& [name, mv] : st.moments) {
    c.tensors.emplace("adam.m." + name, ckpt::to_f32(mv.first));
    c.tensors.emplace("adam.v." + name, ckpt::to_f32(mv.second));
  }
  return c;
}

template <typename T>
struct LoadedCheckpoint {
  model::SslModel<T> model;
  adapter::FreezeLedger ledger;
  TrainState<T> state;
  Mode mode = Mode::Full;
};

template <typename T>
LoadedCheckpoint<T> unpack_checkpoint(const ckpt::CheckpointData& c) {
  LoadedCheckpoint<T> out;
  out.model = model::SslModel<T>::init(c.cfg, 0);
  if (c.adapters) out.model.add_adapters(*c.adapters, 0);
  for (auto& [name, p] : out.model.params) {
    auto it = c.tensors.find(name);
    require_input(it != c.tensors.end(), "checkpoint: missing tensor " + name);
    ckpt::from_f32(it->second, p.value);
  }
  adapter::apply_ledger(out.model, c.ledger);
  out.ledger = c.ledger;
  out.mode = mode_from_name(c.mode);
  out.state.step = c.step;
  out.state.rng.set_state(c.rng_state);
  for (const auto& [name, p] : out.model.params) {
    if (!p.trainable) continue;
    ad::Tensor<T> m(p.value.shape), v(p.value.shape);
    auto im = c.tensors.find("adam.m." + name);
    auto iv = c.tensors.find("adam.v." + name);
    if (im != c.tensors.end()) ckpt::from_f32(im->second, m);
    if (iv != c.tensors.end()) ckpt::from_f32(iv->second, v);
    out.state.moments.emplace(name, std::make_pair(std::move(m), std::move(v)));
  }
  return out;
}

template <typename T>
LoadedCheckpoint<T> load_model_checkpoint(const std::filesystem::path& path) {
  return unpack_checkpoint<T>(ckpt::load_checkpoint(path));
}

// Runs pre-training from state.step to cfg.total_steps. Kinds are sampled
// round-robin so every batch stays close to the 1:1:1:1 recipe. Deterministic
// given (seed/state, config, dataset).
template <typename T>
PretrainResult<T> pretrain(model::SslModel<T>& m, const adapter::FreezeLedger& ledger,
                           const Dataset<T>& ds, const TrainConfig& cfg, TrainState<T>& state,
                           const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  validate(cfg);
  require_config(ds.n_classes == m.cfg.n_classes,
                 "pretrain: dataset classes do not match the model codebook");
  require_input(!ds.examples.empty(), "pretrain: empty dataset");
  if (cfg.mode == Mode::Adapter) {
    require_config(m.adapters.has_value(), "pretrain: adapter mode without adapters");
    for (const auto& [name, flag] : ledger)
      require_config(flag == model::adapter_mode_trainable(name),
                     "pretrain: adapter-mode ledger must freeze exactly the backbone");
  }
  adapter::apply_ledger(m, ledger);

  // kinds used for round-robin batch interleave
  std::vector<corpus::MixtureKind> kinds = cfg.kinds;
  if (kinds.empty()) {
    for (auto k : corpus::kAllKinds)
      if (!ds.of_kind(k).empty()) kinds.push_back(k);
  }
  require_input(!kinds.empty(), "pretrain: no usable kinds");
  std::map<corpus::MixtureKind, std::vector<size_t>> by_kind;
  for (auto k : kinds) {
    by_kind[k] = ds.of_kind(k);
    require_input(!by_kind[k].empty(),
                  std::string("pretrain: no examples of kind ") + corpus::kind_name(k));
  }

  const model::MaskSpec mask{m.cfg.mask_prob, m.cfg.mask_span};
  const model::Route route =
      (cfg.mode == Mode::Adapter || m.adapters.has_value()) ? model::Route::II : model::Route::I;

  const long ckpt_every =
      cfg.checkpoint_every > 0 ? cfg.checkpoint_every : std::max(1L, cfg.total_steps / 10);
  if (out_dir) std::filesystem::create_directories(*out_dir);

  PretrainResult<T> res;
  uint64_t clip_counter = static_cast<uint64_t>(state.step) * cfg.batch_size;
  for (long step = state.step + 1; step <= cfg.total_steps; ++step) {
    m.params.zero_grads();
    ad::Tape<T> tape;
    ad::Node<T>* total = nullptr;
    double h1_val = 0, h2_val = 0;
    long masked_total = 0;
    bool warned = false;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto k = kinds[clip_counter % kinds.size()];
      ++clip_counter;
      const auto& pool = by_kind[k];
      const auto& ex = ds.examples[pool[state.rng.below(pool.size())]];
      auto* x = m.conv_encode(tape, ex.wave);
      const auto rows = model::draw_mask_rows(x->value().dim(0), mask, state.rng);
      auto* xm = m.apply_mask(tape, x, rows);
      auto enc = m.encoder_forward(tape, xm, route);
      auto lp = m.msp_loss(tape, enc.final, rows, ex.z1, ex.z2);
      masked_total += lp.masked;
      warned = warned || lp.empty_mask_warning;
      h1_val += lp.head1->value().v[0];
      h2_val += lp.head2->value().v[0];
      total = total ? tape.add(total, lp.sum) : lp.sum;
    }

    TraceRow row;
    row.step = step;
    row.lr = lr_at_step(step, cfg);
    row.masked_frames = masked_total;
    if (masked_total > 0) {
      auto* loss = tape.scale(total, T(1) / static_cast<T>(masked_total));
      row.loss = loss->value().v[0];
      row.head1_loss = h1_val / masked_total;
      row.head2_loss = h2_val / masked_total;
      tape.backward(loss);
      adam_step(m.params, state, row.lr, cfg);
    } else {
      // nothing masked in the whole batch: loss 0, no update
      state.step += 1;
    }
    res.fwd_macs_last_step = tape.fwd_macs;
    res.bwd_macs_last_step = tape.bwd_macs;
    if (res.trace.empty()) res.first_loss = row.loss;
    res.final_loss = row.loss;
    state.last_loss = row.loss;
    state.best_loss = std::min(state.best_loss, row.loss);
    res.trace.push_back(row);

    if (out_dir && (step % ckpt_every == 0 || step == cfg.total_steps)) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_step%06ld.bin", step);
      ckpt::save_checkpoint(pack_checkpoint(m, ledger, state, cfg.mode), *out_dir / name);
    }
  }
  if (out_dir) {
    ckpt::save_checkpoint(pack_checkpoint(m, ledger, state, cfg.mode), *out_dir / "ckpt_last.bin");
    write_trace(res.trace, *out_dir / "trace.csv");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Masked-prediction evaluation (held-out accuracy)
// ---------------------------------------------------------------------------

struct MaskedEval {
  double head1_acc = 0;
  double head2_acc = 0;
  double head2_absent_acc = 0;  // ABSENT recall on Raw/Noisy frames
  long masked_frames = 0;
  long absent_frames = 0;
};

template <typename T>
MaskedEval masked_eval(model::SslModel<T>& m, const Dataset<T>& ds, model::Route route,
                       uint64_t seed) {
  const model::MaskSpec mask{m.cfg.mask_prob, m.cfg.mask_span};
  Rng rng(hash64(seed, 0xe7a1));
  long h1_ok = 0, h2_ok = 0, absent_ok = 0, n = 0, n_absent = 0;
  for (const auto& ex : ds.examples) {
    const long Tn = model::conv_output_length(m.cfg, static_cast<long>(ex.wave.size()));
    auto rows = model::draw_mask_rows(Tn, mask, rng);
    if (rows.empty()) continue;
    auto hs = m.head_scores(ex.wave, route, rows);
    const long C1 = hs.s1.dim(1), C2 = hs.s2.dim(1);
    const long Tt = std::min({Tn, static_cast<long>(ex.z1.size()),
                              static_cast<long>(ex.z2.size())});
    const bool single = ex.kind == corpus::MixtureKind::Raw ||
                        ex.kind == corpus::MixtureKind::Noisy;
    for (long r : rows) {
      if (r >= Tt) continue;
      long a1 = 0, a2 = 0;
      for (long c = 1; c < C1; ++c)
        if (hs.s1.v[r * C1 + c] > hs.s1.v[r * C1 + a1]) a1 = c;
      for (long c = 1; c < C2; ++c)
        if (hs.s2.v[r * C2 + c] > hs.s2.v[r * C2 + a2]) a2 = c;
      ++n;
      h1_ok += a1 == ex.z1[r];
      h2_ok += a2 == ex.z2[r];
      if (single) {
        ++n_absent;
        absent_ok += a2 == m.absent_id();
      }
    }
  }
  MaskedEval ev;
  ev.masked_frames = n;
  ev.absent_frames = n_absent;
  ev.head1_acc = n ? static_cast<double>(h1_ok) / n : 0;
  ev.head2_acc = n ? static_cast<double>(h2_ok) / n : 0;
  ev.head2_absent_acc = n_absent ? static_cast<double>(absent_ok) / n_absent : 0;
  return ev;
}

// ---------------------------------------------------------------------------
// Gradient verification registry
// ---------------------------------------------------------------------------

inline std::vector<std::string> registered_grad_ops() {
  return {"linear",       "conv1d",      "grouped_conv", "layer_norm", "group_norm",
          "gelu",         "relu",        "attention",    "transpose",  "mask_replace",
          "cosine_head",  "eq1_loss",    "adapter",      "context_window",
          "weighted_layer_sum", "probe_head", "e2e_tiny"};
}

// compares analytic gradients with central finite differences on a random
// small instance; returns the max relative error over every checked element
inline double grad_check(const std::string& op, long size = 0, double eps = 1e-5,
                         uint64_t seed = 1234) {
  using D = double;
  Rng rng(hash64(seed, io::fnv1a(op.data(), op.size())));
  ad::ParamStore<D> ps;
  auto rand_param = [&](const std::string& name, std::vector<long> shape, double scale = 1.0) {
    auto& p = ps.add(name, std::move(shape));
    ad::fill_normal(p.value, rng, scale);
    return &p;
  };

  const long s = size > 0 ? size : 6;

  if (op == "linear") {
    rand_param("x", {s, s + 1});
    rand_param("w", {s - 1, s + 1}, 0.5);
    rand_param("b", {s - 1}, 0.5);
    ad::Tensor<D> ref({s, s - 1});
    ad::fill_normal(ref, rng);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      return t.mse(t.linear(t.leaf(ps.at("x")), t.leaf(ps.at("w")), t.leaf(ps.at("b"))), ref);
    }, eps).max_rel_err;
  }
  if (op == "conv1d") {
    rand_param("x", {3, 4 * s});
    rand_param("w", {4, 3, 5}, 0.4);
    ad::Tensor<D> ref({4, (4 * s - 5) / 2 + 1});
    ad::fill_normal(ref, rng);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      return t.mse(t.conv1d(t.leaf(ps.at("x")), t.leaf(ps.at("w")), 2), ref);
    }, eps).max_rel_err;
  }
  if (op == "grouped_conv") {
    rand_param("x", {8, 2 * s});
    rand_param("w", {8, 2, 5}, 0.4);
    rand_param("b", {8}, 0.2);
    ad::Tensor<D> ref({8, 2 * s});
    ad::fill_normal(ref, rng);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      return t.mse(t.conv1d_grouped_same(t.leaf(ps.at("x")), t.leaf(ps.at("w")),
                                         t.leaf(ps.at("b")), 4), ref);
    }, eps).max_rel_err;
  }
  if (op == "layer_norm" || op == "group_norm") {
    rand_param("x", {4, s});
    rand_param("g", {op == "layer_norm" ? s : 4L}, 0.5);
    rand_param("b", {op == "layer_norm" ? s : 4L}, 0.5);
    ad::Tensor<D> ref({4, s});
    ad::fill_normal(ref, rng);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      auto* y = op == "layer_norm"
                    ? t.layer_norm(t.leaf(ps.at("x")), t.leaf(ps.at("g")), t.leaf(ps.at("b")))
                    : t.group_norm_channels(t.leaf(ps.at("x")), t.leaf(ps.at("g")),
                                            t.leaf(ps.at("b")));
      return t.mse(y, ref);
    }, eps).max_rel_err;
  }
  if (op == "gelu" || op == "relu") {
    rand_param("x", {s, s});
    ad::Tensor<D> ref({s, s});
    ad::fill_normal(ref, rng);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      auto* x = t.leaf(ps.at("x"));
      return t.mse(op == "gelu" ? t.gelu(x) : t.relu(x), ref);
    }, eps).max_rel_err;
  }
  if (op == "attention") {
    rand_param("q", {s, 8});
    rand_param("k", {s, 8});
    rand_param("v", {s, 8});
    ad::Tensor<D> ref({s, 8});
    ad::fill_normal(ref, rng);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      return t.mse(t.mhsa(t.leaf(ps.at("q")), t.leaf(ps.at("k")), t.leaf(ps.at("v")), 2), ref);
    }, eps).max_rel_err;
  }
  if (op == "transpose") {
    rand_param("x", {s, s + 2});
    ad::Tensor<D> ref({s + 2, s});
    ad::fill_normal(ref, rng);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      return t.mse(t.transpose(t.leaf(ps.at("x"))), ref);
    }, eps).max_rel_err;
  }
  if (op == "mask_replace") {
    rand_param("x", {s, 4});
    rand_param("emb", {4});
    ad::Tensor<D> ref({s, 4});
    ad::fill_normal(ref, rng);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      return t.mse(t.replace_rows(t.leaf(ps.at("x")), t.leaf(ps.at("emb")), {0, s - 1}), ref);
    }, eps).max_rel_err;
  }
  if (op == "cosine_head") {
    rand_param("u", {s, 7});
    rand_param("e", {5, 7});
    ad::Tensor<D> ref({s, 5});
    ad::fill_normal(ref, rng, 0.3);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      return t.mse(t.cosine_rows(t.leaf(ps.at("u")), t.leaf(ps.at("e"))), ref);
    }, eps).max_rel_err;
  }
  if (op == "eq1_loss") {
    // full Eq.-style path: o -> projection -> cosine -> tempered CE
    const long C = 5;
    rand_param("o", {s, 10});
    rand_param("a", {7, 10}, 0.5);
    rand_param("ab", {7}, 0.2);
    rand_param("e", {C, 7});
    std::vector<uint16_t> labels;
    for (long i = 0; i < s; ++i) labels.push_back(static_cast<uint16_t>(rng.below(C)));
    std::vector<long> rows;
    for (long i = 0; i < s; i += 2) rows.push_back(i);
    return ad::check_gradients(ps, [&, labels, rows](ad::Tape<D>& t) {
      auto* u = t.linear(t.leaf(ps.at("o")), t.leaf(ps.at("a")), t.leaf(ps.at("ab")));
      auto* sim = t.cosine_rows(u, t.leaf(ps.at("e")));
      return t.ce_rows(sim, labels, rows, 10.0);
    }, eps).max_rel_err;
  }
  if (op == "adapter") {
    const long d = 12, h = 4;
    rand_param("x", {s, d});
    rand_param("ln.g", {d}, 0.5);
    rand_param("ln.b", {d}, 0.5);
    rand_param("dw", {h, d}, 0.5);
    rand_param("db", {h}, 0.2);
    rand_param("uw", {d, h}, 0.5);
    rand_param("ub", {d}, 0.2);
    ad::Tensor<D> ref({s, d});
    ad::fill_normal(ref, rng);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      auto* x = t.leaf(ps.at("x"));
      auto* a = t.layer_norm(x, t.leaf(ps.at("ln.g")), t.leaf(ps.at("ln.b")));
      auto* dn = t.relu(t.linear(a, t.leaf(ps.at("dw")), t.leaf(ps.at("db"))));
      auto* up = t.linear(dn, t.leaf(ps.at("uw")), t.leaf(ps.at("ub")));
      return t.mse(t.add(x, up), ref);
    }, eps).max_rel_err;
  }
  if (op == "context_window") {
    rand_param("x", {s, 3});
    ad::Tensor<D> ref({s, 9});
    ad::fill_normal(ref, rng);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      return t.mse(t.context_window(t.leaf(ps.at("x")), 1), ref);
    }, eps).max_rel_err;
  }
  if (op == "weighted_layer_sum") {
    rand_param("logits", {4});
    auto layers = std::make_shared<std::vector<ad::Tensor<D>>>();
    for (int i = 0; i < 4; ++i) {
      ad::Tensor<D> l({s, 5});
      ad::fill_normal(l, rng);
      layers->push_back(std::move(l));
    }
    ad::Tensor<D> ref({s, 5});
    ad::fill_normal(ref, rng);
    return ad::check_gradients(ps, [&, layers](ad::Tape<D>& t) {
      std::vector<const ad::Tensor<D>*> lp;
      for (auto& l : *layers) lp.push_back(&l);
      return t.mse(t.lincomb(lp, t.softmax_vec(t.leaf(ps.at("logits")))), ref);
    }, eps).max_rel_err;
  }
  if (op == "probe_head") {
    const long d = 6, hid = 5, out = 4;
    rand_param("x", {s, d});
    rand_param("w1", {hid, 3 * d}, 0.5);
    rand_param("b1", {hid}, 0.2);
    rand_param("w2", {out, hid}, 0.5);
    rand_param("b2", {out}, 0.2);
    ad::Tensor<D> ref({s, out});
    ad::fill_normal(ref, rng, 0.3);
    return ad::check_gradients(ps, [&](ad::Tape<D>& t) {
      auto* c = t.context_window(t.leaf(ps.at("x")), 1);
      auto* h = t.relu(t.linear(c, t.leaf(ps.at("w1")), t.leaf(ps.at("b1"))));
      return t.mse(t.linear(h, t.leaf(ps.at("w2")), t.leaf(ps.at("b2"))), ref);
    }, eps).max_rel_err;
  }
  if (op == "e2e_tiny") {
    // whole backbone with adapters on route II, loss on masked frames
    model::ModelConfig cfg;
    cfg.conv_channels = 6;
    cfg.n_layers = 2;
    cfg.d_model = 16;
    cfg.d_ffn = 24;
    cfg.n_heads = 2;
    cfg.proj_dim = 8;
    cfg.n_classes = 5;
    cfg.pos_conv_kernel = 5;
    cfg.pos_conv_groups = 4;
    auto m = std::make_shared<model::SslModel<D>>(model::SslModel<D>::init(cfg, seed));
    adapter::insert_adapters(*m, model::AdapterConfig{4}, seed + 1);
    // randomize the zero-initialized adapter up-projections so their
    // gradients are generic
    for (auto& [name, p] : m->params)
      if (model::is_adapter_tensor(name)) ad::fill_normal(p.value, rng, 0.3);

    auto wave = std::make_shared<std::vector<D>>(1600);
    for (auto& x : *wave) x = rng.uniform(-0.5, 0.5);
    const long Tn = model::conv_output_length(cfg, 1600);
    std::vector<uint16_t> z1, z2;
    for (long i = 0; i < Tn; ++i) {
      z1.push_back(static_cast<uint16_t>(rng.below(cfg.n_classes)));
      z2.push_back(static_cast<uint16_t>(rng.below(cfg.n_classes + 1)));
    }
    std::vector<long> rows = {0, 2, 3};
    double worst = 0;
    auto build = [&, z1, z2, rows](ad::Tape<D>& t) {
      auto* x = m->conv_encode(t, *wave);
      auto* xm = m->apply_mask(t, x, rows);
      auto enc = m->encoder_forward(t, xm, model::Route::II);
      auto lp = m->msp_loss(t, enc.final, rows, z1, z2);
      return t.scale(lp.sum, 1.0 / rows.size());
    };
    worst = ad::check_gradients(m->params, build, eps, 20, seed).max_rel_err;
    return worst;
  }
  throw InvalidInputError("grad_check: unknown op " + op);
}

}  // namespace mpl::train
