// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpl/autodiff.hpp"
#include "mpl/core.hpp"
#include "mpl/rng.hpp"

namespace mpl::model {

struct ModelConfig {
  int conv_channels = 512;
  std::vector<int> conv_strides = {5, 2, 2, 2, 2, 2, 2};
  std::vector<int> conv_kernels = {10, 3, 3, 3, 3, 2, 2};
  int n_layers = 3;
  int d_model = 64;
  int d_ffn = 256;
  int n_heads = 4;
  int proj_dim = 32;
  int n_classes = 100;
  double mask_prob = 0.08;  // per-frame span-start probability
  int mask_span = 10;
  double tau = 0.1;
  int pos_conv_kernel = 15;
  int pos_conv_groups = 16;
  int sample_rate = 16000;

  static ModelConfig desk_scale() {
    ModelConfig c;
    c.conv_channels = 32;
    c.n_layers = 3;
    c.d_model = 64;
    c.d_ffn = 256;
    c.n_heads = 4;
    c.proj_dim = 32;
    c.n_classes = 100;
    c.pos_conv_kernel = 15;
    c.pos_conv_groups = 16;
    return c;
  }

  static ModelConfig full_size() {
    ModelConfig c;
    c.conv_channels = 512;
    c.n_layers = 12;
    c.d_model = 768;
    c.d_ffn = 3072;
    c.n_heads = 12;
    c.proj_dim = 256;
    c.n_classes = 500;
    c.pos_conv_kernel = 128;
    c.pos_conv_groups = 16;
    return c;
  }
};

inline void validate(const ModelConfig& c) {
  require_config(c.conv_strides.size() == c.conv_kernels.size(),
                 "model: stride/kernel lists must have equal length");
  require_config(!c.conv_strides.empty(), "model: empty conv stack");
  require_config(c.d_model % c.n_heads == 0, "model: d_model must be divisible by n_heads");
  require_config(c.d_model % c.pos_conv_groups == 0,
                 "model: d_model must be divisible by pos_conv_groups");
  require_config(c.tau > 0, "model: tau must be positive");
  require_config(c.n_classes >= 2 && c.proj_dim >= 1 && c.conv_channels >= 1, "model: bad dims");
  require_config(c.mask_prob >= 0 && c.mask_prob <= 1 && c.mask_span >= 1, "model: bad mask spec");
}

struct AdapterConfig {
  int hidden = 16;  // bottleneck width; 64/128/256/512 at full size
};

inline void validate(const AdapterConfig& a, const ModelConfig& m) {
  require_config(a.hidden >= 1, "adapter: hidden must be >= 1");
  require_config(a.hidden < m.d_model || m.d_model <= 64,
                 "adapter: hidden must be a bottleneck at full size");
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"conv_channels", c.conv_channels},
                     {"conv_strides", c.conv_strides},
                     {"conv_kernels", c.conv_kernels},
                     {"n_layers", c.n_layers},
                     {"d_model", c.d_model},
                     {"d_ffn", c.d_ffn},
                     {"n_heads", c.n_heads},
                     {"proj_dim", c.proj_dim},
                     {"n_classes", c.n_classes},
                     {"mask_prob", c.mask_prob},
                     {"mask_span", c.mask_span},
                     {"tau", c.tau},
                     {"pos_conv_kernel", c.pos_conv_kernel},
                     {"pos_conv_groups", c.pos_conv_groups},
                     {"sample_rate", c.sample_rate}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.conv_channels = j.value("conv_channels", d.conv_channels);
  c.conv_strides = j.value("conv_strides", d.conv_strides);
  c.conv_kernels = j.value("conv_kernels", d.conv_kernels);
  c.n_layers = j.value("n_layers", d.n_layers);
  c.d_model = j.value("d_model", d.d_model);
  c.d_ffn = j.value("d_ffn", d.d_ffn);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.proj_dim = j.value("proj_dim", d.proj_dim);
  c.n_classes = j.value("n_classes", d.n_classes);
  c.mask_prob = j.value("mask_prob", d.mask_prob);
  c.mask_span = j.value("mask_span", d.mask_span);
  c.tau = j.value("tau", d.tau);
  c.pos_conv_kernel = j.value("pos_conv_kernel", d.pos_conv_kernel);
  c.pos_conv_groups = j.value("pos_conv_groups", d.pos_conv_groups);
  c.sample_rate = j.value("sample_rate", d.sample_rate);
}

inline void to_json(nlohmann::json& j, const AdapterConfig& a) {
  j = nlohmann::json{{"hidden", a.hidden}};
}
inline void from_json(const nlohmann::json& j, AdapterConfig& a) {
  a.hidden = j.value("hidden", 16);
}

// frame count produced by the conv stack for a waveform of length n
inline long conv_output_length(const ModelConfig& cfg, long n) {
  for (size_t i = 0; i < cfg.conv_strides.size(); ++i) {
    if (n < cfg.conv_kernels[i]) return 0;
    n = (n - cfg.conv_kernels[i]) / cfg.conv_strides[i] + 1;
  }
  return n;
}

inline long conv_downsample_factor(const ModelConfig& cfg) {
  long f = 1;
  for (int s : cfg.conv_strides) f *= s;
  return f;
}

// ---------------------------------------------------------------------------
// Tensor inventory: one source of truth for allocation, initialization,
// counting and the freeze ledger.
// ---------------------------------------------------------------------------

enum class Init { Zeros, Ones, NormalFanIn, NormalScale };

struct TensorSpec {
  std::string name;
  std::vector<long> shape;
  std::string component;  // conv_stack | frontend | positional | transformer | heads | adapters
  Init init = Init::NormalFanIn;
  double scale = 1.0;  // for NormalScale
  long numel() const {
    long n = 1;
    for (long d : shape) n *= d;
    return n;
  }
};

inline std::vector<TensorSpec> adapter_specs(const ModelConfig& cfg, const AdapterConfig& a) {
  std::vector<TensorSpec> s;
  const long d = cfg.d_model, h = a.hidden;
  for (int l = 0; l < cfg.n_layers; ++l)
    for (int k = 1; k <= 2; ++k) {
      const std::string p = "enc." + std::to_string(l) + ".ad" + std::to_string(k) + ".";
      s.push_back({p + "ln.g", {d}, "adapters", Init::Ones});
      s.push_back({p + "ln.b", {d}, "adapters", Init::Zeros});
      s.push_back({p + "down.w", {h, d}, "adapters", Init::NormalScale, 0.02});
      s.push_back({p + "down.b", {h}, "adapters", Init::Zeros});
      // exact-zero up projection: route II == route I at initialization
      s.push_back({p + "up.w", {d, h}, "adapters", Init::Zeros});
      s.push_back({p + "up.b", {d}, "adapters", Init::Zeros});
    }
  return s;
}

inline std::vector<TensorSpec> tensor_specs(const ModelConfig& cfg,
                                            const std::optional<AdapterConfig>& adapters,
                                            int heads = 2) {
  validate(cfg);
  require_config(heads == 1 || heads == 2, "tensor_specs: heads must be 1 or 2");
  std::vector<TensorSpec> s;
  const long C = cfg.conv_channels, d = cfg.d_model;

  long in_ch = 1;
  for (size_t i = 0; i < cfg.conv_kernels.size(); ++i) {
    s.push_back({"conv." + std::to_string(i) + ".w", {C, in_ch, cfg.conv_kernels[i]},
                 "conv_stack", Init::NormalFanIn});
    if (i == 0) {  // per-channel group norm on the first layer only
      s.push_back({"conv.0.gn.g", {C}, "conv_stack", Init::Ones});
      s.push_back({"conv.0.gn.b", {C}, "conv_stack", Init::Zeros});
    }
    in_ch = C;
  }
  s.push_back({"feat_ln.g", {C}, "frontend", Init::Ones});
  s.push_back({"feat_ln.b", {C}, "frontend", Init::Zeros});
  s.push_back({"post_proj.w", {d, C}, "frontend", Init::NormalFanIn});
  s.push_back({"post_proj.b", {d}, "frontend", Init::Zeros});
  s.push_back({"mask_emb", {d}, "frontend", Init::NormalScale, 0.1});
  s.push_back({"pos_conv.w", {d, d / cfg.pos_conv_groups, cfg.pos_conv_kernel}, "positional",
               Init::NormalFanIn});
  s.push_back({"pos_conv.b", {d}, "positional", Init::Zeros});

  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    s.push_back({p + "ln1.g", {d}, "transformer", Init::Ones});
    s.push_back({p + "ln1.b", {d}, "transformer", Init::Zeros});
    for (const char* w : {"wq", "wk", "wv", "wo"})
      s.push_back({p + "attn." + w, {d, d}, "transformer", Init::NormalFanIn});
    for (const char* b : {"bq", "bk", "bv", "bo"})
      s.push_back({p + "attn." + b, {d}, "transformer", Init::Zeros});
    s.push_back({p + "ln2.g", {d}, "transformer", Init::Ones});
    s.push_back({p + "ln2.b", {d}, "transformer", Init::Zeros});
    s.push_back({p + "ffn.w1", {cfg.d_ffn, d}, "transformer", Init::NormalFanIn});
    s.push_back({p + "ffn.b1", {cfg.d_ffn}, "transformer", Init::Zeros});
    s.push_back({p + "ffn.w2", {d, cfg.d_ffn}, "transformer", Init::NormalFanIn});
    s.push_back({p + "ffn.b2", {d}, "transformer", Init::Zeros});
  }
  s.push_back({"enc.final_ln.g", {d}, "transformer", Init::Ones});
  s.push_back({"enc.final_ln.b", {d}, "transformer", Init::Zeros});

  for (int hix = 1; hix <= heads; ++hix) {
    const std::string p = "head" + std::to_string(hix) + ".";
    const long classes = hix == 1 ? cfg.n_classes : cfg.n_classes + 1;  // +1: ABSENT
    s.push_back({p + "proj.w", {cfg.proj_dim, d}, "heads", Init::NormalFanIn});
    s.push_back({p + "proj.b", {cfg.proj_dim}, "heads", Init::Zeros});
    s.push_back({p + "emb", {classes, cfg.proj_dim}, "heads", Init::NormalScale, 0.2});
  }

  if (adapters) {
    validate(*adapters, cfg);
    auto as = adapter_specs(cfg, *adapters);
    s.insert(s.end(), as.begin(), as.end());
  }
  return s;
}

inline bool is_adapter_tensor(const std::string& name) {
  return name.find(".ad1.") != std::string::npos || name.find(".ad2.") != std::string::npos;
}
inline bool is_head_tensor(const std::string& name) { return name.rfind("head", 0) == 0; }

// trainable set in adapter mode: adapters, their private LNs, both heads
inline bool adapter_mode_trainable(const std::string& name) {
  return is_adapter_tensor(name) || is_head_tensor(name);
}

struct ParamCount {
  long long total = 0;
  std::map<std::string, long long> by_component;
  long long trainable_full = 0;
  long long trainable_adapter = 0;
};

inline ParamCount count_params(const ModelConfig& cfg,
                               const std::optional<AdapterConfig>& adapters, int heads = 2) {
  ParamCount pc;
  for (const auto& t : tensor_specs(cfg, adapters, heads)) {
    const long long n = t.numel();
    pc.total += n;
    pc.by_component[t.component] += n;
    pc.trainable_full += n;
    if (adapter_mode_trainable(t.name)) pc.trainable_adapter += n;
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

struct MaskSpec {
  double mask_prob = 0.08;
  int mask_span = 10;
};

// each frame is independently a span start with mask_prob; spans are unioned
inline std::vector<long> draw_mask_rows(long frames, const MaskSpec& spec, Rng& rng) {
  std::vector<bool> m(static_cast<size_t>(frames), false);
  for (long t = 0; t < frames; ++t)
    if (rng.uniform() < spec.mask_prob)
      for (long j = t; j < std::min(frames, t + spec.mask_span); ++j) m[j] = true;
  std::vector<long> rows;
  for (long t = 0; t < frames; ++t)
    if (m[t]) rows.push_back(t);
  return rows;
}

// ---------------------------------------------------------------------------
// The backbone
// ---------------------------------------------------------------------------

enum class Route { I, II };

inline const char* route_name(Route r) { return r == Route::I ? "I" : "II"; }
inline Route route_from_name(const std::string& s) {
  if (s == "I" || s == "i") return Route::I;
  if (s == "II" || s == "ii") return Route::II;
  throw InvalidInputError("unknown route: " + s);
}

template <typename T>
class SslModel {
 public:
  ModelConfig cfg;
  std::optional<AdapterConfig> adapters;
  ad::ParamStore<T> params;

  static SslModel init(const ModelConfig& cfg, uint64_t seed) {
    validate(cfg);
    SslModel m;
    m.cfg = cfg;
    Rng rng(hash64(seed, 0x1417));
    for (const auto& ts : tensor_specs(cfg, std::nullopt, 2)) m.alloc(ts, rng);
    return m;
  }

  // adapter insertion; near-identity by construction (zero up projection)
  void add_adapters(const AdapterConfig& acfg, uint64_t seed) {
    require_config(!adapters.has_value(), "adapters already inserted");
    validate(acfg, cfg);
    Rng rng(hash64(seed, 0xada));
    for (const auto& ts : adapter_specs(cfg, acfg)) alloc(ts, rng);
    adapters = acfg;
  }

  long absent_id() const { return cfg.n_classes; }

  // ---- graph builders ------------------------------------------------------

  // waveform -> frame features [T, d_model] (conv stack + LN + affine)
  ad::Node<T>* conv_encode(ad::Tape<T>& tape, const std::vector<T>& wave) {
    const long L = static_cast<long>(wave.size());
    require_input(conv_output_length(cfg, L) >= 1, "conv_encode: waveform too short");
    ad::Tensor<T> in({1, L});
    in.v.assign(wave.begin(), wave.end());
    ad::Node<T>* x = tape.constant(std::move(in));
    for (size_t i = 0; i < cfg.conv_kernels.size(); ++i) {
      x = tape.conv1d(x, lf(tape, "conv." + std::to_string(i) + ".w"), cfg.conv_strides[i]);
      if (i == 0)
        x = tape.group_norm_channels(x, lf(tape, "conv.0.gn.g"), lf(tape, "conv.0.gn.b"));
      x = tape.gelu(x);
    }
    x = tape.transpose(x);  // [T, conv_channels]
    x = tape.layer_norm(x, lf(tape, "feat_ln.g"), lf(tape, "feat_ln.b"));
    return tape.linear(x, lf(tape, "post_proj.w"), lf(tape, "post_proj.b"));
  }

  // replaces the given rows with the learned mask embedding
  ad::Node<T>* apply_mask(ad::Tape<T>& tape, ad::Node<T>* x, const std::vector<long>& rows) {
    if (rows.empty()) return x;
    return tape.replace_rows(x, lf(tape, "mask_emb"), rows);
  }

  struct Encoded {
    ad::Node<T>* final = nullptr;               // after the closing layer norm
    std::vector<ad::Node<T>*> per_layer;        // embedding output + every block
  };

  Encoded encoder_forward(ad::Tape<T>& tape, ad::Node<T>* x, Route route) {
    require_config(route == Route::I || adapters.has_value(),
                   "route II requires inserted adapters");
    Encoded out;
    // convolutional relative positions, then pre-LN blocks
    {
      auto* xt = tape.transpose(x);
      auto* pc = tape.conv1d_grouped_same(xt, lf(tape, "pos_conv.w"), lf(tape, "pos_conv.b"),
                                          cfg.pos_conv_groups);
      x = tape.add(x, tape.gelu(tape.transpose(pc)));
    }
    out.per_layer.push_back(x);
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "enc." + std::to_string(l) + ".";
      {
        auto* h = tape.layer_norm(x, lf(tape, p + "ln1.g"), lf(tape, p + "ln1.b"));
        auto* q = tape.linear(h, lf(tape, p + "attn.wq"), lf(tape, p + "attn.bq"));
        auto* k = tape.linear(h, lf(tape, p + "attn.wk"), lf(tape, p + "attn.bk"));
        auto* v = tape.linear(h, lf(tape, p + "attn.wv"), lf(tape, p + "attn.bv"));
        auto* att = tape.mhsa(q, k, v, cfg.n_heads);
        x = tape.add(x, tape.linear(att, lf(tape, p + "attn.wo"), lf(tape, p + "attn.bo")));
      }
      if (route == Route::II) x = adapter_apply(tape, x, p + "ad1.");
      {
        auto* h = tape.layer_norm(x, lf(tape, p + "ln2.g"), lf(tape, p + "ln2.b"));
        auto* f = tape.gelu(tape.linear(h, lf(tape, p + "ffn.w1"), lf(tape, p + "ffn.b1")));
        x = tape.add(x, tape.linear(f, lf(tape, p + "ffn.w2"), lf(tape, p + "ffn.b2")));
      }
      if (route == Route::II) x = adapter_apply(tape, x, p + "ad2.");
      out.per_layer.push_back(x);
    }
    out.final = tape.layer_norm(x, lf(tape, "enc.final_ln.g"), lf(tape, "enc.final_ln.b"));
    return out;
  }

  // cosine similarities of projected outputs against the head's codewords
  ad::Node<T>* head_logits(ad::Tape<T>& tape, ad::Node<T>* o, int head) {
    const std::string p = "head" + std::to_string(head) + ".";
    auto* u = tape.linear(o, lf(tape, p + "proj.w"), lf(tape, p + "proj.b"));
    return tape.cosine_rows(u, lf(tape, p + "emb"));
  }

  struct LossParts {
    ad::Node<T>* sum = nullptr;    // summed over masked frames, both heads
    ad::Node<T>* head1 = nullptr;  // per-head sums
    ad::Node<T>* head2 = nullptr;
    long masked = 0;
    bool empty_mask_warning = false;
  };

  // prediction loss over masked frames only
  LossParts msp_loss(ad::Tape<T>& tape, ad::Node<T>* final_out, const std::vector<long>& rows,
                     const std::vector<uint16_t>& z1, const std::vector<uint16_t>& z2) {
    const long Tn = final_out->value().dim(0);
    const long Tt = std::min({Tn, static_cast<long>(z1.size()), static_cast<long>(z2.size())});
    std::vector<long> use;
    for (long r : rows)
      if (r < Tt) use.push_back(r);
    LossParts lp;
    lp.masked = static_cast<long>(use.size());
    lp.empty_mask_warning = use.empty();
    const T inv_tau = T(1) / static_cast<T>(cfg.tau);
    lp.head1 = tape.ce_rows(head_logits(tape, final_out, 1), z1, use, inv_tau);
    lp.head2 = tape.ce_rows(head_logits(tape, final_out, 2), z2, use, inv_tau);
    lp.sum = tape.add(lp.head1, lp.head2);
    return lp;
  }

  // ---- tape-free inference helpers ----------------------------------------

  struct Features {
    std::vector<ad::Tensor<T>> per_layer;  // n_layers + 1 matrices [T, d]
    ad::Tensor<T> final;
  };

  Features forward_features(const std::vector<T>& wave, Route route,
                            const std::vector<long>& mask_rows = {}) {
    ad::Tape<T> tape;
    auto* x = conv_encode(tape, wave);
    x = apply_mask(tape, x, mask_rows);
    auto enc = encoder_forward(tape, x, route);
    Features f;
    for (auto* n : enc.per_layer) f.per_layer.push_back(n->value());
    f.final = enc.final->value();
    return f;
  }

  struct HeadScores {
    ad::Tensor<T> s1;  // [T, C]
    ad::Tensor<T> s2;  // [T, C+1]
  };

  HeadScores head_scores(const std::vector<T>& wave, Route route,
                         const std::vector<long>& mask_rows = {}) {
    ad::Tape<T> tape;
    auto* x = conv_encode(tape, wave);
    x = apply_mask(tape, x, mask_rows);
    auto enc = encoder_forward(tape, x, route);
    HeadScores hs;
    hs.s1 = head_logits(tape, enc.final, 1)->value();
    hs.s2 = head_logits(tape, enc.final, 2)->value();
    return hs;
  }

  // Eq.-style distribution over codewords for one output frame
  std::vector<T> head_distribution(int head, const T* o_t) const {
    const std::string p = "head" + std::to_string(head) + ".";
    const auto& W = params.at(p + "proj.w").value;
    const auto& b = params.at(p + "proj.b").value;
    const auto& E = params.at(p + "emb").value;
    const long P = W.dim(0), d = W.dim(1), C = E.dim(0);
    std::vector<T> u(static_cast<size_t>(P));
    for (long i = 0; i < P; ++i) {
      T acc = b.v[i];
      for (long j = 0; j < d; ++j) acc += W.v[i * d + j] * o_t[j];
      u[i] = acc;
    }
    return codeword_distribution(u.data(), E, static_cast<T>(cfg.tau));
  }

  // softmax over cosine similarities of u against the embedding rows
  static std::vector<T> codeword_distribution(const T* u, const ad::Tensor<T>& emb, T tau) {
    const long C = emb.dim(0), P = emb.dim(1);
    T un = 0;
    for (long j = 0; j < P; ++j) un += u[j] * u[j];
    un = std::sqrt(un);
    std::vector<T> logits(static_cast<size_t>(C));
    for (long c = 0; c < C; ++c) {
      T dot = 0, en = 0;
      for (long j = 0; j < P; ++j) {
        dot += u[j] * emb.v[c * P + j];
        en += emb.v[c * P + j] * emb.v[c * P + j];
      }
      en = std::sqrt(en);
      const T sim = (un > T(0) && en > T(0)) ? dot / (un * en) : T(0);
      logits[c] = sim / tau;
    }
    T mx = logits[0];
    for (T l : logits) mx = std::max(mx, l);
    T z = 0;
    for (auto& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (auto& l : logits) l /= z;
    return logits;
  }

 private:
  void alloc(const TensorSpec& ts, Rng& rng) {
    auto& p = params.add(ts.name, ts.shape);
    switch (ts.init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        std::fill(p.value.v.begin(), p.value.v.end(), T(1));
        break;
      case Init::NormalFanIn: {
        long fan_in = 1;
        for (size_t i = 1; i < ts.shape.size(); ++i) fan_in *= ts.shape[i];
        const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
        for (auto& x : p.value.v) x = static_cast<T>(s * rng.normal());
        break;
      }
      case Init::NormalScale:
        for (auto& x : p.value.v) x = static_cast<T>(ts.scale * rng.normal());
        break;
    }
  }

  ad::Node<T>* lf(ad::Tape<T>& tape, const std::string& name) {
    return tape.leaf(params.at(name));
  }

  ad::Node<T>* adapter_apply(ad::Tape<T>& tape, ad::Node<T>* x, const std::string& p) {
    auto* a = tape.layer_norm(x, lf(tape, p + "ln.g"), lf(tape, p + "ln.b"));
    auto* dn = tape.relu(tape.linear(a, lf(tape, p + "down.w"), lf(tape, p + "down.b")));
    auto* up = tape.linear(dn, lf(tape, p + "up.w"), lf(tape, p + "up.b"));
    return tape.add(x, up);
  }
};

}  // namespace mpl::model
