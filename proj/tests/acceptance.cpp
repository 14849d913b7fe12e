// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Acceptance suite: one pass/fail line per criterion, every tolerance pinned
// in code. Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mpl/adapter.hpp"
#include "mpl/cli.hpp"
#include "mpl/corpus.hpp"
#include "mpl/gradcheck.hpp"
#include "mpl/labeler.hpp"
#include "mpl/model.hpp"
#include "mpl/probe.hpp"
#include "mpl/signal.hpp"
#include "mpl/train.hpp"

using namespace mpl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  int id;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

std::vector<Outcome> g_results;

template <typename Fn>
void criterion(int id, const std::string& name, Fn&& fn) {
  Outcome o;
  o.id = id;
  o.name = name;
  const auto t0 = Clock::now();
  try {
    o.pass = fn(o.detail);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  o.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  std::printf("[%s] criterion %d: %s — %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id,
              name.c_str(), o.detail.c_str(), o.seconds);
  std::fflush(stdout);
  g_results.push_back(std::move(o));
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared desk-scale artifacts
// ---------------------------------------------------------------------------

constexpr long kRecords = 320;
constexpr double kDuration = 2.0;
constexpr uint64_t kSeed = 20260811;
constexpr long kClasses = 100;
constexpr long kFullSteps = 3000;
constexpr long kBaselineSteps = 1500;
constexpr long kAdapterSteps = 2500;
constexpr int kBatch = 2;
constexpr int kAdapterHidden = 16;

struct Workspace {
  fs::path dir;
  corpus::CorpusManifest manifest;
  train::Dataset<float> all, train_split, heldout;
  model::SslModel<float> full_ml;       // multi-label pre-trained from scratch
  model::SslModel<float> baseline_raw;  // raw-speech-only pre-trained backbone
  model::SslModel<float> adapter_ml;    // adapters trained on the frozen baseline
  bool full_ready = false, baseline_ready = false, adapter_ready = false;
  double full_minutes = 0;
};

Workspace g_ws;

void build_corpus_and_labels() {
  auto& ws = g_ws;
  ws.dir = fs::current_path() / "acceptance_ws";
  fs::remove_all(ws.dir);
  fs::create_directories(ws.dir / "labels");

  ws.manifest = corpus::build_corpus(kRecords, kSeed, kDuration);
  corpus::save_manifest(ws.manifest, ws.dir / "manifest.jsonl");

  std::vector<labeler::FeatureSequence> all_feats;
  std::vector<std::vector<labeler::FeatureSequence>> per_record(ws.manifest.records.size());
  for (size_t i = 0; i < ws.manifest.records.size(); ++i) {
    auto rz = corpus::realize(ws.manifest.records[i], ws.manifest.sample_rate);
    for (const auto& c : rz.components)
      per_record[i].push_back(labeler::extract_features(c));
    for (const auto& f : per_record[i]) all_feats.push_back(f);
  }
  auto cb = labeler::kmeans_fit(all_feats, kClasses, 40, hash64(kSeed, 0x6b6d));
  labeler::save_codebook(cb, ws.dir / "codebook.bin");
  for (size_t i = 0; i < ws.manifest.records.size(); ++i) {
    std::vector<labeler::LabelSequence> seqs;
    for (const auto& f : per_record[i]) seqs.push_back(labeler::assign_labels(f, cb));
    labeler::save_labels(seqs,
                         labeler::label_path(ws.dir / "labels", ws.manifest.records[i].id));
  }
  ws.all = train::build_dataset<float>(ws.manifest, ws.dir / "labels", kClasses);
  std::tie(ws.train_split, ws.heldout) = train::split_dataset(ws.all, 0.2);
}

model::SslModel<float> run_full_ml() {
  auto m = model::SslModel<float>::init(model::ModelConfig::desk_scale(), hash64(kSeed, 1));
  train::TrainConfig tc;
  tc.total_steps = kFullSteps;
  tc.batch_size = kBatch;
  tc.seed = hash64(kSeed, 2);
  auto st = train::TrainState<float>::fresh(m, tc.seed);
  train::pretrain(m, adapter::full_ledger(m), g_ws.train_split, tc, st,
                  std::optional<fs::path>(g_ws.dir / "full_ml"));
  return m;
}

model::SslModel<float> run_baseline_raw() {
  auto m = model::SslModel<float>::init(model::ModelConfig::desk_scale(), hash64(kSeed, 3));
  train::TrainConfig tc;
  tc.total_steps = kBaselineSteps;
  tc.batch_size = kBatch;
  tc.seed = hash64(kSeed, 4);
  tc.kinds = {corpus::MixtureKind::Raw};
  auto st = train::TrainState<float>::fresh(m, tc.seed);
  train::pretrain(m, adapter::full_ledger(m), g_ws.train_split, tc, st,
                  std::optional<fs::path>(g_ws.dir / "baseline_raw"));
  return m;
}

model::SslModel<float> run_adapter_ml(long steps) {
  auto m = g_ws.baseline_raw;  // copy of the frozen-backbone starting point
  adapter::insert_adapters(m, model::AdapterConfig{kAdapterHidden}, hash64(kSeed, 5));
  auto ledger = adapter::freeze_backbone(m);
  train::TrainConfig tc;
  tc.total_steps = steps;
  tc.batch_size = kBatch;
  tc.seed = hash64(kSeed, 6);
  tc.mode = train::Mode::Adapter;
  auto st = train::TrainState<float>::fresh(m, tc.seed);
  train::pretrain(m, ledger, g_ws.train_split, tc, st,
                  steps == kAdapterSteps
                      ? std::optional<fs::path>(g_ws.dir / "adapter_ml")
                      : std::nullopt);
  return m;
}

probe::ProbeConfig probe_config() {
  probe::ProbeConfig pc;
  pc.hidden = 96;
  pc.steps = 400;
  pc.batch_size = 8;
  pc.seed = hash64(kSeed, 7);
  return pc;
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

bool c1_param_counts(std::string& detail) {
  const auto t0 = Clock::now();
  const auto full = model::ModelConfig::full_size();
  const auto one = model::count_params(full, std::nullopt, 1);
  const auto two = model::count_params(full, std::nullopt, 2);
  bool ok = std::abs(one.total / 94.70e6 - 1.0) < 0.02;
  ok = ok && std::abs(two.total / 95.02e6 - 1.0) < 0.02;
  const double want_delta[4] = {2.46e6, 4.82e6, 9.54e6, 18.99e6};
  const int hiddens[4] = {64, 128, 256, 512};
  std::vector<long long> deltas;
  for (int i = 0; i < 4; ++i) {
    const auto with = model::count_params(full, model::AdapterConfig{hiddens[i]}, 2);
    deltas.push_back(with.total - two.total);
    ok = ok && std::abs(deltas.back() / want_delta[i] - 1.0) < 0.02;
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  ok = ok && secs < 1.0;
  detail = fmt("1 head %.2fM, 2 heads %.2fM, deltas %.2f/%.2f/%.2f/%.2fM, %.3f s",
               one.total / 1e6, two.total / 1e6, deltas[0] / 1e6, deltas[1] / 1e6,
               deltas[2] / 1e6, deltas[3] / 1e6, secs);
  return ok;
}

bool c2_eq1_distribution(std::string& detail) {
  Rng rng(hash64(kSeed, 0xe91));
  double max_err = 0;
  for (int it = 0; it < 1000; ++it) {
    const long C = 2 + static_cast<long>(rng.below(40));
    const long P = 2 + static_cast<long>(rng.below(24));
    ad::Tensor<double> emb({C, P});
    ad::fill_normal(emb, rng);
    std::vector<double> u(static_cast<size_t>(P));
    for (auto& x : u) x = rng.normal();
    const double tau = 0.1;
    auto p = model::SslModel<double>::codeword_distribution(u.data(), emb, tau);

    // extended-precision oracle
    long double un = 0;
    for (long j = 0; j < P; ++j) un += static_cast<long double>(u[j]) * u[j];
    un = sqrtl(un);
    std::vector<long double> logits(static_cast<size_t>(C));
    long double mx = -1e30L;
    for (long c = 0; c < C; ++c) {
      long double dot = 0, en = 0;
      for (long j = 0; j < P; ++j) {
        dot += static_cast<long double>(emb.v[c * P + j]) * u[j];
        en += static_cast<long double>(emb.v[c * P + j]) * emb.v[c * P + j];
      }
      en = sqrtl(en);
      const long double sim = (un > 0 && en > 0) ? dot / (un * en) : 0.0L;
      logits[c] = sim / static_cast<long double>(tau);
      mx = std::max(mx, logits[c]);
    }
    long double z = 0;
    for (auto& l : logits) {
      l = expl(l - mx);
      z += l;
    }
    double row_sum = 0;
    for (long c = 0; c < C; ++c) {
      max_err = std::max(max_err, std::abs(p[c] - static_cast<double>(logits[c] / z)));
      row_sum += p[c];
    }
    max_err = std::max(max_err, std::abs(row_sum - 1.0));
  }

  // exact cosine-scale invariance for power-of-two rescalings of A*o
  bool scale_ok = true;
  for (int it = 0; it < 100; ++it) {
    ad::Tensor<double> emb({6, 9});
    ad::fill_normal(emb, rng);
    std::vector<double> u(9), u2(9), u3(9);
    for (int j = 0; j < 9; ++j) {
      u[j] = rng.normal();
      u2[j] = 0.125 * u[j];
      u3[j] = 1024.0 * u[j];
    }
    auto pa = model::SslModel<double>::codeword_distribution(u.data(), emb, 0.1);
    auto pb = model::SslModel<double>::codeword_distribution(u2.data(), emb, 0.1);
    auto pc = model::SslModel<double>::codeword_distribution(u3.data(), emb, 0.1);
    for (int c = 0; c < 6; ++c) scale_ok = scale_ok && pa[c] == pb[c] && pa[c] == pc[c];
  }

  // the model-facing wrapper (projection + bias) agrees with the oracle too
  auto cfg = model::ModelConfig::desk_scale();
  cfg.n_classes = 7;
  auto m = model::SslModel<double>::init(cfg, hash64(kSeed, 0xe92));
  std::vector<double> o(static_cast<size_t>(cfg.d_model));
  for (auto& x : o) x = rng.normal();
  auto pw = m.head_distribution(1, o.data());
  double wrap_sum = 0;
  for (double q : pw) wrap_sum += q;
  const bool wrap_ok = std::abs(wrap_sum - 1.0) < 1e-12 && pw.size() == 7;

  detail = fmt("max |p - oracle| = %.2e over 1000 instances; scale invariance %s",
               max_err, scale_ok ? "bit-exact" : "BROKEN");
  return max_err < 1e-12 && scale_ok && wrap_ok;
}

bool c3_gradient_suite(std::string& detail) {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_op;
  for (const auto& op : train::registered_grad_ops()) {
    const double e = train::grad_check(op, 0, 1e-5, hash64(kSeed, 0x93ad));
    if (e > worst) {
      worst = e;
      worst_op = op;
    }
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  detail = fmt("%zu ops, max rel err %.2e (%s), %.1f s", train::registered_grad_ops().size(),
               worst, worst_op.c_str(), secs);
  return worst < 1e-5 && secs < 120.0;
}

bool c4_route_freeze(std::string& detail) {
  auto& base = g_ws.baseline_raw;
  const auto& probe_wave = g_ws.heldout.examples[0].wave;
  auto plain = base.forward_features(probe_wave, model::Route::I);

  // (a) route II equals route I exactly at adapter init
  auto adapted = base;
  adapter::insert_adapters(adapted, model::AdapterConfig{kAdapterHidden}, hash64(kSeed, 5));
  auto r1 = adapted.forward_features(probe_wave, model::Route::I);
  auto r2 = adapted.forward_features(probe_wave, model::Route::II);
  bool init_ok = r1.final.v == plain.final.v && r2.final.v == r1.final.v;
  for (size_t l = 0; l < plain.per_layer.size(); ++l)
    init_ok = init_ok && r2.per_layer[l].v == plain.per_layer[l].v;

  // retention probe before the adapter run
  probe::ProbeConfig rc = probe_config();
  rc.steps = 200;
  const auto before = probe::run_retention_probe(base, model::Route::I, g_ws.all, rc);

  // (b) 500 adapter-mode steps: frozen tensors and route-I outputs bit-identical
  auto trained = run_adapter_ml(500);
  bool frozen_ok = true;
  for (const auto& [name, p] : base.params) {
    if (model::adapter_mode_trainable(name)) continue;  // heads train in adapter mode
    frozen_ok = frozen_ok && trained.params.at(name).value.v == p.value.v;
  }
  auto after_ft = trained.forward_features(probe_wave, model::Route::I);
  bool route_ok = after_ft.final.v == plain.final.v;
  for (size_t l = 0; l < plain.per_layer.size(); ++l)
    route_ok = route_ok && after_ft.per_layer[l].v == plain.per_layer[l].v;

  // checkpoint round trip preserves route-I outputs bit-exactly as well
  {
    auto st = train::TrainState<float>::fresh(trained, 1);
    ckpt::save_checkpoint(
        train::pack_checkpoint(trained, adapter::full_ledger(trained), st, train::Mode::Adapter),
        g_ws.dir / "c4_roundtrip.bin");
    auto back = train::load_model_checkpoint<float>(g_ws.dir / "c4_roundtrip.bin");
    auto rt = back.model.forward_features(probe_wave, model::Route::I);
    route_ok = route_ok && rt.final.v == plain.final.v;
  }

  // (c) retention probe through route I unchanged to the last bit
  const auto after = probe::run_retention_probe(trained, model::Route::I, g_ws.all, rc);
  const bool probe_ok = before.value == after.value;

  detail = fmt("init identity %s; frozen bits %s; route-I bits %s; retention %.4f == %.4f %s",
               init_ok ? "ok" : "BROKEN", frozen_ok ? "ok" : "BROKEN",
               route_ok ? "ok" : "BROKEN", before.value, after.value,
               probe_ok ? "ok" : "BROKEN");
  return init_ok && frozen_ok && route_ok && probe_ok;
}

bool c5_learning_signal(std::string& detail) {
  const auto t0 = Clock::now();
  g_ws.full_ml = run_full_ml();
  g_ws.full_ready = true;
  const double minutes = std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
  g_ws.full_minutes = minutes;

  auto ev = train::masked_eval(g_ws.full_ml, g_ws.heldout, model::Route::I, hash64(kSeed, 8));
  const double chance1 = 1.0 / kClasses, chance2 = 1.0 / (kClasses + 1);
  const bool ok = ev.head1_acc > 5.0 * chance1 && ev.head2_acc > 5.0 * chance2 &&
                  ev.head2_absent_acc >= 0.90 && minutes < 30.0;
  detail = fmt("head1 %.3f (5x chance %.3f), head2 %.3f (5x chance %.3f), absent %.3f "
               "(>=0.90), %ld masked frames, %.1f min",
               ev.head1_acc, 5.0 * chance1, ev.head2_acc, 5.0 * chance2, ev.head2_absent_acc,
               ev.masked_frames, minutes);
  return ok;
}

bool c6_direction_of_effect(std::string& detail) {
  auto rand_model =
      model::SslModel<float>::init(model::ModelConfig::desk_scale(), hash64(kSeed, 9));
  g_ws.adapter_ml = run_adapter_ml(kAdapterSteps);
  g_ws.adapter_ready = true;

  const auto pc = probe_config();
  auto ss_rand = probe::run_ss_probe(rand_model, model::Route::I, g_ws.manifest, pc);
  auto ss_full = probe::run_ss_probe(g_ws.full_ml, model::Route::I, g_ws.manifest, pc);
  auto ss_adpt = probe::run_ss_probe(g_ws.adapter_ml, model::Route::II, g_ws.manifest, pc);
  auto se_rand = probe::run_se_probe(rand_model, model::Route::I, g_ws.manifest, pc);
  auto se_full = probe::run_se_probe(g_ws.full_ml, model::Route::I, g_ws.manifest, pc);
  auto se_adpt = probe::run_se_probe(g_ws.adapter_ml, model::Route::II, g_ws.manifest, pc);

  const double ss_gain = ss_full.value - ss_rand.value;
  const double se_gain = se_full.value - se_rand.value;
  const double ss_adapter_gain = ss_adpt.value - ss_rand.value;
  const double se_adapter_gain = se_adpt.value - se_rand.value;

  const bool ok = ss_gain >= 1.0 && se_gain >= 1.0 && ss_adapter_gain >= 0.8 * ss_gain &&
                  se_adapter_gain >= 0.8 * se_gain && ss_full.oracle_ceiling >= 8.0;
  detail = fmt("SS rand/full/adapter %.2f/%.2f/%.2f dB (gain %.2f, adapter %.0f%%); "
               "SE %.2f/%.2f/%.2f dB (gain %.2f, adapter %.0f%%); SS ceiling %.1f dB",
               ss_rand.value, ss_full.value, ss_adpt.value, ss_gain,
               ss_gain > 0 ? 100.0 * ss_adapter_gain / ss_gain : 0.0, se_rand.value,
               se_full.value, se_adpt.value, se_gain,
               se_gain > 0 ? 100.0 * se_adapter_gain / se_gain : 0.0,
               ss_full.oracle_ceiling);
  return ok;
}

bool c7_training_cost(std::string& detail) {
  // equal config: the adapter-equipped desk model; only the ledger differs
  auto measure = [&](train::Mode mode) {
    auto m = g_ws.adapter_ml;  // copy, updates stay local
    adapter::FreezeLedger ledger;
    train::TrainConfig tc;
    tc.total_steps = 1;
    tc.batch_size = 4;
    tc.seed = hash64(kSeed, 10);
    tc.mode = mode;
    if (mode == train::Mode::Adapter) {
      ledger = adapter::freeze_backbone(m);
    } else {
      for (auto& [name, p] : m.params) p.trainable = true;
      ledger = adapter::full_ledger(m);
    }
    auto st = train::TrainState<float>::fresh(m, tc.seed);
    auto res = train::pretrain(m, ledger, g_ws.train_split, tc, st, std::nullopt);
    return res.bwd_macs_last_step;
  };
  const uint64_t full = measure(train::Mode::Full);
  const uint64_t adpt = measure(train::Mode::Adapter);
  detail = fmt("backward MACs: full %.1fM vs adapter %.1fM, ratio %.2f", full / 1e6,
               adpt / 1e6, full > 0 ? static_cast<double>(adpt) / full : 0.0);
  return adpt < full;
}

bool c8_pipeline_determinism(std::string& detail) {
  const auto base = g_ws.dir / "determinism";
  fs::create_directories(base);
  {
    std::ofstream os(base / "cfg.json");
    os << R"({"model": {"conv_channels": 12, "n_layers": 2, "d_model": 32, "d_ffn": 48,
            "n_heads": 4, "proj_dim": 12, "pos_conv_kernel": 7, "pos_conv_groups": 4},
            "train": {"batch_size": 2}})";
  }
  // rerun the whole chain into the same paths so every byte is comparable
  const std::vector<std::string> artifacts = {
      "corpus/manifest.jsonl", "corpus/sources/r000002_s0.wav", "cl/codebook.bin",
      "cl/labels/r000002.labels", "run/ckpt_last.bin", "run/trace.csv", "ss.json"};
  auto run_once = [&]() -> std::optional<std::map<std::string, uint64_t>> {
    const std::string d = (base / "rep").string();
    const std::string cfg = (base / "cfg.json").string();
    fs::remove_all(base / "rep");
    int rc = 0;
    rc |= cli::run_cli({"corpus", "--n", "24", "--seed", "31", "--duration", "1.0", "--out",
                        d + "/corpus"});
    rc |= cli::run_cli({"cluster", "--corpus", d + "/corpus", "--out", d + "/cl", "--classes",
                        "12", "--seed", "31"});
    rc |= cli::run_cli({"--config", cfg, "pretrain", "--corpus", d + "/corpus", "--labels",
                        d + "/cl/labels", "--codebook", d + "/cl/codebook.bin", "--out",
                        d + "/run", "--steps", "30", "--seed", "31"});
    rc |= cli::run_cli({"probe", "--task", "ss", "--ckpt", d + "/run/ckpt_last.bin",
                        "--corpus", d + "/corpus", "--route", "I", "--seed", "31", "--steps",
                        "15", "--hidden", "16", "--out", d + "/ss.json"});
    if (rc != 0) return std::nullopt;
    std::map<std::string, uint64_t> hashes;
    for (const auto& rel : artifacts) hashes[rel] = io::hash_file(base / "rep" / rel);
    return hashes;
  };
  auto first = run_once();
  auto second = run_once();
  if (!first || !second) {
    detail = "pipeline command failed";
    return false;
  }
  bool ok = true;
  std::string mism;
  for (const auto& rel : artifacts) {
    const bool same = first->at(rel) == second->at(rel);
    ok = ok && same;
    if (!same) mism += rel + " ";
  }
  detail = ok ? fmt("%zu artifact hashes identical across reruns", artifacts.size())
              : "hash mismatch: " + mism;
  return ok;
}

bool c9_signal_suite(std::string& detail) {
  Rng rng(hash64(kSeed, 11));
  auto rand_wave = [&](long n) {
    signal::Waveform w;
    w.samples.resize(n);
    for (auto& s : w.samples) s = rng.uniform(-0.5, 0.5);
    return w;
  };

  // SNR-exact mixing over an (energy ratio, snr) grid
  double snr_err = 0;
  for (double scale : {0.5, 1.0, 2.0})
    for (double snr : {-5.0, -1.0, 0.0, 1.0, 3.3, 6.0, 15.0}) {
      auto t = rand_wave(4000);
      auto i = rand_wave(4000);
      for (auto& s : i.samples) s *= scale;
      auto r = signal::mix_at_snr(t, i, snr);
      signal::Waveform scaled = i;
      for (auto& s : scaled.samples) s *= r.gain;
      snr_err = std::max(snr_err,
                         std::abs(10.0 * std::log10(signal::avg_energy(t) /
                                                    signal::avg_energy(scaled)) -
                                  snr));
    }

  // SI-SDR scale invariance
  double si_err = 0;
  for (int it = 0; it < 20; ++it) {
    auto ref = rand_wave(2000);
    auto est = rand_wave(2000);
    const double base = signal::si_sdr(est, ref);
    for (double a : {0.25, 0.7, 2.0, 13.0}) {
      signal::Waveform s = est;
      for (auto& x : s.samples) x *= a;
      si_err = std::max(si_err, std::abs(signal::si_sdr(s, ref) - base));
    }
  }

  // STFT/ISTFT round trip on 100 random waveforms
  double stft_err = 0;
  for (int it = 0; it < 100; ++it) {
    auto w = rand_wave(4000);
    auto back = signal::istft(signal::stft(w));
    double peak = 0;
    for (double s : w.samples) peak = std::max(peak, std::abs(s));
    for (long i = 400; i < w.size() - 400; ++i)
      stft_err = std::max(stft_err, std::abs(back.samples[i] - w.samples[i]) / peak);
  }

  // PSM range
  bool psm_ok = true;
  for (int it = 0; it < 10; ++it) {
    auto m = signal::psm_target(signal::stft(rand_wave(3000)), signal::stft(rand_wave(3000)));
    for (double v : m.v) psm_ok = psm_ok && v >= 0.0 && v <= 1.0;
  }

  // PIT equals brute force over the enumerable permutations
  bool pit_ok = true;
  for (int it = 0; it < 50; ++it) {
    std::vector<double> e1(4), e2(4), r1(4), r2(4);
    for (int i = 0; i < 4; ++i) {
      e1[i] = rng.uniform();
      e2[i] = rng.uniform();
      r1[i] = rng.uniform();
      r2[i] = rng.uniform();
    }
    auto mse = [](const std::vector<double>& a, const std::vector<double>& b) {
      double acc = 0;
      for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
      return acc / a.size();
    };
    const double brute =
        std::min(0.5 * (mse(e1, r1) + mse(e2, r2)), 0.5 * (mse(e1, r2) + mse(e2, r1)));
    pit_ok = pit_ok && probe::pit_mse(e1, e2, r1, r2).loss == brute;
  }
  pit_ok = pit_ok && probe::pit_mse({0.2}, {0.9}, {1.0}, {0.0}).loss == 0.025 &&
           probe::pit_mse({0.2}, {0.9}, {1.0}, {0.0}).swapped;

  detail = fmt("snr err %.1e dB (<1e-9), si-sdr err %.1e dB (<1e-9), stft err %.1e (<1e-6), "
               "psm %s, pit %s",
               snr_err, si_err, stft_err, psm_ok ? "in [0,1]" : "BROKEN",
               pit_ok ? "= brute force" : "BROKEN");
  return snr_err < 1e-9 && si_err < 1e-9 && stft_err < 1e-6 && psm_ok && pit_ok;
}

}  // namespace

int main() {
  std::printf("== acceptance suite ==\n");
  const auto t0 = Clock::now();

  criterion(1, "full-size parameter-count reproduction", c1_param_counts);
  criterion(2, "codeword distribution vs extended-precision oracle", c2_eq1_distribution);
  criterion(3, "gradient suite (all registered ops + end-to-end)", c3_gradient_suite);
  criterion(9, "signal suite (mixing, SI-SDR, STFT, PSM, PIT)", c9_signal_suite);

  std::printf("-- building desk corpus (%ld records), codebook (C=%ld), labels --\n", kRecords,
              kClasses);
  std::fflush(stdout);
  build_corpus_and_labels();

  criterion(5, "multi-label masked-prediction learning signal", c5_learning_signal);

  std::printf("-- training raw-only baseline backbone (%ld steps) --\n", kBaselineSteps);
  std::fflush(stdout);
  g_ws.baseline_raw = run_baseline_raw();
  g_ws.baseline_ready = true;

  criterion(4, "route and freeze invariants", c4_route_freeze);
  criterion(6, "SS/SE direction of effect (pretrained vs random, adapter share)",
            c6_direction_of_effect);
  criterion(7, "adapter-mode backward-pass cost", c7_training_cost);
  criterion(8, "pipeline determinism end to end", c8_pipeline_determinism);

  int failed = 0;
  for (const auto& o : g_results) failed += !o.pass;
  const double total_min = std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
  std::printf("== %zu criteria, %d failed, %.1f min total ==\n", g_results.size(), failed,
              total_min);
  return failed;
}
