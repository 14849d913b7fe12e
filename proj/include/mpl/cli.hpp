// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpl/adapter.hpp"
#include "mpl/corpus.hpp"
#include "mpl/labeler.hpp"
#include "mpl/model.hpp"
#include "mpl/parallel.hpp"
#include "mpl/probe.hpp"
#include "mpl/train.hpp"

namespace mpl::cli {

namespace fs = std::filesystem;

struct CommonOpts {
  std::string config_path;
  int threads = 1;
  uint64_t seed = 1;
};

struct LoadedConfig {
  model::ModelConfig model = model::ModelConfig::desk_scale();
  std::optional<model::AdapterConfig> adapter;
  train::TrainConfig train;
};

inline LoadedConfig load_config(const std::string& path) {
  LoadedConfig cfg;
  if (path.empty()) return cfg;
  auto doc = nlohmann::json::parse(io::read_file(path));
  if (doc.contains("model")) cfg.model = doc["model"].get<model::ModelConfig>();
  if (doc.contains("adapter") && !doc["adapter"].is_null())
    cfg.adapter = doc["adapter"].get<model::AdapterConfig>();
  if (doc.contains("train")) cfg.train = doc["train"].get<train::TrainConfig>();
  return cfg;
}

inline std::vector<corpus::MixtureKind> parse_kinds(const std::string& csv) {
  std::vector<corpus::MixtureKind> kinds;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) kinds.push_back(corpus::kind_from_name(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return kinds;
}

// ---------------------------------------------------------------------------
// corpus: build the manifest and audio fixtures
// ---------------------------------------------------------------------------

inline void cmd_corpus(long n, uint64_t seed, double duration, const fs::path& out, int threads,
                       bool write_audio) {
  auto manifest = corpus::build_corpus(n, seed, duration);
  fs::create_directories(out);
  corpus::save_manifest(manifest, out / "manifest.jsonl");
  if (!write_audio) return;
  fs::create_directories(out / "sources");
  fs::create_directories(out / "mixtures");
  parallel_for(static_cast<long>(manifest.records.size()), threads, [&](long i) {
    const auto& rec = manifest.records[i];
    auto rz = corpus::realize(rec, manifest.sample_rate);
    for (size_t s = 0; s < rec.source_ids.size(); ++s) {
      auto src = corpus::synthesize_source(corpus::source_seed(rec, rec.source_ids[s]),
                                           rec.duration_s, corpus::SourceKind::Speech,
                                           manifest.sample_rate);
      signal::write_wav16(out / "sources" / (rec.source_ids[s] + ".wav"), src);
    }
    if (rec.noise_id) {
      auto noise = corpus::synthesize_source(corpus::source_seed(rec, *rec.noise_id),
                                             rec.duration_s, corpus::SourceKind::Noise,
                                             manifest.sample_rate);
      signal::write_wav16(out / "sources" / (*rec.noise_id + ".wav"), noise);
    }
    signal::write_wav16(out / "mixtures" / (rec.id + ".wav"), rz.mixture);
  });
}

// ---------------------------------------------------------------------------
// cluster: features -> k-means codebook -> per-record label files
// ---------------------------------------------------------------------------

inline void cmd_cluster(const fs::path& corpus_dir, const fs::path& out, long classes,
                        int max_iters, uint64_t seed, int threads) {
  auto manifest = corpus::load_manifest(corpus_dir / "manifest.jsonl");
  const long n = static_cast<long>(manifest.records.size());
  std::vector<std::vector<labeler::FeatureSequence>> feats(n);
  parallel_for(n, threads, [&](long i) {
    auto rz = corpus::realize(manifest.records[i], manifest.sample_rate, manifest.audio_mode,
                              corpus_dir);
    for (const auto& c : rz.components) feats[i].push_back(labeler::extract_features(c));
  });
  std::vector<labeler::FeatureSequence> all;
  for (const auto& fr : feats)
    for (const auto& f : fr) all.push_back(f);
  auto cb = labeler::kmeans_fit(all, classes, max_iters, seed);
  fs::create_directories(out / "labels");
  labeler::save_codebook(cb, out / "codebook.bin");
  std::vector<std::vector<labeler::LabelSequence>> labels(n);
  parallel_for(n, threads, [&](long i) {
    for (const auto& f : feats[i]) labels[i].push_back(labeler::assign_labels(f, cb));
  });
  for (long i = 0; i < n; ++i)
    labeler::save_labels(labels[i], labeler::label_path(out / "labels", manifest.records[i].id));
}

// ---------------------------------------------------------------------------
// pretrain / adapt
// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path corpus_dir, labels_dir, codebook, out;
  std::string init_ckpt;
  LoadedConfig cfg;
  bool insert_adapters = false;
  int adapter_hidden = 0;  // 0: keep config
  std::string kinds_csv;
  double holdout_fraction = 0.2;
};

inline int run_training(TrainArgs& a, bool adapt_mode) {
  auto manifest = corpus::load_manifest(a.corpus_dir / "manifest.jsonl");
  auto cb = labeler::load_codebook(a.codebook);

  model::SslModel<float> m;
  train::TrainState<float> st;
  adapter::FreezeLedger ledger;
  bool resumed = false;

  if (!a.init_ckpt.empty()) {
    auto loaded = train::load_model_checkpoint<float>(a.init_ckpt);
    m = std::move(loaded.model);
    st = std::move(loaded.state);
    ledger = std::move(loaded.ledger);
    resumed = true;
  } else {
    require_config(!adapt_mode, "adapt requires --init CKPT");
    a.cfg.model.n_classes = static_cast<int>(cb.C);
    m = model::SslModel<float>::init(a.cfg.model, a.cfg.train.seed);
    if (a.cfg.adapter) m.add_adapters(*a.cfg.adapter, a.cfg.train.seed);
  }
  require_config(m.cfg.n_classes == cb.C, "model classes do not match the codebook");

  if (adapt_mode) {
    a.cfg.train.mode = train::Mode::Adapter;
    if (!m.adapters) {
      require_config(a.insert_adapters,
                     "checkpoint has no adapters; pass --insert to add them");
      model::AdapterConfig acfg = a.cfg.adapter.value_or(model::AdapterConfig{});
      if (a.adapter_hidden > 0) acfg.hidden = a.adapter_hidden;
      adapter::insert_adapters(m, acfg, a.cfg.train.seed);
    }
    ledger = adapter::freeze_backbone(m);
    st = train::TrainState<float>::fresh(m, a.cfg.train.seed);  // new trainable set
    st.rng = Rng(hash64(a.cfg.train.seed, 0xada9));
  } else if (!resumed) {
    ledger = adapter::full_ledger(m);
    st = train::TrainState<float>::fresh(m, a.cfg.train.seed);
  }

  auto ds = train::build_dataset<float>(manifest, a.labels_dir, cb.C, a.corpus_dir);
  auto [tr, ho] = train::split_dataset(ds, a.holdout_fraction);
  if (!a.kinds_csv.empty()) a.cfg.train.kinds = parse_kinds(a.kinds_csv);

  auto res = train::pretrain(m, ledger, tr, a.cfg.train, st,
                             std::optional<fs::path>(a.out));
  std::printf("steps=%zu first_loss=%.4f final_loss=%.4f\n", res.trace.size(), res.first_loss,
              res.final_loss);
  if (!ho.examples.empty()) {
    auto ev = train::masked_eval(m, ho,
                                 m.adapters ? model::Route::II : model::Route::I,
                                 a.cfg.train.seed);
    std::printf("heldout head1_acc=%.4f head2_acc=%.4f absent_acc=%.4f masked=%ld\n",
                ev.head1_acc, ev.head2_acc, ev.head2_absent_acc, ev.masked_frames);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// params: parameter accounting table
// ---------------------------------------------------------------------------

inline nlohmann::json params_row(const std::string& label, const model::ModelConfig& cfg,
                                 const std::optional<model::AdapterConfig>& ad, int heads,
                                 bool adapter_trainable) {
  auto pc = model::count_params(cfg, ad, heads);
  nlohmann::json j;
  j["label"] = label;
  j["total"] = pc.total;
  j["trainable"] = adapter_trainable ? pc.trainable_adapter : pc.trainable_full;
  j["components"] = pc.by_component;
  return j;
}

inline int cmd_params(const std::string& preset, int heads, int adapter_hidden,
                      const std::string& json_path, const LoadedConfig& cfg_in) {
  model::ModelConfig cfg =
      preset == "full" ? model::ModelConfig::full_size()
                       : (preset == "desk" ? model::ModelConfig::desk_scale() : cfg_in.model);
  nlohmann::json rows = nlohmann::json::array();
  rows.push_back(params_row("backbone-1head", cfg, std::nullopt, 1, false));
  rows.push_back(params_row("multi-label-2heads", cfg, std::nullopt, 2, false));
  if (preset == "full")
    for (int h : {64, 128, 256, 512})
      rows.push_back(params_row("adapter-" + std::to_string(h), cfg,
                                model::AdapterConfig{h}, 2, true));
  if (adapter_hidden > 0)
    rows.push_back(params_row("adapter-" + std::to_string(adapter_hidden), cfg,
                              model::AdapterConfig{adapter_hidden}, 2, true));
  if (heads == 1) rows.erase(rows.begin() + 1, rows.end());

  std::printf("%-22s %14s %14s %9s\n", "config", "total", "trainable", "train%");
  for (const auto& r : rows) {
    const double pct = 100.0 * r["trainable"].get<double>() / r["total"].get<double>();
    std::printf("%-22s %14lld %14lld %8.2f%%\n", r["label"].get<std::string>().c_str(),
                r["total"].get<long long>(), r["trainable"].get<long long>(), pct);
  }
  nlohmann::json doc;
  doc["preset"] = preset;
  doc["rows"] = rows;
  const std::string out = doc.dump(2);
  if (!json_path.empty()) {
    auto os = io::open_out(json_path);
    os << out << "\n";
  } else {
    std::printf("%s\n", out.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// probe / eval
// ---------------------------------------------------------------------------

inline int cmd_probe(const std::string& task, const std::string& ckpt_path,
                     const fs::path& corpus_dir, const fs::path& labels_dir,
                     const fs::path& codebook, const std::string& route_s, uint64_t seed,
                     long steps, int hidden, const std::string& out_path) {
  auto loaded = train::load_model_checkpoint<float>(ckpt_path);
  const auto route = model::route_from_name(route_s);
  auto manifest = corpus::load_manifest(corpus_dir / "manifest.jsonl");

  probe::ProbeConfig pc;
  pc.seed = seed;
  if (steps > 0) pc.steps = steps;
  if (hidden > 0) pc.hidden = hidden;

  probe::ProbeReport rep;
  if (task == "ss") {
    rep = probe::run_ss_probe(loaded.model, route, manifest, pc);
  } else if (task == "se") {
    rep = probe::run_se_probe(loaded.model, route, manifest, pc);
  } else if (task == "retention") {
    require_input(!labels_dir.empty() && !codebook.empty(),
                  "retention probe needs --labels and --codebook");
    auto cb = labeler::load_codebook(codebook);
    auto ds = train::build_dataset<float>(manifest, labels_dir, cb.C, corpus_dir);
    rep = probe::run_retention_probe(loaded.model, route, ds, pc);
  } else {
    throw InvalidInputError("unknown probe task: " + task);
  }
  rep.checkpoint = ckpt_path;
  nlohmann::json j = rep;
  const std::string out = j.dump(2);
  std::printf("%s\n", out.c_str());
  if (!out_path.empty()) {
    auto os = io::open_out(out_path);
    os << out << "\n";
  }
  return 0;
}

inline int cmd_eval(const std::string& ckpt_path, const fs::path& corpus_dir,
                    const fs::path& labels_dir, const fs::path& codebook,
                    const std::string& route_s, uint64_t seed, double holdout,
                    const std::string& out_path) {
  auto loaded = train::load_model_checkpoint<float>(ckpt_path);
  auto manifest = corpus::load_manifest(corpus_dir / "manifest.jsonl");
  auto cb = labeler::load_codebook(codebook);
  auto ds = train::build_dataset<float>(manifest, labels_dir, cb.C, corpus_dir);
  auto [tr, ho] = train::split_dataset(ds, holdout);
  auto& eval_ds = ho.examples.empty() ? tr : ho;
  auto ev = train::masked_eval(loaded.model, eval_ds, model::route_from_name(route_s), seed);
  nlohmann::json j{{"task", "masked_prediction"},
                   {"route", route_s},
                   {"checkpoint", ckpt_path},
                   {"head1_acc", ev.head1_acc},
                   {"head2_acc", ev.head2_acc},
                   {"head2_absent_acc", ev.head2_absent_acc},
                   {"masked_frames", ev.masked_frames},
                   {"absent_frames", ev.absent_frames},
                   {"n_records", eval_ds.examples.size()},
                   {"seed", seed}};
  const std::string out = j.dump(2);
  std::printf("%s\n", out.c_str());
  if (!out_path.empty()) {
    auto os = io::open_out(out_path);
    os << out << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"multi pseudo-label masked speech pre-training"};
  app.require_subcommand(1);

  std::string config_path;
  int threads = 1;
  app.add_option("--config", config_path, "JSON config (model/adapter/train)");
  app.add_option("--threads", threads, "worker threads for corpus/eval stages");

  // corpus
  auto* c_corpus = app.add_subcommand("corpus", "build the synthetic corpus");
  long n_records = 8;
  uint64_t seed = 1;
  double duration = 2.0;
  std::string out_dir;
  bool no_audio = false;
  c_corpus->add_option("--n", n_records, "number of records");
  c_corpus->add_option("--seed", seed, "global seed");
  c_corpus->add_option("--duration", duration, "clip seconds");
  c_corpus->add_option("--out", out_dir, "output directory")->required();
  c_corpus->add_flag("--no-audio", no_audio, "manifest only, skip WAV fixtures");

  // cluster
  auto* c_cluster = app.add_subcommand("cluster", "fit the codebook and write labels");
  std::string corpus_dir, labels_dir, codebook_path, ckpt_path, route_s = "I";
  long classes = 100;
  int kmeans_iters = 50;
  c_cluster->add_option("--corpus", corpus_dir, "corpus directory")->required();
  c_cluster->add_option("--out", out_dir, "output directory")->required();
  c_cluster->add_option("--classes", classes, "codebook size");
  c_cluster->add_option("--iters", kmeans_iters, "max Lloyd iterations");
  c_cluster->add_option("--seed", seed, "clustering seed");

  // pretrain / adapt
  TrainArgs ta;
  long steps_override = 0;
  int batch_override = 0;
  std::string mode_s;
  auto add_train_opts = [&](CLI::App* cmd) {
    cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
    cmd->add_option("--labels", labels_dir, "labels directory")->required();
    cmd->add_option("--codebook", codebook_path, "codebook file")->required();
    cmd->add_option("--out", out_dir, "run directory")->required();
    cmd->add_option("--init", ta.init_ckpt, "initial checkpoint");
    cmd->add_option("--steps", steps_override, "total optimizer steps");
    cmd->add_option("--batch", batch_override, "clips per step");
    cmd->add_option("--seed", seed, "training seed");
    cmd->add_option("--kinds", ta.kinds_csv, "comma list of mixture kinds to sample");
    cmd->add_option("--holdout", ta.holdout_fraction, "held-out fraction");
    cmd->add_option("--adapter-hidden", ta.adapter_hidden, "adapter bottleneck width");
  };
  auto* c_pretrain = app.add_subcommand("pretrain", "multi-label masked pre-training");
  add_train_opts(c_pretrain);
  c_pretrain->add_option("--mode", mode_s, "full|adapter|finetune-unfrozen");
  auto* c_adapt = app.add_subcommand("adapt", "adapter training on a frozen backbone");
  add_train_opts(c_adapt);
  c_adapt->add_flag("--insert", ta.insert_adapters, "insert adapters if absent");

  // params
  auto* c_params = app.add_subcommand("params", "parameter accounting");
  std::string preset = "full", json_path;
  int heads = 2, adapter_hidden = 0;
  c_params->add_option("--preset", preset, "full|desk|config");
  c_params->add_option("--heads", heads, "1 or 2");
  c_params->add_option("--adapter", adapter_hidden, "extra adapter row");
  c_params->add_option("--json", json_path, "write the JSON table here");

  // probe / eval
  auto* c_probe = app.add_subcommand("probe", "downstream probes (ss|se|retention)");
  std::string task = "ss", report_path;
  long probe_steps = 0;
  int probe_hidden = 0;
  c_probe->add_option("--task", task, "ss|se|retention")->required();
  c_probe->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  c_probe->add_option("--corpus", corpus_dir, "corpus directory")->required();
  c_probe->add_option("--labels", labels_dir, "labels directory (retention)");
  c_probe->add_option("--codebook", codebook_path, "codebook file (retention)");
  c_probe->add_option("--route", route_s, "I or II");
  c_probe->add_option("--seed", seed, "probe seed");
  c_probe->add_option("--steps", probe_steps, "probe training steps");
  c_probe->add_option("--hidden", probe_hidden, "probe hidden width");
  c_probe->add_option("--out", report_path, "report JSON path");

  auto* c_eval = app.add_subcommand("eval", "masked-prediction accuracy report");
  double eval_holdout = 0.2;
  c_eval->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  c_eval->add_option("--corpus", corpus_dir, "corpus directory")->required();
  c_eval->add_option("--labels", labels_dir, "labels directory")->required();
  c_eval->add_option("--codebook", codebook_path, "codebook file")->required();
  c_eval->add_option("--route", route_s, "I or II");
  c_eval->add_option("--seed", seed, "mask seed");
  c_eval->add_option("--holdout", eval_holdout, "held-out fraction");
  c_eval->add_option("--out", report_path, "report JSON path");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "argument error: %s\n", e.what());
    return 2;
  }

  if (const char* env = std::getenv("MPL_SSL_DETERMINISTIC"); env && env[0] == '1') threads = 1;

  try {
    if (c_corpus->parsed()) {
      cmd_corpus(n_records, seed, duration, out_dir, threads, !no_audio);
      return 0;
    }
    if (c_cluster->parsed()) {
      cmd_cluster(corpus_dir, out_dir, classes, kmeans_iters, seed, threads);
      return 0;
    }
    if (c_pretrain->parsed() || c_adapt->parsed()) {
      ta.corpus_dir = corpus_dir;
      ta.labels_dir = labels_dir;
      ta.codebook = codebook_path;
      ta.out = out_dir;
      ta.cfg = load_config(config_path);
      if (!mode_s.empty()) ta.cfg.train.mode = train::mode_from_name(mode_s);
      if (steps_override > 0) ta.cfg.train.total_steps = steps_override;
      if (batch_override > 0) ta.cfg.train.batch_size = batch_override;
      ta.cfg.train.seed = seed;
      if (ta.adapter_hidden > 0 && !c_adapt->parsed())
        ta.cfg.adapter = model::AdapterConfig{ta.adapter_hidden};
      return run_training(ta, c_adapt->parsed());
    }
    if (c_params->parsed()) return cmd_params(preset, heads, adapter_hidden, json_path,
                                              load_config(config_path));
    if (c_probe->parsed())
      return cmd_probe(task, ckpt_path, corpus_dir, labels_dir, codebook_path, route_s, seed,
                       probe_steps, probe_hidden, report_path);
    if (c_eval->parsed())
      return cmd_eval(ckpt_path, corpus_dir, labels_dir, codebook_path, route_s, seed,
                      eval_holdout, report_path);
  } catch (const InvalidInputError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

}  // namespace mpl::cli
