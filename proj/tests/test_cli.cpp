// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mpl/cli.hpp"

using namespace mpl;
namespace fs = std::filesystem;

namespace {

int run(std::initializer_list<std::string> args) { return cli::run_cli(args); }

std::string slurp(const fs::path& p) {
  auto buf = io::read_file(p);
  return std::string(buf.begin(), buf.end());
}

}  // namespace

TEST_CASE("cli pipeline: corpus, cluster, pretrain, adapt, probe, eval") {
  auto dir = fs::temp_directory_path() / "mplssl_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string d = dir.string();

  // tiny model/training config shared by the training commands
  {
    std::ofstream os(dir / "cfg.json");
    os << R"({"model": {"conv_channels": 12, "n_layers": 2, "d_model": 32, "d_ffn": 48,
              "n_heads": 4, "proj_dim": 12, "pos_conv_kernel": 7, "pos_conv_groups": 4},
              "train": {"batch_size": 2}})";
  }

  SECTION("corpus command: ratio, determinism, validation") {
    REQUIRE(run({"corpus", "--n", "8", "--seed", "1", "--out", d + "/c1",
                 "--duration", "0.5"}) == 0);
    auto manifest = corpus::load_manifest(dir / "c1" / "manifest.jsonl");
    for (auto k : corpus::kAllKinds) CHECK(manifest.counts()[k] == 2);
    CHECK(fs::exists(dir / "c1" / "sources" / "r000000_s0.wav"));
    CHECK(fs::exists(dir / "c1" / "mixtures" / "r000000.wav"));

    REQUIRE(run({"corpus", "--n", "8", "--seed", "1", "--out", d + "/c2",
                 "--duration", "0.5"}) == 0);
    CHECK(io::hash_file(dir / "c1" / "manifest.jsonl") ==
          io::hash_file(dir / "c2" / "manifest.jsonl"));

    CHECK(run({"corpus", "--n", "3", "--seed", "1", "--out", d + "/c3"}) == 2);
  }

  SECTION("params command emits the table and valid JSON") {
    REQUIRE(run({"params", "--preset", "full", "--json", d + "/params.json"}) == 0);
    auto doc = nlohmann::json::parse(slurp(dir / "params.json"));
    REQUIRE(doc.contains("rows"));
    const auto& rows = doc["rows"];
    REQUIRE(rows.size() >= 6);
    CHECK(rows[0]["total"].get<long long>() == 94696448);
    CHECK(rows[1]["total"].get<long long>() == 95021568);
    // adapter rows match count_params exactly
    const auto a64 = model::count_params(model::ModelConfig::full_size(),
                                         model::AdapterConfig{64}, 2);
    CHECK(rows[2]["total"].get<long long>() == a64.total);
    CHECK(rows[2]["trainable"].get<long long>() == a64.trainable_adapter);
  }

  SECTION("full pipeline with training, probing, evaluation") {
    const std::string corpus_d = d + "/corpus";
    REQUIRE(run({"corpus", "--n", "24", "--seed", "9", "--duration", "1.0", "--out", corpus_d,
                 "--no-audio"}) == 0);

    // cluster: more classes than frames is a validation failure
    CHECK(run({"cluster", "--corpus", corpus_d, "--out", d + "/cl_bad", "--classes", "99999",
               "--seed", "9"}) == 2);

    REQUIRE(run({"cluster", "--corpus", corpus_d, "--out", d + "/cl", "--classes", "12",
                 "--seed", "9"}) == 0);
    // deterministic codebook for a fixed seed
    REQUIRE(run({"cluster", "--corpus", corpus_d, "--out", d + "/cl2", "--classes", "12",
                 "--seed", "9"}) == 0);
    CHECK(io::hash_file(dir / "cl" / "codebook.bin") ==
          io::hash_file(dir / "cl2" / "codebook.bin"));

    // the parallel assignment path yields identical artifacts
    REQUIRE(run({"--threads", "2", "cluster", "--corpus", corpus_d, "--out", d + "/cl3",
                 "--classes", "12", "--seed", "9"}) == 0);
    CHECK(io::hash_file(dir / "cl" / "codebook.bin") ==
          io::hash_file(dir / "cl3" / "codebook.bin"));
    CHECK(io::hash_file(dir / "cl" / "labels" / "r000003.labels") ==
          io::hash_file(dir / "cl3" / "labels" / "r000003.labels"));

    // labels cover every record, with one sequence per clean component
    auto manifest = corpus::load_manifest(fs::path(corpus_d) / "manifest.jsonl");
    for (const auto& rec : manifest.records) {
      auto p = labeler::label_path(dir / "cl" / "labels", rec.id);
      REQUIRE(fs::exists(p));
      CHECK(labeler::load_labels(p).size() == rec.source_ids.size());
    }

    REQUIRE(run({"--config", d + "/cfg.json", "pretrain", "--corpus", corpus_d, "--labels",
                 d + "/cl/labels", "--codebook", d + "/cl/codebook.bin", "--out", d + "/run",
                 "--steps", "20", "--seed", "4"}) == 0);
    // loss trace: one header plus one row per step
    std::ifstream is(dir / "run" / "trace.csv");
    std::string line;
    long lines = 0;
    while (std::getline(is, line)) ++lines;
    CHECK(lines == 21);

    // adapt refuses an adapter-less checkpoint without --insert
    CHECK(run({"adapt", "--corpus", corpus_d, "--labels", d + "/cl/labels", "--codebook",
               d + "/cl/codebook.bin", "--out", d + "/ad", "--init",
               d + "/run/ckpt_last.bin", "--steps", "10", "--seed", "5"}) == 2);
    REQUIRE(run({"adapt", "--corpus", corpus_d, "--labels", d + "/cl/labels", "--codebook",
                 d + "/cl/codebook.bin", "--out", d + "/ad", "--init",
                 d + "/run/ckpt_last.bin", "--steps", "10", "--seed", "5", "--insert",
                 "--adapter-hidden", "8"}) == 0);

    // frozen tensors identical before/after adapter training
    auto base = train::load_model_checkpoint<float>(dir / "run" / "ckpt_last.bin");
    auto adapted = train::load_model_checkpoint<float>(dir / "ad" / "ckpt_last.bin");
    for (const auto& [name, p] : base.model.params)
      if (!model::adapter_mode_trainable(name))
        CHECK(adapted.model.params.at(name).value.v == p.value.v);

    // probes accept both routes on adapter checkpoints
    REQUIRE(run({"probe", "--task", "ss", "--ckpt", d + "/ad/ckpt_last.bin", "--corpus",
                 corpus_d, "--route", "II", "--seed", "3", "--steps", "10", "--hidden", "16",
                 "--out", d + "/ss2.json"}) == 0);
    REQUIRE(run({"probe", "--task", "ss", "--ckpt", d + "/ad/ckpt_last.bin", "--corpus",
                 corpus_d, "--route", "I", "--seed", "3", "--steps", "10", "--hidden", "16",
                 "--out", d + "/ss1.json"}) == 0);
    REQUIRE(run({"probe", "--task", "ss", "--ckpt", d + "/run/ckpt_last.bin", "--corpus",
                 corpus_d, "--route", "I", "--seed", "3", "--steps", "10", "--hidden", "16",
                 "--out", d + "/ss0.json"}) == 0);

    // route I on the adapter checkpoint reproduces the baseline report
    auto j0 = nlohmann::json::parse(slurp(dir / "ss0.json"));
    auto j1 = nlohmann::json::parse(slurp(dir / "ss1.json"));
    auto j2 = nlohmann::json::parse(slurp(dir / "ss2.json"));
    CHECK(j0["value"].get<double>() == j1["value"].get<double>());
    CHECK(j0["oracle_ceiling"].get<double>() == j1["oracle_ceiling"].get<double>());
    for (const char* k :
         {"task", "route", "checkpoint", "metric", "value", "oracle_ceiling", "n_records", "seed"})
      CHECK(j2.contains(k));

    REQUIRE(run({"eval", "--ckpt", d + "/run/ckpt_last.bin", "--corpus", corpus_d, "--labels",
                 d + "/cl/labels", "--codebook", d + "/cl/codebook.bin", "--seed", "2", "--out",
                 d + "/eval.json"}) == 0);
    auto ej = nlohmann::json::parse(slurp(dir / "eval.json"));
    CHECK(ej["task"] == "masked_prediction");
    CHECK(ej.contains("head1_acc"));
  }

  SECTION("bad paths exit with the validation code") {
    CHECK(run({"cluster", "--corpus", d + "/nowhere", "--out", d + "/x", "--seed", "1"}) == 2);
    CHECK(run({"probe", "--task", "nope", "--ckpt", d + "/missing.bin", "--corpus",
               d + "/nowhere", "--route", "I"}) == 2);
    CHECK(run({"frobnicate"}) == 2);
  }

  fs::remove_all(dir);
}

TEST_CASE("installed binary responds with documented exit codes") {
  auto dir = fs::temp_directory_path() / "mplssl_bin_test";
  fs::create_directories(dir);
  const std::string bin = MPLSSL_BIN;
  CHECK(std::system((bin + " params --preset full --json " + (dir / "p.json").string() +
                     " > /dev/null")
                        .c_str()) == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "p.json")).contains("rows"));
  const int rc =
      std::system((bin + " corpus --n 3 --out " + (dir / "c").string() + " 2>/dev/null").c_str());
  CHECK(WEXITSTATUS(rc) == 2);
  fs::remove_all(dir);
}
