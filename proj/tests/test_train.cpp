// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>

#include "mpl/train.hpp"
#include "test_helpers.hpp"

using namespace mpl;
using model::Route;
using model::SslModel;
using train::TrainConfig;

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  cfg.total_steps = 1000;
  cfg.peak_lr = 3e-4;
  cfg.warmup_fraction = 0.08;

  CHECK(train::lr_at_step(0, cfg) == 0.0);
  CHECK(train::lr_at_step(80, cfg) == Catch::Approx(3e-4).epsilon(1e-12));
  // oracle: 3e-4 * (1000 - 540) / 920
  CHECK(train::lr_at_step(540, cfg) == Catch::Approx(1.5e-4).epsilon(1e-12));
  CHECK(train::lr_at_step(1000, cfg) == 0.0);

  // piecewise linear, continuous, max at the boundary
  double prev = train::lr_at_step(0, cfg);
  double mx = prev;
  long argmax = 0;
  for (long s = 1; s <= 1000; ++s) {
    const double cur = train::lr_at_step(s, cfg);
    CHECK(std::abs(cur - prev) < 4e-6);  // no jumps
    if (cur > mx) {
      mx = cur;
      argmax = s;
    }
    prev = cur;
  }
  CHECK(argmax == 80);

  CHECK_THROWS_AS(train::lr_at_step(-1, cfg), InvalidInputError);
  CHECK_THROWS_AS(train::lr_at_step(1001, cfg), InvalidInputError);
}

TEST_CASE("adam single-step behavior") {
  TrainConfig cfg;

  ad::ParamStore<double> ps;
  auto& p = ps.add("w", {3});
  p.value.v = {1.0, -2.0, 0.5};

  train::TrainState<double> st;
  st.moments.emplace("w", std::make_pair(ad::Tensor<double>({3}), ad::Tensor<double>({3})));

  SECTION("zero gradient leaves parameters unchanged") {
    ps.zero_grads();
    train::adam_step(ps, st, 1e-2, cfg);
    CHECK(p.value.v == std::vector<double>{1.0, -2.0, 0.5});
  }

  SECTION("first step moves by ~ -lr * sign(g)") {
    ps.zero_grads();
    p.grad.v = {0.3, -0.7, 0.0};
    train::adam_step(ps, st, 1e-2, cfg);
    // oracle: mhat = g, vhat = g^2 -> update = -lr * g / (|g| + eps)
    CHECK(p.value.v[0] == Catch::Approx(1.0 - 1e-2 * 0.3 / (0.3 + cfg.eps)).epsilon(1e-12));
    CHECK(p.value.v[1] == Catch::Approx(-2.0 + 1e-2 * 0.7 / (0.7 + cfg.eps)).epsilon(1e-12));
    CHECK(p.value.v[2] == 0.5);
  }

  SECTION("gradient on a frozen tensor is a contract violation") {
    auto& q = ps.add("frozen", {2});
    q.trainable = false;
    q.grad.v = {0.0, 1.0};
    CHECK_THROWS_AS(train::adam_step(ps, st, 1e-2, cfg), ContractViolation);
  }
}

TEST_CASE("pretraining: descent, determinism, resume") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "mplssl_train_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const long C = 12;
  auto ds = testutil::make_toy_dataset<float>(dir, 10, 77, C);
  REQUIRE(ds.examples.size() == 10);
  auto cfg_model = testutil::tiny_model_config(C);

  SECTION("loss decreases over 200 steps on the toy corpus") {
    auto m = SslModel<float>::init(cfg_model, 5);
    TrainConfig tc;
    tc.total_steps = 200;
    tc.batch_size = 2;
    tc.seed = 5;
    auto st = train::TrainState<float>::fresh(m, tc.seed);
    auto res = train::pretrain(m, adapter::full_ledger(m), ds, tc, st,
                               std::optional<fs::path>(dir / "run"));
    REQUIRE(res.trace.size() == 200);
    // average the first and last 10 steps to smooth batch noise
    double head = 0, tail = 0;
    for (int i = 0; i < 10; ++i) {
      head += res.trace[i].loss;
      tail += res.trace[res.trace.size() - 1 - i].loss;
    }
    CHECK(tail < 0.8 * head);
    CHECK(fs::exists(dir / "run" / "trace.csv"));
    CHECK(fs::exists(dir / "run" / "ckpt_last.bin"));
    // trace row count equals steps (CSV has a header line)
    std::ifstream is(dir / "run" / "trace.csv");
    long lines = 0;
    std::string line;
    while (std::getline(is, line)) ++lines;
    CHECK(lines == 201);
  }

  SECTION("bit-identical runs for equal seeds") {
    auto run = [&]() {
      auto m = SslModel<float>::init(cfg_model, 9);
      TrainConfig tc;
      tc.total_steps = 20;
      tc.batch_size = 2;
      tc.seed = 13;
      auto st = train::TrainState<float>::fresh(m, tc.seed);
      train::pretrain(m, adapter::full_ledger(m), ds, tc, st, std::nullopt);
      return m;
    };
    auto a = run();
    auto b = run();
    for (const auto& [name, p] : a.params) CHECK(p.value.v == b.params.at(name).value.v);
  }

  SECTION("resume from a checkpoint reproduces the uninterrupted run") {
    TrainConfig tc;
    tc.total_steps = 30;
    tc.batch_size = 2;
    tc.seed = 21;
    tc.checkpoint_every = 10;

    auto m1 = SslModel<float>::init(cfg_model, 31);
    auto st1 = train::TrainState<float>::fresh(m1, tc.seed);
    train::pretrain(m1, adapter::full_ledger(m1), ds, tc, st1,
                    std::optional<fs::path>(dir / "full"));

    auto loaded = train::load_model_checkpoint<float>(dir / "full" / "ckpt_step000020.bin");
    CHECK(loaded.state.step == 20);
    train::pretrain(loaded.model, loaded.ledger, ds, tc, loaded.state, std::nullopt);

    for (const auto& [name, p] : m1.params)
      CHECK(p.value.v == loaded.model.params.at(name).value.v);
    for (const auto& [name, mv] : st1.moments) {
      CHECK(mv.first.v == loaded.state.moments.at(name).first.v);
      CHECK(mv.second.v == loaded.state.moments.at(name).second.v);
    }
    CHECK(st1.rng.state() == loaded.state.rng.state());
  }

  SECTION("adapter mode: frozen backbone stays bit-identical, route I unchanged") {
    auto m = SslModel<float>::init(cfg_model, 41);
    adapter::insert_adapters(m, model::AdapterConfig{8}, 42);
    auto ledger = adapter::freeze_backbone(m);

    auto probe_wave = ds.examples[0].wave;
    auto before = m.forward_features(probe_wave, Route::I);
    std::map<std::string, std::vector<float>> frozen_before;
    for (const auto& [name, p] : m.params)
      if (!ledger.at(name)) frozen_before[name] = p.value.v;

    TrainConfig tc;
    tc.total_steps = 25;
    tc.batch_size = 2;
    tc.seed = 43;
    tc.mode = train::Mode::Adapter;
    auto st = train::TrainState<float>::fresh(m, tc.seed);
    CHECK(st.moments.size() == [&] {
      size_t n = 0;
      for (const auto& [name, p] : m.params) n += p.trainable;
      return n;
    }());
    train::pretrain(m, ledger, ds, tc, st, std::nullopt);

    for (const auto& [name, vals] : frozen_before) CHECK(m.params.at(name).value.v == vals);
    auto after = m.forward_features(probe_wave, Route::I);
    CHECK(after.final.v == before.final.v);

    // the adapters did move
    bool moved = false;
    for (const auto& [name, p] : m.params)
      if (ledger.at(name) && model::is_adapter_tensor(name))
        for (size_t i = 0; i < p.value.v.size(); ++i) moved = moved || p.value.v[i] != 0.0f;
    CHECK(moved);
  }

  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip is exact") {
  auto cfg = testutil::tiny_model_config(8);
  auto m = SslModel<float>::init(cfg, 3);
  adapter::insert_adapters(m, model::AdapterConfig{4}, 4);
  auto ledger = adapter::freeze_backbone(m);
  auto st = train::TrainState<float>::fresh(m, 7);
  st.step = 123;
  st.rng.next_u64();

  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "mplssl_ckpt_test";
  fs::create_directories(dir);
  ckpt::save_checkpoint(train::pack_checkpoint(m, ledger, st, train::Mode::Adapter),
                        dir / "a.bin");
  auto loaded = train::load_model_checkpoint<float>(dir / "a.bin");

  CHECK(loaded.mode == train::Mode::Adapter);
  CHECK(loaded.state.step == 123);
  CHECK(loaded.state.rng.state() == st.rng.state());
  CHECK(loaded.ledger == ledger);
  REQUIRE(loaded.model.adapters.has_value());
  CHECK(loaded.model.adapters->hidden == 4);
  for (const auto& [name, p] : m.params) {
    CHECK(loaded.model.params.at(name).value.v == p.value.v);
    CHECK(loaded.model.params.at(name).trainable == p.trainable);
  }
  // saving again produces identical bytes
  ckpt::save_checkpoint(
      train::pack_checkpoint(loaded.model, loaded.ledger, loaded.state, loaded.mode),
      dir / "b.bin");
  CHECK(io::hash_file(dir / "a.bin") == io::hash_file(dir / "b.bin"));
  fs::remove_all(dir);
}

TEST_CASE("gradient verification registry") {
  // spot checks here; the acceptance suite sweeps the whole registry
  CHECK(train::grad_check("layer_norm", 8) < 1e-6);
  CHECK(train::grad_check("eq1_loss", 5) < 1e-6);
  CHECK(train::grad_check("adapter") < 1e-6);
  CHECK_THROWS_AS(train::grad_check("unknown_op"), InvalidInputError);
  CHECK(train::registered_grad_ops().size() >= 15);
}
