// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <limits>

#include "mpl/labeler.hpp"

using namespace mpl;
using labeler::LabelSequence;

TEST_CASE("extract_features lengths and determinism") {
  signal::Waveform w;
  w.samples.assign(16000, 0.0);
  Rng rng(4);
  for (auto& s : w.samples) s = rng.uniform(-0.3, 0.3);

  auto f = labeler::extract_features(w);
  // oracle: floor((16000 - 400) / 320) + 1
  CHECK(f.frames == 49);
  CHECK(f.dim == 39);

  auto g = labeler::extract_features(w);
  CHECK(f.v == g.v);

  signal::Waveform z;
  z.samples.assign(16000, 0.0);
  auto fz = labeler::extract_features(z);
  // all-zero input: every frame hits the log floor, so frames are constant
  for (long t = 1; t < fz.frames; ++t)
    for (long d = 0; d < fz.dim; ++d)
      CHECK(fz.v[t * fz.dim + d] == fz.v[d]);

  signal::Waveform tiny;
  tiny.samples.assign(100, 0.1);
  CHECK_THROWS_AS(labeler::extract_features(tiny), InvalidInputError);
}

TEST_CASE("kmeans recovers separated 1-D clusters") {
  // data {0,0,0,10,10,10}, C=2; oracle: brute force over all 2-partitions
  std::vector<double> data = {0, 0, 0, 10, 10, 10};
  auto cb = labeler::kmeans_fit(data, 6, 1, 2, 50, 7);

  double best_cost = std::numeric_limits<double>::max();
  std::pair<double, double> best_centers{0, 0};
  for (unsigned mask = 1; mask < 63; ++mask) {  // nonempty proper subsets
    double s0 = 0, s1 = 0;
    int n0 = 0, n1 = 0;
    for (int i = 0; i < 6; ++i)
      (mask >> i & 1 ? s1 : s0) += data[i], (mask >> i & 1 ? n1 : n0) += 1;
    if (!n0 || !n1) continue;
    const double c0 = s0 / n0, c1 = s1 / n1;
    double cost = 0;
    for (int i = 0; i < 6; ++i) {
      const double c = (mask >> i & 1) ? c1 : c0;
      cost += (data[i] - c) * (data[i] - c);
    }
    if (cost < best_cost) {
      best_cost = cost;
      best_centers = {std::min(c0, c1), std::max(c0, c1)};
    }
  }
  REQUIRE(best_centers.first == 0.0);
  REQUIRE(best_centers.second == 10.0);

  const double lo = std::min(cb.centers[0], cb.centers[1]);
  const double hi = std::max(cb.centers[0], cb.centers[1]);
  CHECK(lo == Catch::Approx(0.0).margin(1e-12));
  CHECK(hi == Catch::Approx(10.0).margin(1e-12));
}

TEST_CASE("kmeans fixed point and determinism") {
  // C distinct points, one per cluster -> centers equal the points
  std::vector<double> pts = {0, 0, 5, 5, -3, 9};  // three 2-D points
  auto cb = labeler::kmeans_fit(pts, 3, 2, 3, 50, 11);
  std::vector<std::pair<double, double>> got;
  for (long c = 0; c < 3; ++c) got.emplace_back(cb.center(c)[0], cb.center(c)[1]);
  std::sort(got.begin(), got.end());
  CHECK(got[0] == std::make_pair(-3.0, 9.0));
  CHECK(got[1] == std::make_pair(0.0, 0.0));
  CHECK(got[2] == std::make_pair(5.0, 5.0));

  std::vector<double> data;
  Rng rng(5);
  for (int i = 0; i < 600; ++i) data.push_back(rng.normal());
  auto a = labeler::kmeans_fit(data, 200, 3, 8, 30, 42);
  auto b = labeler::kmeans_fit(data, 200, 3, 8, 30, 42);
  CHECK(a.centers == b.centers);

  CHECK_THROWS_AS(labeler::kmeans_fit(data, 200, 3, 201, 30, 1), InvalidInputError);
}

TEST_CASE("assign_labels nearest neighbor with tie-break") {
  labeler::Codebook cb;
  cb.C = 3;
  cb.D = 1;
  cb.centers = {0.0, 2.0, 4.0};

  labeler::FeatureSequence f;
  f.frames = 3;
  f.dim = 1;
  f.v = {0.0, 1.0, 3.9};  // 1.0 is equidistant to centers 0 and 1
  auto labels = labeler::assign_labels(f, cb);
  CHECK(labels == LabelSequence{0, 0, 2});

  // random frames vs an independent exhaustive nearest-neighbor scan
  Rng rng(9);
  labeler::Codebook cb2;
  cb2.C = 7;
  cb2.D = 5;
  cb2.centers.resize(35);
  for (auto& c : cb2.centers) c = rng.normal();
  labeler::FeatureSequence f2;
  f2.frames = 40;
  f2.dim = 5;
  f2.v.resize(200);
  for (auto& x : f2.v) x = rng.normal();
  auto got = labeler::assign_labels(f2, cb2);
  for (long t = 0; t < f2.frames; ++t) {
    long best = 0;
    double bd = std::numeric_limits<double>::max();
    for (long c = 0; c < cb2.C; ++c) {
      double d = 0;
      for (long k = 0; k < 5; ++k) {
        const double diff = f2.v[t * 5 + k] - cb2.centers[c * 5 + k];
        d += diff * diff;
      }
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    CHECK(got[t] == best);
  }

  labeler::FeatureSequence bad;
  bad.frames = 1;
  bad.dim = 2;
  bad.v = {0, 0};
  CHECK_THROWS_AS(labeler::assign_labels(bad, cb), InvalidInputError);
}

TEST_CASE("make_targets per kind") {
  auto m = corpus::build_corpus(8, 3);
  const long C = 10;

  SECTION("noisy record: z1 = speech labels, z2 = ABSENT") {
    const auto& rec = m.records[1];
    REQUIRE(rec.kind == corpus::MixtureKind::Noisy);
    LabelSequence z = {1, 2, 3, 1};
    auto t = labeler::make_targets(rec, {z}, {0.5}, C);
    CHECK(t.z1 == z);
    CHECK(t.z2 == LabelSequence(4, 10));
    CHECK(t.absent_id == 10);
  }

  SECTION("overlapped record: energy ordering picks z1") {
    const auto& rec = m.records[2];
    REQUIRE(rec.kind == corpus::MixtureKind::Overlapped);
    LabelSequence za = {1, 1}, zb = {2, 2};
    auto t = labeler::make_targets(rec, {za, zb}, {1.0, 2.0}, C);
    CHECK(t.z1 == zb);
    CHECK(t.z2 == za);
    auto t2 = labeler::make_targets(rec, {za, zb}, {2.0, 1.0}, C);
    CHECK(t2.z1 == za);
    CHECK(t2.z2 == zb);
    // equal energies: lower manifest index takes z1
    auto t3 = labeler::make_targets(rec, {za, zb}, {1.0, 1.0}, C);
    CHECK(t3.z1 == za);

    // ordering depends only on energies, not on which physical order we pass:
    // swapping both labels and energies together flips nothing semantically
    auto t4 = labeler::make_targets(rec, {zb, za}, {2.0, 1.0}, C);
    CHECK(t4.z1 == t.z1);
    CHECK(t4.z2 == t.z2);
  }

  SECTION("errors") {
    const auto& rec = m.records[2];
    CHECK_THROWS_AS(labeler::make_targets(rec, {{1}}, {1.0}, C), InvalidInputError);
    CHECK_THROWS_AS(labeler::make_targets(rec, {{1}, {static_cast<uint16_t>(C)}}, {1.0, 1.0}, C),
                    InvalidInputError);
  }
}

TEST_CASE("multi-label invariants over a generated corpus") {
  auto m = corpus::build_corpus(24, 17, 1.0);
  labeler::Codebook cb;
  {
    std::vector<labeler::FeatureSequence> all;
    for (const auto& rec : m.records) {
      auto rz = corpus::realize(rec, m.sample_rate);
      for (const auto& c : rz.components) all.push_back(labeler::extract_features(c));
    }
    cb = labeler::kmeans_fit(all, 12, 25, 5);
  }
  for (const auto& rec : m.records) {
    auto rz = corpus::realize(rec, m.sample_rate);
    std::vector<LabelSequence> ls;
    std::vector<double> es;
    for (const auto& c : rz.components) {
      ls.push_back(labeler::assign_labels(labeler::extract_features(c), cb));
      es.push_back(signal::avg_energy(c));
    }
    auto t = labeler::make_targets(rec, ls, es, cb.C);
    // ABSENT never appears in z1
    for (auto z : t.z1) CHECK(z < cb.C);
    const bool single = rz.components.size() == 1;
    if (single) {
      for (auto z : t.z2) CHECK(z == t.absent_id);
    } else {
      // z1 belongs to the higher-energy component
      const int hi = es[1] > es[0] ? 1 : 0;
      CHECK(t.z1 == ls[hi]);
      CHECK(t.z2 == ls[1 - hi]);
      CHECK(signal::avg_energy(rz.components[hi]) >=
            signal::avg_energy(rz.components[1 - hi]));
    }
  }
}

TEST_CASE("codebook and label file round trips") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "mplssl_labeler_test";
  fs::create_directories(dir);

  labeler::Codebook cb;
  cb.C = 4;
  cb.D = 3;
  Rng rng(2);
  cb.centers.resize(12);
  for (auto& c : cb.centers) c = rng.normal();
  labeler::save_codebook(cb, dir / "cb.bin");
  auto back = labeler::load_codebook(dir / "cb.bin");
  CHECK(back.C == cb.C);
  CHECK(back.D == cb.D);
  CHECK(back.centers == cb.centers);  // bit-exact doubles

  std::vector<LabelSequence> seqs = {{1, 2, 3}, {4, 5}};
  labeler::save_labels(seqs, labeler::label_path(dir, "r000000"));
  CHECK(labeler::load_labels(labeler::label_path(dir, "r000000")) == seqs);

  fs::remove_all(dir);
}
