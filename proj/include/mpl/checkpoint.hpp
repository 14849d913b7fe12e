// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "mpl/adapter.hpp"
#include "mpl/io.hpp"
#include "mpl/model.hpp"

namespace mpl::ckpt {

constexpr char kMagic[8] = {'M', 'P', 'L', 'C', 'K', 'P', 'T', '1'};

// JSON header (configs, ledger, rng, step) + named float32 tensor blob in
// sorted-name order. Optimizer moments ride along as "adam.m."/"adam.v."
// prefixed tensors.
struct CheckpointData {
  int schema_version = 1;
  model::ModelConfig cfg;
  std::optional<model::AdapterConfig> adapters;
  adapter::FreezeLedger ledger;
  uint64_t rng_state = 0;
  long step = 0;
  std::string mode = "full";
  std::map<std::string, ad::Tensor<float>> tensors;
};

inline void save_checkpoint(const CheckpointData& c, const std::filesystem::path& path) {
  nlohmann::json hdr;
  hdr["schema_version"] = c.schema_version;
  hdr["model"] = c.cfg;
  hdr["adapter"] = c.adapters ? nlohmann::json(*c.adapters) : nlohmann::json();
  hdr["ledger"] = c.ledger;
  char rng_hex[19];
  std::snprintf(rng_hex, sizeof(rng_hex), "0x%016llx",
                static_cast<unsigned long long>(c.rng_state));
  hdr["rng_state"] = rng_hex;
  hdr["step"] = c.step;
  hdr["mode"] = c.mode;
  const std::string js = hdr.dump();

  auto os = io::open_out(path);
  os.write(kMagic, 8);
  io::write_pod<uint64_t>(os, js.size());
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  io::write_pod<uint64_t>(os, c.tensors.size());
  for (const auto& [name, t] : c.tensors) {  // std::map: sorted by name
    io::write_string(os, name);
    io::write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
    for (long d : t.shape) io::write_pod<uint64_t>(os, static_cast<uint64_t>(d));
    io::write_array(os, t.v);
  }
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  char magic[8];
  is.read(magic, 8);
  require_input(is && std::memcmp(magic, kMagic, 8) == 0, "checkpoint: bad magic");
  const uint64_t js_len = io::read_pod<uint64_t>(is);
  std::string js(js_len, '\0');
  is.read(js.data(), static_cast<std::streamsize>(js_len));
  require_input(static_cast<bool>(is), "checkpoint: truncated header");
  auto hdr = nlohmann::json::parse(js);

  CheckpointData c;
  c.schema_version = hdr.at("schema_version").get<int>();
  require_input(c.schema_version == 1, "checkpoint: unsupported schema version");
  c.cfg = hdr.at("model").get<model::ModelConfig>();
  if (!hdr.at("adapter").is_null())
    c.adapters = hdr["adapter"].get<model::AdapterConfig>();
  c.ledger = hdr.at("ledger").get<adapter::FreezeLedger>();
  c.rng_state = std::stoull(hdr.at("rng_state").get<std::string>(), nullptr, 16);
  c.step = hdr.at("step").get<long>();
  c.mode = hdr.value("mode", "full");

  const uint64_t n = io::read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < n; ++i) {
    const std::string name = io::read_string(is);
    const uint32_t ndim = io::read_pod<uint32_t>(is);
    std::vector<long> shape(ndim);
    for (auto& d : shape) d = static_cast<long>(io::read_pod<uint64_t>(is));
    ad::Tensor<float> t(shape);
    io::read_array(is, t.v);
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

template <typename T>
ad::Tensor<float> to_f32(const ad::Tensor<T>& t) {
  ad::Tensor<float> out(t.shape);
  for (long i = 0; i < t.numel(); ++i) out.v[i] = static_cast<float>(t.v[i]);
  return out;
}

template <typename T>
void from_f32(const ad::Tensor<float>& src, ad::Tensor<T>& dst) {
  require_input(src.shape == dst.shape, "checkpoint: tensor shape mismatch");
  for (long i = 0; i < src.numel(); ++i) dst.v[i] = static_cast<T>(src.v[i]);
}

}  // namespace mpl::ckpt
