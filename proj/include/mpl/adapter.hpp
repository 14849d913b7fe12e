// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <map>
#include <string>

#include "mpl/model.hpp"

namespace mpl::adapter {

// authoritative per-tensor trainable map
using FreezeLedger = std::map<std::string, bool>;

template <typename T>
FreezeLedger full_ledger(const model::SslModel<T>& m) {
  FreezeLedger lg;
  for (const auto& [name, p] : m.params) lg[name] = true;
  return lg;
}

// Inserts bottleneck adapters (private LN -> down FC -> ReLU -> up FC,
// residual) after the MHSA and FFN sub-blocks of every layer. The up
// projection starts at exact zero, so route II equals route I at init.
template <typename T>
void insert_adapters(model::SslModel<T>& m, const model::AdapterConfig& cfg, uint64_t seed) {
  m.add_adapters(cfg, seed);  // throws ConfigError on double insertion
}

// Freezes everything except the adapters (with their private LNs) and the
// two prediction heads. Applies the flags to the store and returns the map.
template <typename T>
FreezeLedger freeze_backbone(model::SslModel<T>& m) {
  require_config(m.adapters.has_value(), "freeze_backbone: no adapters inserted");
  FreezeLedger lg;
  for (auto& [name, p] : m.params) {
    p.trainable = model::adapter_mode_trainable(name);
    lg[name] = p.trainable;
  }
  return lg;
}

// Applies a stored ledger; every model tensor must appear exactly once.
template <typename T>
void apply_ledger(model::SslModel<T>& m, const FreezeLedger& lg) {
  require_config(lg.size() == m.params.size(), "ledger: tensor set mismatch");
  for (auto& [name, p] : m.params) {
    auto it = lg.find(name);
    require_config(it != lg.end(), "ledger: missing tensor " + name);
    p.trainable = it->second;
  }
}

template <typename T>
long long trainable_count(const model::SslModel<T>& m) {
  long long n = 0;
  for (const auto& [name, p] : m.params)
    if (p.trainable) n += p.value.numel();
  return n;
}

}  // namespace mpl::adapter
