// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mpl/autodiff.hpp"
#include "mpl/rng.hpp"

namespace mpl::ad {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  long worst_index = -1;
  long checked = 0;
};

// Compares the tape gradient of a scalar loss against central finite
// differences, element by element (optionally subsampled for big tensors).
// `build` must construct the loss from the current parameter values.
inline GradCheckResult check_gradients(
    ParamStore<double>& ps,
    const std::function<Node<double>*(Tape<double>&)>& build,
    double eps = 1e-5, long max_elems_per_tensor = 0, uint64_t seed = 0) {
  ps.zero_grads();
  {
    Tape<double> tape;
    Node<double>* loss = build(tape);
    tape.backward(loss);
  }

  auto eval = [&]() {
    Tape<double> tape;
    return build(tape)->value().v[0];
  };

  GradCheckResult res;
  Rng rng(hash64(seed, 0xfd));
  for (auto& [name, p] : ps) {
    if (!p.trainable) continue;
    const long n = p.value.numel();
    std::vector<long> idx;
    if (max_elems_per_tensor > 0 && n > max_elems_per_tensor) {
      for (long k = 0; k < max_elems_per_tensor; ++k)
        idx.push_back(static_cast<long>(rng.below(static_cast<uint64_t>(n))));
      std::sort(idx.begin(), idx.end());
      idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    } else {
      idx.resize(static_cast<size_t>(n));
      for (long k = 0; k < n; ++k) idx[k] = k;
    }
    for (long i : idx) {
      const double keep = p.value.v[i];
      p.value.v[i] = keep + eps;
      const double lp = eval();
      p.value.v[i] = keep - eps;
      const double lm = eval();
      p.value.v[i] = keep;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double analytic = p.grad.v[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
      const double rel = std::abs(numeric - analytic) / denom;
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_tensor = name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

inline void fill_normal(Tensor<double>& t, Rng& rng, double scale = 1.0) {
  for (auto& x : t.v) x = scale * rng.normal();
}

}  // namespace mpl::ad
