// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Minimal reverse-mode engine over dense tensors. Eager: each op computes
// its value at build time and records a backward closure on the tape. A node
// carries gradients only if a trainable leaf sits below it, so frozen
// subgraphs (route I backbones, the conv stack in adapter mode) cost nothing
// on the backward pass. Multiply-accumulate counters feed the training-cost
// accounting.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mpl/core.hpp"

namespace mpl::ad {

template <typename T>
struct Tensor {
  std::vector<long> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<long> s) : shape(std::move(s)) {
    long n = 1;
    for (long d : shape) n *= d;
    v.assign(static_cast<size_t>(n), T(0));
  }

  long numel() const { return static_cast<long>(v.size()); }
  long dim(int i) const { return shape[static_cast<size_t>(i)]; }

  static Tensor zeros(std::vector<long> s) { return Tensor(std::move(s)); }
};

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T(0)); }
};

template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, std::vector<long> shape) {
    auto [it, fresh] = m_.try_emplace(name);
    require_config(fresh, "duplicate parameter: " + name);
    it->second.name = name;
    it->second.value = Tensor<T>(shape);
    it->second.grad = Tensor<T>(std::move(shape));
    return it->second;
  }

  Param<T>& at(const std::string& name) {
    auto it = m_.find(name);
    require_config(it != m_.end(), "unknown parameter: " + name);
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = m_.find(name);
    require_config(it != m_.end(), "unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return m_.count(name) > 0; }

  // sorted by name (std::map), which fixes checkpoint blob order
  auto begin() { return m_.begin(); }
  auto end() { return m_.end(); }
  auto begin() const { return m_.begin(); }
  auto end() const { return m_.end(); }
  size_t size() const { return m_.size(); }

  void zero_grads() {
    for (auto& [k, p] : m_) p.zero_grad();
  }

  long total_count() const {
    long n = 0;
    for (const auto& [k, p] : m_) n += p.value.numel();
    return n;
  }

 private:
  std::map<std::string, Param<T>> m_;
};

template <typename T>
class Tape;

template <typename T>
struct Node {
  Tensor<T> own_val;
  const Tensor<T>* pval = nullptr;
  Tensor<T> own_grad;
  Tensor<T>* pgrad = nullptr;  // null until a consumer accumulates
  Param<T>* param = nullptr;
  bool needs = false;  // a trainable leaf sits in this subtree
  std::function<void()> back;

  const Tensor<T>& value() const { return *pval; }
  bool has_grad() const { return pgrad != nullptr; }
  const Tensor<T>& grad() const { return *pgrad; }
};

namespace detail {
template <typename T>
inline T gelu_fwd(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475244)));
}
template <typename T>
inline T gelu_bwd(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014326779);
  return cdf + x * pdf;
}
}  // namespace detail

template <typename T>
class Tape {
 public:
  uint64_t fwd_macs = 0;
  uint64_t bwd_macs = 0;

  Node<T>* constant(Tensor<T> v) {
    auto* n = fresh();
    n->own_val = std::move(v);
    n->pval = &n->own_val;
    return n;
  }

  Node<T>* leaf(Param<T>& p) {
    auto* n = fresh();
    n->pval = &p.value;
    n->param = &p;
    if (p.trainable) {
      n->needs = true;
      n->pgrad = &p.grad;  // accumulate straight into the persistent buffer
    }
    return n;
  }

  // grad buffer of n, allocating on first touch
  Tensor<T>& grad(Node<T>* n) {
    if (!n->pgrad) {
      n->own_grad = Tensor<T>::zeros(n->value().shape);
      n->pgrad = &n->own_grad;
    }
    return *n->pgrad;
  }

  void backward(Node<T>* loss) {
    require_input(loss->value().numel() == 1, "backward: loss must be scalar");
    grad(loss).v[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>* n = it->get();
      if (n->needs && n->back && n->has_grad()) n->back();
    }
  }

  size_t size() const { return nodes_.size(); }

  // ---- elementwise -------------------------------------------------------

  Node<T>* add(Node<T>* a, Node<T>* b) {
    require_input(a->value().shape == b->value().shape, "add: shape mismatch");
    auto* n = computed(a->value().shape, {a, b});
    const long m = n->own_val.numel();
    for (long i = 0; i < m; ++i) n->own_val.v[i] = a->value().v[i] + b->value().v[i];
    if (n->needs)
      n->back = [this, n, a, b] {
        const auto& g = n->grad();
        for (Node<T>* x : {a, b})
          if (x->needs) {
            auto& gx = grad(x);
            for (long i = 0; i < gx.numel(); ++i) gx.v[i] += g.v[i];
          }
      };
    return n;
  }

  Node<T>* scale(Node<T>* a, T k) {
    auto* n = computed(a->value().shape, {a});
    for (long i = 0; i < n->own_val.numel(); ++i) n->own_val.v[i] = k * a->value().v[i];
    if (n->needs)
      n->back = [this, n, a, k] {
        auto& ga = grad(a);
        const auto& g = n->grad();
        for (long i = 0; i < ga.numel(); ++i) ga.v[i] += k * g.v[i];
      };
    return n;
  }

  Node<T>* relu(Node<T>* a) {
    auto* n = computed(a->value().shape, {a});
    for (long i = 0; i < n->own_val.numel(); ++i)
      n->own_val.v[i] = a->value().v[i] > T(0) ? a->value().v[i] : T(0);
    if (n->needs)
      n->back = [this, n, a] {
        auto& ga = grad(a);
        const auto& g = n->grad();
        for (long i = 0; i < ga.numel(); ++i)
          if (a->value().v[i] > T(0)) ga.v[i] += g.v[i];
      };
    return n;
  }

  Node<T>* gelu(Node<T>* a) {
    auto* n = computed(a->value().shape, {a});
    for (long i = 0; i < n->own_val.numel(); ++i)
      n->own_val.v[i] = detail::gelu_fwd(a->value().v[i]);
    fwd_macs += n->own_val.numel();
    if (n->needs)
      n->back = [this, n, a] {
        auto& ga = grad(a);
        const auto& g = n->grad();
        for (long i = 0; i < ga.numel(); ++i) ga.v[i] += detail::gelu_bwd(a->value().v[i]) * g.v[i];
        bwd_macs += ga.numel();
      };
    return n;
  }

  // ---- dense linear algebra ----------------------------------------------

  // X [R, Cin] * W^T [Cin, Cout] + b -> [R, Cout]; W stored [Cout, Cin]
  Node<T>* linear(Node<T>* x, Node<T>* w, Node<T>* b = nullptr) {
    const auto& X = x->value();
    const auto& W = w->value();
    require_input(X.shape.size() == 2 && W.shape.size() == 2 && X.dim(1) == W.dim(1),
                  "linear: shape mismatch");
    if (b) require_input(b->value().numel() == W.dim(0), "linear: bias size mismatch");
    const long R = X.dim(0), Cin = X.dim(1), Cout = W.dim(0);
    auto* n = computed({R, Cout}, {x, w, b});
    for (long r = 0; r < R; ++r) {
      const T* xr = &X.v[r * Cin];
      T* yr = &n->own_val.v[r * Cout];
      for (long o = 0; o < Cout; ++o) {
        const T* wo = &W.v[o * Cin];
        T acc = b ? b->value().v[o] : T(0);
        for (long i = 0; i < Cin; ++i) acc += xr[i] * wo[i];
        yr[o] = acc;
      }
    }
    fwd_macs += static_cast<uint64_t>(R) * Cin * Cout;
    if (n->needs)
      n->back = [this, n, x, w, b, R, Cin, Cout] {
        const auto& G = n->grad();
        if (x->needs) {
          auto& gx = grad(x);
          for (long r = 0; r < R; ++r)
            for (long o = 0; o < Cout; ++o) {
              const T g = G.v[r * Cout + o];
              const T* wo = &w->value().v[o * Cin];
              T* gxr = &gx.v[r * Cin];
              for (long i = 0; i < Cin; ++i) gxr[i] += g * wo[i];
            }
          bwd_macs += static_cast<uint64_t>(R) * Cin * Cout;
        }
        if (w->needs) {
          auto& gw = grad(w);
          for (long r = 0; r < R; ++r)
            for (long o = 0; o < Cout; ++o) {
              const T g = G.v[r * Cout + o];
              const T* xr = &x->value().v[r * Cin];
              T* gwo = &gw.v[o * Cin];
              for (long i = 0; i < Cin; ++i) gwo[i] += g * xr[i];
            }
          bwd_macs += static_cast<uint64_t>(R) * Cin * Cout;
        }
        if (b && b->needs) {
          auto& gb = grad(b);
          for (long r = 0; r < R; ++r)
            for (long o = 0; o < Cout; ++o) gb.v[o] += G.v[r * Cout + o];
          bwd_macs += static_cast<uint64_t>(R) * Cout;
        }
      };
    return n;
  }

  Node<T>* transpose(Node<T>* x) {
    const auto& X = x->value();
    require_input(X.shape.size() == 2, "transpose: need a matrix");
    const long A = X.dim(0), B = X.dim(1);
    auto* n = computed({B, A}, {x});
    for (long a = 0; a < A; ++a)
      for (long b = 0; b < B; ++b) n->own_val.v[b * A + a] = X.v[a * B + b];
    if (n->needs)
      n->back = [this, n, x, A, B] {
        auto& gx = grad(x);
        const auto& g = n->grad();
        for (long a = 0; a < A; ++a)
          for (long b = 0; b < B; ++b) gx.v[a * B + b] += g.v[b * A + a];
      };
    return n;
  }

  // ---- normalization -------------------------------------------------------

  // per-row layer norm over the last dim of [R, C]
  Node<T>* layer_norm(Node<T>* x, Node<T>* gain, Node<T>* bias, T eps = T(1e-5)) {
    const auto& X = x->value();
    require_input(X.shape.size() == 2, "layer_norm: need a matrix");
    const long R = X.dim(0), C = X.dim(1);
    require_input(gain->value().numel() == C && bias->value().numel() == C,
                  "layer_norm: gain/bias size mismatch");
    auto* n = computed({R, C}, {x, gain, bias});
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(R * C));
    auto istd = std::make_shared<std::vector<T>>(static_cast<size_t>(R));
    for (long r = 0; r < R; ++r) {
      const T* xr = &X.v[r * C];
      T mu = 0;
      for (long c = 0; c < C; ++c) mu += xr[c];
      mu /= T(C);
      T var = 0;
      for (long c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
      var /= T(C);
      const T is = T(1) / std::sqrt(var + eps);
      (*istd)[r] = is;
      for (long c = 0; c < C; ++c) {
        const T h = (xr[c] - mu) * is;
        (*xhat)[r * C + c] = h;
        n->own_val.v[r * C + c] = gain->value().v[c] * h + bias->value().v[c];
      }
    }
    fwd_macs += static_cast<uint64_t>(R) * C * 3;
    if (n->needs)
      n->back = [this, n, x, gain, bias, R, C, xhat, istd] {
        const auto& G = n->grad();
        if (gain->needs) {
          auto& gg = grad(gain);
          for (long r = 0; r < R; ++r)
            for (long c = 0; c < C; ++c) gg.v[c] += G.v[r * C + c] * (*xhat)[r * C + c];
        }
        if (bias->needs) {
          auto& gb = grad(bias);
          for (long r = 0; r < R; ++r)
            for (long c = 0; c < C; ++c) gb.v[c] += G.v[r * C + c];
        }
        if (x->needs) {
          auto& gx = grad(x);
          for (long r = 0; r < R; ++r) {
            T sum_g = 0, sum_gh = 0;
            for (long c = 0; c < C; ++c) {
              const T gy = G.v[r * C + c] * gain->value().v[c];
              sum_g += gy;
              sum_gh += gy * (*xhat)[r * C + c];
            }
            for (long c = 0; c < C; ++c) {
              const T gy = G.v[r * C + c] * gain->value().v[c];
              gx.v[r * C + c] +=
                  (*istd)[r] * (gy - sum_g / T(C) - (*xhat)[r * C + c] * sum_gh / T(C));
            }
          }
          bwd_macs += static_cast<uint64_t>(R) * C * 5;
        }
      };
    return n;
  }

  // per-channel normalization of [C, L] over time (group norm, one group per
  // channel); gain/bias indexed by channel
  Node<T>* group_norm_channels(Node<T>* x, Node<T>* gain, Node<T>* bias, T eps = T(1e-5)) {
    const auto& X = x->value();
    require_input(X.shape.size() == 2, "group_norm: need a matrix");
    const long C = X.dim(0), L = X.dim(1);
    require_input(gain->value().numel() == C && bias->value().numel() == C,
                  "group_norm: gain/bias size mismatch");
    auto* n = computed({C, L}, {x, gain, bias});
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(C * L));
    auto istd = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
    for (long c = 0; c < C; ++c) {
      const T* xc = &X.v[c * L];
      T mu = 0;
      for (long i = 0; i < L; ++i) mu += xc[i];
      mu /= T(L);
      T var = 0;
      for (long i = 0; i < L; ++i) var += (xc[i] - mu) * (xc[i] - mu);
      var /= T(L);
      const T is = T(1) / std::sqrt(var + eps);
      (*istd)[c] = is;
      for (long i = 0; i < L; ++i) {
        const T h = (xc[i] - mu) * is;
        (*xhat)[c * L + i] = h;
        n->own_val.v[c * L + i] = gain->value().v[c] * h + bias->value().v[c];
      }
    }
    fwd_macs += static_cast<uint64_t>(C) * L * 3;
    if (n->needs)
      n->back = [this, n, x, gain, bias, C, L, xhat, istd] {
        const auto& G = n->grad();
        if (gain->needs) {
          auto& gg = grad(gain);
          for (long c = 0; c < C; ++c)
            for (long i = 0; i < L; ++i) gg.v[c] += G.v[c * L + i] * (*xhat)[c * L + i];
        }
        if (bias->needs) {
          auto& gb = grad(bias);
          for (long c = 0; c < C; ++c)
            for (long i = 0; i < L; ++i) gb.v[c] += G.v[c * L + i];
        }
        if (x->needs) {
          auto& gx = grad(x);
          for (long c = 0; c < C; ++c) {
            const T gc = gain->value().v[c];
            T sum_g = 0, sum_gh = 0;
            for (long i = 0; i < L; ++i) {
              const T gy = G.v[c * L + i] * gc;
              sum_g += gy;
              sum_gh += gy * (*xhat)[c * L + i];
            }
            for (long i = 0; i < L; ++i) {
              const T gy = G.v[c * L + i] * gc;
              gx.v[c * L + i] +=
                  (*istd)[c] * (gy - sum_g / T(L) - (*xhat)[c * L + i] * sum_gh / T(L));
            }
          }
          bwd_macs += static_cast<uint64_t>(C) * L * 5;
        }
      };
    return n;
  }

  // ---- convolutions --------------------------------------------------------

  // X [Cin, L], W [Cout, Cin, K], valid range with stride, no bias
  Node<T>* conv1d(Node<T>* x, Node<T>* w, long stride) {
    const auto& X = x->value();
    const auto& W = w->value();
    require_input(X.shape.size() == 2 && W.shape.size() == 3 && X.dim(0) == W.dim(1),
                  "conv1d: shape mismatch");
    const long Cin = X.dim(0), L = X.dim(1);
    const long Cout = W.dim(0), K = W.dim(2);
    require_input(L >= K, "conv1d: input shorter than kernel");
    const long Lo = (L - K) / stride + 1;
    auto* n = computed({Cout, Lo}, {x, w});
    for (long o = 0; o < Cout; ++o) {
      T* yo = &n->own_val.v[o * Lo];
      for (long ci = 0; ci < Cin; ++ci) {
        const T* xc = &X.v[ci * L];
        const T* wk = &W.v[(o * Cin + ci) * K];
        for (long k = 0; k < K; ++k) {
          const T wv = wk[k];
          for (long p = 0; p < Lo; ++p) yo[p] += wv * xc[p * stride + k];
        }
      }
    }
    fwd_macs += static_cast<uint64_t>(Cout) * Cin * K * Lo;
    if (n->needs)
      n->back = [this, n, x, w, stride, Cin, L, Cout, K, Lo] {
        const auto& G = n->grad();
        if (x->needs) {
          auto& gx = grad(x);
          for (long o = 0; o < Cout; ++o) {
            const T* go = &G.v[o * Lo];
            for (long ci = 0; ci < Cin; ++ci) {
              T* gxc = &gx.v[ci * L];
              const T* wk = &w->value().v[(o * Cin + ci) * K];
              for (long k = 0; k < K; ++k) {
                const T wv = wk[k];
                for (long p = 0; p < Lo; ++p) gxc[p * stride + k] += wv * go[p];
              }
            }
          }
          bwd_macs += static_cast<uint64_t>(Cout) * Cin * K * Lo;
        }
        if (w->needs) {
          auto& gw = grad(w);
          for (long o = 0; o < Cout; ++o) {
            const T* go = &G.v[o * Lo];
            for (long ci = 0; ci < Cin; ++ci) {
              const T* xc = &x->value().v[ci * L];
              T* gwk = &gw.v[(o * Cin + ci) * K];
              for (long k = 0; k < K; ++k) {
                T acc = 0;
                for (long p = 0; p < Lo; ++p) acc += go[p] * xc[p * stride + k];
                gwk[k] += acc;
              }
            }
          }
          bwd_macs += static_cast<uint64_t>(Cout) * Cin * K * Lo;
        }
      };
    return n;
  }

  // grouped, stride 1, zero-padded to the same length; X [C, L],
  // W [C, C/groups, K], bias [C]
  Node<T>* conv1d_grouped_same(Node<T>* x, Node<T>* w, Node<T>* b, long groups) {
    const auto& X = x->value();
    const auto& W = w->value();
    const long C = X.dim(0), L = X.dim(1);
    const long Cg = W.dim(1), K = W.dim(2);
    require_input(W.dim(0) == C && C % groups == 0 && C / groups == Cg,
                  "grouped conv: shape mismatch");
    require_input(b->value().numel() == C, "grouped conv: bias size mismatch");
    const long pad = K / 2;
    auto* n = computed({C, L}, {x, w, b});
    for (long o = 0; o < C; ++o) {
      const long g0 = (o / (C / groups)) * Cg;
      T* yo = &n->own_val.v[o * L];
      for (long t = 0; t < L; ++t) yo[t] = b->value().v[o];
      for (long cg = 0; cg < Cg; ++cg) {
        const T* xc = &X.v[(g0 + cg) * L];
        const T* wk = &W.v[(o * Cg + cg) * K];
        for (long k = 0; k < K; ++k) {
          const T wv = wk[k];
          const long off = k - pad;
          const long t0 = std::max(0L, -off), t1 = std::min(L, L - off);
          for (long t = t0; t < t1; ++t) yo[t] += wv * xc[t + off];
        }
      }
    }
    fwd_macs += static_cast<uint64_t>(C) * Cg * K * L;
    if (n->needs)
      n->back = [this, n, x, w, b, groups, C, L, Cg, K] {
        const auto& G = n->grad();
        const long pad = K / 2;
        if (b->needs) {
          auto& gb = grad(b);
          for (long o = 0; o < C; ++o)
            for (long t = 0; t < L; ++t) gb.v[o] += G.v[o * L + t];
        }
        for (long o = 0; o < C; ++o) {
          const long g0 = (o / (C / groups)) * Cg;
          const T* go = &G.v[o * L];
          for (long cg = 0; cg < Cg; ++cg) {
            const long ci = g0 + cg;
            for (long k = 0; k < K; ++k) {
              const long off = k - pad;
              const long t0 = std::max(0L, -off), t1 = std::min(L, L - off);
              if (x->needs) {
                T* gxc = &grad(x).v[ci * L];
                const T wv = w->value().v[(o * Cg + cg) * K + k];
                for (long t = t0; t < t1; ++t) gxc[t + off] += wv * go[t];
              }
              if (w->needs) {
                const T* xc = &x->value().v[ci * L];
                T acc = 0;
                for (long t = t0; t < t1; ++t) acc += go[t] * xc[t + off];
                grad(w).v[(o * Cg + cg) * K + k] += acc;
              }
            }
          }
        }
        bwd_macs += static_cast<uint64_t>(C) * Cg * K * L * ((x->needs ? 1 : 0) + (w->needs ? 1 : 0));
      };
    return n;
  }

  // ---- attention -----------------------------------------------------------

  // fused multi-head self-attention over already-projected Q, K, V [T, d]
  Node<T>* mhsa(Node<T>* q, Node<T>* k, Node<T>* v, long n_heads) {
    const auto& Q = q->value();
    require_input(Q.shape == k->value().shape && Q.shape == v->value().shape,
                  "mhsa: q/k/v shape mismatch");
    const long Tn = Q.dim(0), d = Q.dim(1);
    require_input(d % n_heads == 0, "mhsa: heads must divide model dim");
    const long dh = d / n_heads;
    const T inv_sqrt = T(1) / std::sqrt(T(dh));
    auto* n = computed({Tn, d}, {q, k, v});
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(n_heads * Tn * Tn));
    for (long h = 0; h < n_heads; ++h) {
      const long c0 = h * dh;
      T* P = probs->data() + h * Tn * Tn;
      for (long i = 0; i < Tn; ++i) {
        const T* qi = &Q.v[i * d + c0];
        T mx = -std::numeric_limits<T>::max();
        for (long j = 0; j < Tn; ++j) {
          const T* kj = &k->value().v[j * d + c0];
          T acc = 0;
          for (long c = 0; c < dh; ++c) acc += qi[c] * kj[c];
          P[i * Tn + j] = acc * inv_sqrt;
          mx = std::max(mx, P[i * Tn + j]);
        }
        T z = 0;
        for (long j = 0; j < Tn; ++j) {
          P[i * Tn + j] = std::exp(P[i * Tn + j] - mx);
          z += P[i * Tn + j];
        }
        const T iz = T(1) / z;
        for (long j = 0; j < Tn; ++j) P[i * Tn + j] *= iz;
        T* oi = &n->own_val.v[i * d + c0];
        for (long j = 0; j < Tn; ++j) {
          const T p = P[i * Tn + j];
          const T* vj = &v->value().v[j * d + c0];
          for (long c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
    fwd_macs += static_cast<uint64_t>(n_heads) * Tn * Tn * dh * 2;
    if (n->needs)
      n->back = [this, n, q, k, v, n_heads, Tn, d, dh, inv_sqrt, probs] {
        const auto& G = n->grad();
        std::vector<T> dP(static_cast<size_t>(Tn));
        for (long h = 0; h < n_heads; ++h) {
          const long c0 = h * dh;
          const T* P = probs->data() + h * Tn * Tn;
          for (long i = 0; i < Tn; ++i) {
            const T* gi = &G.v[i * d + c0];
            // dP and the softmax jacobian
            T dot = 0;
            for (long j = 0; j < Tn; ++j) {
              const T* vj = &v->value().v[j * d + c0];
              T acc = 0;
              for (long c = 0; c < dh; ++c) acc += gi[c] * vj[c];
              dP[j] = acc;
              dot += acc * P[i * Tn + j];
            }
            for (long j = 0; j < Tn; ++j) {
              const T ds = P[i * Tn + j] * (dP[j] - dot) * inv_sqrt;
              if (q->needs) {
                T* gq = &grad(q).v[i * d + c0];
                const T* kj = &k->value().v[j * d + c0];
                for (long c = 0; c < dh; ++c) gq[c] += ds * kj[c];
              }
              if (k->needs) {
                T* gk = &grad(k).v[j * d + c0];
                const T* qi = &q->value().v[i * d + c0];
                for (long c = 0; c < dh; ++c) gk[c] += ds * qi[c];
              }
              if (v->needs) {
                T* gv = &grad(v).v[j * d + c0];
                const T p = P[i * Tn + j];
                for (long c = 0; c < dh; ++c) gv[c] += p * gi[c];
              }
            }
          }
        }
        bwd_macs += static_cast<uint64_t>(n_heads) * Tn * Tn * dh * 4;
      };
    return n;
  }

  // ---- masking -------------------------------------------------------------

  // rows listed in `rows` are replaced by the (learned) embedding vector
  Node<T>* replace_rows(Node<T>* x, Node<T>* emb, std::vector<long> rows) {
    const auto& X = x->value();
    require_input(X.shape.size() == 2 && emb->value().numel() == X.dim(1),
                  "replace_rows: shape mismatch");
    const long R = X.dim(0), C = X.dim(1);
    for (long r : rows) require_input(r >= 0 && r < R, "replace_rows: row out of range");
    auto* n = computed({R, C}, {x, emb});
    n->own_val.v = X.v;
    auto rows_p = std::make_shared<std::vector<long>>(std::move(rows));
    for (long r : *rows_p)
      for (long c = 0; c < C; ++c) n->own_val.v[r * C + c] = emb->value().v[c];
    if (n->needs)
      n->back = [this, n, x, emb, rows_p, R, C] {
        const auto& G = n->grad();
        std::vector<bool> masked(static_cast<size_t>(R), false);
        for (long r : *rows_p) masked[r] = true;
        if (x->needs) {
          auto& gx = grad(x);
          for (long r = 0; r < R; ++r)
            if (!masked[r])
              for (long c = 0; c < C; ++c) gx.v[r * C + c] += G.v[r * C + c];
        }
        if (emb->needs) {
          auto& ge = grad(emb);
          for (long r : *rows_p)
            for (long c = 0; c < C; ++c) ge.v[c] += G.v[r * C + c];
        }
      };
    return n;
  }

  // ---- cosine similarity head (Eq. style) -----------------------------------

  // rows of U [T, P] against rows of E [C, P]; output [T, C] of cosine
  // similarities, with the zero-vector convention sim = 0
  Node<T>* cosine_rows(Node<T>* u, Node<T>* e) {
    const auto& U = u->value();
    const auto& E = e->value();
    require_input(U.shape.size() == 2 && E.shape.size() == 2 && U.dim(1) == E.dim(1),
                  "cosine_rows: shape mismatch");
    const long Tn = U.dim(0), P = U.dim(1), C = E.dim(0);
    auto* n = computed({Tn, C}, {u, e});
    auto un = std::make_shared<std::vector<T>>(U.v);   // normalized rows
    auto en = std::make_shared<std::vector<T>>(E.v);
    auto unorm = std::make_shared<std::vector<T>>(static_cast<size_t>(Tn));
    auto enorm = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
    auto norm_rows = [](std::vector<T>& m, std::vector<T>& norms, long R, long Pd) {
      for (long r = 0; r < R; ++r) {
        T acc = 0;
        for (long p = 0; p < Pd; ++p) acc += m[r * Pd + p] * m[r * Pd + p];
        const T nr = std::sqrt(acc);
        norms[r] = nr;
        const T inv = nr > T(0) ? T(1) / nr : T(0);
        for (long p = 0; p < Pd; ++p) m[r * Pd + p] *= inv;
      }
    };
    norm_rows(*un, *unorm, Tn, P);
    norm_rows(*en, *enorm, C, P);
    for (long t = 0; t < Tn; ++t)
      for (long c = 0; c < C; ++c) {
        T acc = 0;
        for (long p = 0; p < P; ++p) acc += (*un)[t * P + p] * (*en)[c * P + p];
        n->own_val.v[t * C + c] = acc;
      }
    fwd_macs += static_cast<uint64_t>(Tn) * C * P;
    if (n->needs)
      n->back = [this, n, u, e, Tn, P, C, un, en, unorm, enorm] {
        const auto& G = n->grad();
        const auto& S = n->value();
        if (u->needs) {
          auto& gu = grad(u);
          for (long t = 0; t < Tn; ++t) {
            if ((*unorm)[t] == T(0)) continue;
            T gs_dot = 0;
            std::vector<T> acc(static_cast<size_t>(P), T(0));
            for (long c = 0; c < C; ++c) {
              const T g = G.v[t * C + c];
              if (g == T(0)) continue;
              gs_dot += g * S.v[t * C + c];
              for (long p = 0; p < P; ++p) acc[p] += g * (*en)[c * P + p];
            }
            const T inv = T(1) / (*unorm)[t];
            for (long p = 0; p < P; ++p)
              gu.v[t * P + p] += inv * (acc[p] - gs_dot * (*un)[t * P + p]);
          }
          bwd_macs += static_cast<uint64_t>(Tn) * C * P;
        }
        if (e->needs) {
          auto& ge = grad(e);
          for (long c = 0; c < C; ++c) {
            if ((*enorm)[c] == T(0)) continue;
            T gs_dot = 0;
            std::vector<T> acc(static_cast<size_t>(P), T(0));
            for (long t = 0; t < Tn; ++t) {
              const T g = G.v[t * C + c];
              if (g == T(0)) continue;
              gs_dot += g * S.v[t * C + c];
              for (long p = 0; p < P; ++p) acc[p] += g * (*un)[t * P + p];
            }
            const T inv = T(1) / (*enorm)[c];
            for (long p = 0; p < P; ++p)
              ge.v[c * P + p] += inv * (acc[p] - gs_dot * (*en)[c * P + p]);
          }
          bwd_macs += static_cast<uint64_t>(Tn) * C * P;
        }
      };
    return n;
  }

  // sum over the selected rows of -log softmax(logits * inv_tau)[label]
  Node<T>* ce_rows(Node<T>* s, const std::vector<uint16_t>& labels,
                   const std::vector<long>& rows, T inv_tau) {
    const auto& S = s->value();
    require_input(S.shape.size() == 2, "ce_rows: need a matrix");
    const long C = S.dim(1);
    for (long r : rows) {
      require_input(r >= 0 && r < S.dim(0), "ce_rows: row out of range");
      require_input(r < static_cast<long>(labels.size()) && labels[r] < C,
                    "ce_rows: label id out of range");
    }
    auto* n = computed({1}, {s});
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(rows.size()) * C);
    auto rows_p = std::make_shared<std::vector<long>>(rows);
    auto labels_p = std::make_shared<std::vector<uint16_t>>(labels);
    T total = 0;
    for (size_t ri = 0; ri < rows_p->size(); ++ri) {
      const long r = (*rows_p)[ri];
      const T* sr = &S.v[r * C];
      T mx = -std::numeric_limits<T>::max();
      for (long c = 0; c < C; ++c) mx = std::max(mx, sr[c] * inv_tau);
      T z = 0;
      T* pr = probs->data() + ri * C;
      for (long c = 0; c < C; ++c) {
        pr[c] = std::exp(sr[c] * inv_tau - mx);
        z += pr[c];
      }
      const T iz = T(1) / z;
      for (long c = 0; c < C; ++c) pr[c] *= iz;
      total += -(std::log(pr[(*labels_p)[r]]));
    }
    n->own_val.v[0] = total;
    fwd_macs += static_cast<uint64_t>(rows.size()) * C;
    if (n->needs)
      n->back = [this, n, s, C, probs, rows_p, labels_p, inv_tau] {
        const T g = n->grad().v[0];
        auto& gs = grad(s);
        for (size_t ri = 0; ri < rows_p->size(); ++ri) {
          const long r = (*rows_p)[ri];
          const T* pr = probs->data() + ri * C;
          T* gr = &gs.v[r * C];
          for (long c = 0; c < C; ++c) gr[c] += g * inv_tau * pr[c];
          gr[(*labels_p)[r]] -= g * inv_tau;
        }
        bwd_macs += static_cast<uint64_t>(rows_p->size()) * C;
      };
    return n;
  }

  // ---- probe helpers ---------------------------------------------------------

  // each output row is the concatenation of rows t-w..t+w (zero padded)
  Node<T>* context_window(Node<T>* x, long w) {
    const auto& X = x->value();
    require_input(X.shape.size() == 2, "context_window: need a matrix");
    const long R = X.dim(0), C = X.dim(1), W = 2 * w + 1;
    auto* n = computed({R, W * C}, {x});
    for (long r = 0; r < R; ++r)
      for (long o = -w; o <= w; ++o) {
        const long src = r + o;
        if (src < 0 || src >= R) continue;
        std::copy_n(&X.v[src * C], C, &n->own_val.v[r * W * C + (o + w) * C]);
      }
    if (n->needs)
      n->back = [this, n, x, R, C, w, W] {
        auto& gx = grad(x);
        const auto& G = n->grad();
        for (long r = 0; r < R; ++r)
          for (long o = -w; o <= w; ++o) {
            const long src = r + o;
            if (src < 0 || src >= R) continue;
            const T* gr = &G.v[r * W * C + (o + w) * C];
            T* gxr = &gx.v[src * C];
            for (long c = 0; c < C; ++c) gxr[c] += gr[c];
          }
      };
    return n;
  }

  Node<T>* softmax_vec(Node<T>* x) {
    const auto& X = x->value();
    const long N = X.numel();
    auto* n = computed(X.shape, {x});
    T mx = -std::numeric_limits<T>::max();
    for (long i = 0; i < N; ++i) mx = std::max(mx, X.v[i]);
    T z = 0;
    for (long i = 0; i < N; ++i) {
      n->own_val.v[i] = std::exp(X.v[i] - mx);
      z += n->own_val.v[i];
    }
    for (long i = 0; i < N; ++i) n->own_val.v[i] /= z;
    if (n->needs)
      n->back = [this, n, x, N] {
        const auto& G = n->grad();
        const auto& P = n->value();
        T dot = 0;
        for (long i = 0; i < N; ++i) dot += G.v[i] * P.v[i];
        auto& gx = grad(x);
        for (long i = 0; i < N; ++i) gx.v[i] += P.v[i] * (G.v[i] - dot);
      };
    return n;
  }

  // sum_l coeff[l] * layers[l] over constant layer matrices
  Node<T>* lincomb(const std::vector<const Tensor<T>*>& layers, Node<T>* coeff) {
    require_input(!layers.empty(), "lincomb: no layers");
    require_input(coeff->value().numel() == static_cast<long>(layers.size()),
                  "lincomb: weight count does not match layer count");
    for (const auto* l : layers)
      require_input(l->shape == layers[0]->shape, "lincomb: layer shape mismatch");
    auto* n = computed(layers[0]->shape, {coeff});
    const long m = n->own_val.numel();
    for (size_t l = 0; l < layers.size(); ++l) {
      const T c = coeff->value().v[l];
      for (long i = 0; i < m; ++i) n->own_val.v[i] += c * layers[l]->v[i];
    }
    fwd_macs += static_cast<uint64_t>(m) * layers.size();
    if (n->needs) {
      auto layers_p = std::make_shared<std::vector<const Tensor<T>*>>(layers);
      n->back = [this, n, coeff, layers_p, m] {
        const auto& G = n->grad();
        auto& gc = grad(coeff);
        for (size_t l = 0; l < layers_p->size(); ++l) {
          T acc = 0;
          for (long i = 0; i < m; ++i) acc += G.v[i] * (*layers_p)[l]->v[i];
          gc.v[l] += acc;
        }
        bwd_macs += static_cast<uint64_t>(m) * layers_p->size();
      };
    }
    return n;
  }

  // mean squared error against a constant reference
  Node<T>* mse(Node<T>* x, Tensor<T> ref) {
    require_input(x->value().shape == ref.shape, "mse: shape mismatch");
    const long m = ref.numel();
    auto* n = computed({1}, {x});
    auto ref_p = std::make_shared<Tensor<T>>(std::move(ref));
    T acc = 0;
    for (long i = 0; i < m; ++i) {
      const T d = x->value().v[i] - ref_p->v[i];
      acc += d * d;
    }
    n->own_val.v[0] = acc / T(m);
    fwd_macs += static_cast<uint64_t>(m);
    if (n->needs)
      n->back = [this, n, x, ref_p, m] {
        const T g = n->grad().v[0] * T(2) / T(m);
        auto& gx = grad(x);
        for (long i = 0; i < m; ++i) gx.v[i] += g * (x->value().v[i] - ref_p->v[i]);
        bwd_macs += static_cast<uint64_t>(m);
      };
    return n;
  }

 private:
  Node<T>* fresh() {
    nodes_.push_back(std::make_unique<Node<T>>());
    return nodes_.back().get();
  }

  Node<T>* computed(std::vector<long> shape, std::initializer_list<Node<T>*> inputs) {
    auto* n = fresh();
    n->own_val = Tensor<T>(std::move(shape));
    n->pval = &n->own_val;
    for (Node<T>* in : inputs)
      if (in && in->needs) n->needs = true;
    return n;
  }

  std::vector<std::unique_ptr<Node<T>>> nodes_;
};

}  // namespace mpl::ad
