#pragma once

#include <numeric>

#include "lrm/params.hpp"
#include "lrm/tensor.hpp"

namespace lrm {

// Small composition helpers shared by the encoder and decoder. These are thin
// wrappers over tensor ops; parameters are bound leaves owned elsewhere.

template <typename S>
struct Linear {
  Tensor<S> w;  // [in, out]
  Tensor<S> b;  // optional (undefined => bias-free)
  Tensor<S> operator()(const Tensor<S>& x) const {
    Tensor<S> y = matmul(x, w);
    return b.defined() ? add(y, b) : y;
  }
};

template <typename S>
struct LayerNormP {
  Tensor<S> w, b;
  Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, w, b, S(1e-5)); }
};

template <typename S>
struct GeluMlp {
  Linear<S> fc1, fc2;
  Tensor<S> operator()(const Tensor<S>& x) const { return fc2(gelu(fc1(x))); }
};

inline std::vector<int64_t> col_range(int64_t c0, int64_t c1) {
  std::vector<int64_t> cols(static_cast<size_t>(c1 - c0));
  std::iota(cols.begin(), cols.end(), c0);
  return cols;
}

// Multi-head scaled dot-product attention, bias-free projections.
// q_in [M, d_q]; kv_in [N, d_kv]; output [M, d_q].
template <typename S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;  // all bias-free
  int heads = 1;

  Tensor<S> operator()(const Tensor<S>& q_in, const Tensor<S>& kv_in) const {
    const Tensor<S> q = wq(q_in), k = wk(kv_in), v = wv(kv_in);
    const int64_t d = q.dim(1);
    LRM_REQUIRE(d % heads == 0, "attention dim ", d, " not divisible by ", heads, " heads");
    const int64_t dh = d / heads;
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
    std::vector<Tensor<S>> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const auto cols = col_range(h * dh, (h + 1) * dh);
      const Tensor<S> qh = select_cols(q, cols);
      const Tensor<S> kh = select_cols(k, cols);
      const Tensor<S> vh = select_cols(v, cols);
      const Tensor<S> attn = softmax(scale(matmul(qh, kh, false, true), inv_sqrt));
      outs.push_back(matmul(attn, vh));
    }
    return wo(concat_cols(outs));
  }
};

// ---- binding helpers (names follow the checkpoint manifest contract) ----

template <typename S>
Linear<S> bind_linear(const BoundParams<S>& p, const std::string& prefix, bool with_bias = true) {
  Linear<S> l;
  l.w = p.at(prefix + ".weight");
  if (with_bias) l.b = p.at(prefix + ".bias");
  return l;
}

template <typename S>
LayerNormP<S> bind_ln(const BoundParams<S>& p, const std::string& prefix) {
  return {p.at(prefix + ".weight"), p.at(prefix + ".bias")};
}

template <typename S>
GeluMlp<S> bind_gelu_mlp(const BoundParams<S>& p, const std::string& prefix) {
  return {bind_linear(p, prefix + ".fc1"), bind_linear(p, prefix + ".fc2")};
}

template <typename S>
MultiHeadAttention<S> bind_attention(const BoundParams<S>& p, const std::string& prefix,
                                     int heads) {
  MultiHeadAttention<S> a;
  a.wq = bind_linear(p, prefix + ".wq", false);
  a.wk = bind_linear(p, prefix + ".wk", false);
  a.wv = bind_linear(p, prefix + ".wv", false);
  a.wo = bind_linear(p, prefix + ".wo", false);
  a.heads = heads;
  return a;
}

// define-side counterparts
void define_linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out,
                   Rng& rng, bool with_bias = true, float std = 0.02f);
void define_ln(ParamStore& store, const std::string& prefix, int64_t d);
void define_attention(ParamStore& store, const std::string& prefix, int64_t d_q, int64_t d_kv,
                      Rng& rng);

}  // namespace lrm
