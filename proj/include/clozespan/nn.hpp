#pragma once

// Network building blocks on top of the tensor core. Layers own their
// parameters and register them into flat name -> tensor lists.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "clozespan/optim.hpp"
#include "clozespan/rng.hpp"
#include "clozespan/tensor.hpp"

namespace clozespan {

namespace nn {

template <typename Real>
Tensor<Real> glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  std::vector<Real> v(fan_in * fan_out);
  for (Real& x : v) x = static_cast<Real>(rng.next_normal() * std_dev);
  return Tensor<Real>::from(Shape{fan_in, fan_out}, std::move(v), true);
}

template <typename Real>
struct Linear {
  Tensor<Real> weight, bias;

  Linear() = default;
  Linear(Rng& rng, std::size_t in, std::size_t out, bool zero_init = false)
      : weight(zero_init ? Tensor<Real>::zeros(Shape{in, out}, true)
                         : glorot<Real>(rng, in, out)),
        bias(Tensor<Real>::zeros(Shape{out}, true)) {}

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    return add(matmul(x, weight), bias);
  }

  void collect(const std::string& prefix, NamedParams<Real>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename Real>
struct LayerNorm {
  Tensor<Real> gain, bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim)
      : gain(Tensor<Real>::full(Shape{dim}, Real(1), true)),
        bias(Tensor<Real>::zeros(Shape{dim}, true)) {}

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    return layer_norm(x, gain, bias);
  }

  void collect(const std::string& prefix, NamedParams<Real>& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
  }
};

// Scaled dot-product attention with per-head projection width head_dim.
// Queries come from `query`; keys and values from `memory` (the same tensor
// for self-attention).
template <typename Real>
struct MultiHeadAttention {
  std::size_t num_heads = 0, head_dim = 0;
  Linear<Real> q, k, v, out;

  MultiHeadAttention() = default;
  MultiHeadAttention(Rng& rng, std::size_t query_dim, std::size_t memory_dim,
                     std::size_t heads, std::size_t head_width, std::size_t out_dim)
      : num_heads(heads),
        head_dim(head_width),
        q(rng, query_dim, heads * head_width),
        k(rng, memory_dim, heads * head_width),
        v(rng, memory_dim, heads * head_width),
        out(rng, heads * head_width, out_dim) {}

  Tensor<Real> operator()(const Tensor<Real>& query, const Tensor<Real>& memory) const {
    const Tensor<Real> qp = q(query), kp = k(memory), vp = v(memory);
    const Real scale = Real(1.0 / std::sqrt(static_cast<double>(head_dim)));
    std::vector<Tensor<Real>> heads;
    heads.reserve(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) {
      const std::size_t b = h * head_dim, e = (h + 1) * head_dim;
      Tensor<Real> qh = slice_cols(qp, b, e);
      Tensor<Real> kh = slice_cols(kp, b, e);
      Tensor<Real> vh = slice_cols(vp, b, e);
      Tensor<Real> scores = mul_scalar(matmul(qh, transpose(kh)), scale);
      heads.push_back(matmul(softmax(scores), vh));
    }
    return out(num_heads == 1 ? heads[0] : concat_cols(heads));
  }

  void collect(const std::string& prefix, NamedParams<Real>& out_params) const {
    q.collect(prefix + ".q", out_params);
    k.collect(prefix + ".k", out_params);
    v.collect(prefix + ".v", out_params);
    out.collect(prefix + ".out", out_params);
  }
};

template <typename Real>
struct FeedForward {
  Linear<Real> lin1, lin2;

  FeedForward() = default;
  FeedForward(Rng& rng, std::size_t dim, std::size_t hidden)
      : lin1(rng, dim, hidden), lin2(rng, hidden, dim) {}

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    return lin2(gelu_fast(lin1(x)));
  }

  void collect(const std::string& prefix, NamedParams<Real>& out) const {
    lin1.collect(prefix + ".lin1", out);
    lin2.collect(prefix + ".lin2", out);
  }
};

// Pre-norm transformer encoder block.
template <typename Real>
struct EncoderBlock {
  LayerNorm<Real> ln1, ln2;
  MultiHeadAttention<Real> attn;
  FeedForward<Real> ffn;

  EncoderBlock() = default;
  EncoderBlock(Rng& rng, std::size_t dim, std::size_t ffn_dim, std::size_t heads)
      : ln1(dim),
        ln2(dim),
        attn(rng, dim, dim, heads, dim / heads, dim),
        ffn(rng, dim, ffn_dim) {}

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    Tensor<Real> h = ln1(x);
    Tensor<Real> y = add(x, attn(h, h));
    return add(y, ffn(ln2(y)));
  }

  void collect(const std::string& prefix, NamedParams<Real>& out) const {
    ln1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    ln2.collect(prefix + ".ln2", out);
    ffn.collect(prefix + ".ffn", out);
  }
};

// Decoder block: self-attention over the input stream, attention over the
// projected template representations, then a feed-forward layer.
template <typename Real>
struct DecoderBlock {
  LayerNorm<Real> ln_self, ln_cross, ln_ffn;
  MultiHeadAttention<Real> self_attn, cross_attn;
  FeedForward<Real> ffn;

  DecoderBlock() = default;
  DecoderBlock(Rng& rng, std::size_t dim, std::size_t ffn_dim, std::size_t heads,
               std::size_t head_width)
      : ln_self(dim),
        ln_cross(dim),
        ln_ffn(dim),
        self_attn(rng, dim, dim, heads, head_width, dim),
        cross_attn(rng, dim, dim, heads, head_width, dim),
        ffn(rng, dim, ffn_dim) {}

  Tensor<Real> operator()(const Tensor<Real>& x, const Tensor<Real>& memory) const {
    Tensor<Real> h = ln_self(x);
    Tensor<Real> y = add(x, self_attn(h, h));
    y = add(y, cross_attn(ln_cross(y), memory));
    return add(y, ffn(ln_ffn(y)));
  }

  void collect(const std::string& prefix, NamedParams<Real>& out) const {
    ln_self.collect(prefix + ".ln_self", out);
    self_attn.collect(prefix + ".self_attn", out);
    ln_cross.collect(prefix + ".ln_cross", out);
    cross_attn.collect(prefix + ".cross_attn", out);
    ln_ffn.collect(prefix + ".ln_ffn", out);
    ffn.collect(prefix + ".ffn", out);
  }
};

// Single-hidden-layer FFN projecting encoder output down to the decoder width.
template <typename Real>
struct ProjectionFfn {
  Linear<Real> lin1, lin2;

  ProjectionFfn() = default;
  ProjectionFfn(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out)
      : lin1(rng, in, hidden), lin2(rng, hidden, out) {}

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    return lin2(gelu_fast(lin1(x)));
  }

  void collect(const std::string& prefix, NamedParams<Real>& out) const {
    lin1.collect(prefix + ".lin1", out);
    lin2.collect(prefix + ".lin2", out);
  }
};

// Residual layer for extra context features: computes a term to add to the
// encoder output, given the encoding and the features. The output layer is
// zero-initialized so a freshly added layer leaves the encoding unchanged.
template <typename Real>
struct ResidualFeatureLayer {
  std::size_t feature_dim = 0;
  Linear<Real> lin1, lin2;

  ResidualFeatureLayer() = default;
  ResidualFeatureLayer(Rng& rng, std::size_t enc_dim, std::size_t feat_dim,
                       std::size_t hidden)
      : feature_dim(feat_dim),
        lin1(rng, enc_dim + feat_dim, hidden),
        lin2(rng, hidden, enc_dim, /*zero_init=*/true) {}

  Tensor<Real> operator()(const Tensor<Real>& encoding,
                          const Tensor<Real>& features) const {
    Tensor<Real> joint = concat_cols(std::vector<Tensor<Real>>{encoding, features});
    return add(encoding, lin2(gelu_fast(lin1(joint))));
  }

  void collect(const std::string& prefix, NamedParams<Real>& out) const {
    lin1.collect(prefix + ".lin1", out);
    lin2.collect(prefix + ".lin2", out);
  }
};

}  // namespace nn

}  // namespace clozespan
