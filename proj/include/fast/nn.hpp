#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "fast/ops.hpp"
#include "fast/params.hpp"
#include "fast/rng.hpp"

// Transformer building blocks shared by the acoustic encoder, the semantic
// encoder and the decoder. All layers are pre-norm.
namespace fast::nn {

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  Tensor weight;  // in x out
  Tensor bias;    // 1 x out
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  Tensor gain;
  Tensor bias;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng);

  /// `mask`, when given, is an additive (queries x keys) constant.
  Tensor operator()(const Tensor& queries, const Tensor& keys_values, const Tensor* mask = nullptr) const;
  void collect(const std::string& prefix, ParamList& out) const;

  std::size_t heads = 1;
  Linear q, k, v, o;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t dim, std::size_t hidden, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  Linear up, down;
};

class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(std::size_t dim, std::size_t heads, std::size_t ff_hidden, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  LayerNorm norm1, norm2;
  MultiHeadAttention attn;
  FeedForward ff;
};

class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(std::size_t dim, std::size_t heads, std::size_t ff_hidden, Rng& rng);

  Tensor operator()(const Tensor& x, const Tensor& memory, const Tensor& causal_mask) const;
  void collect(const std::string& prefix, ParamList& out) const;

  LayerNorm norm1, norm2, norm3;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ff;
};

/// Sinusoidal position table for positions [offset, offset + n).
Tensor sinusoidal_positions(std::size_t n, std::size_t dim, std::size_t offset = 0);

/// Additive causal mask (n x n): 0 on and below the diagonal, -1e9 above.
Tensor causal_mask(std::size_t n);

}  // namespace fast::nn
