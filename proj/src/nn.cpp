#include "fast/nn.hpp"

#include <cmath>
#include <vector>

namespace fast::nn {

using namespace fast::ops;

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (auto& x : w) x = rng.uniform(-limit, limit);
  weight = Tensor::from(in, out, std::move(w), true);
  bias = Tensor::zeros(1, out, true);
}

Tensor Linear::operator()(const Tensor& x) const { return add_row(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t dim)
    : gain(Tensor::from(1, dim, std::vector<double>(dim, 1.0), true)), bias(Tensor::zeros(1, dim, true)) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm_rows(x, gain, bias); }

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t n_heads, Rng& rng)
    : heads(n_heads), q(dim, dim, rng), k(dim, dim, rng), v(dim, dim, rng), o(dim, dim, rng) {
  if (dim % n_heads != 0) throw ContractError("attention: dim not divisible by heads");
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys_values, const Tensor* mask) const {
  const std::size_t dim = queries.cols();
  const std::size_t dk = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor Q = q(queries), K = k(keys_values), V = v(keys_values);
  std::vector<Tensor> ctx;
  ctx.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(Q, h * dk, (h + 1) * dk);
    Tensor kh = slice_cols(K, h * dk, (h + 1) * dk);
    Tensor vh = slice_cols(V, h * dk, (h + 1) * dk);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    if (mask) scores = add(scores, *mask);
    ctx.push_back(matmul(softmax_rows(scores), vh));
  }
  return o(heads == 1 ? ctx.front() : concat_cols(ctx));
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
  o.collect(prefix + ".o", out);
}

FeedForward::FeedForward(std::size_t dim, std::size_t hidden, Rng& rng) : up(dim, hidden, rng), down(hidden, dim, rng) {}

Tensor FeedForward::operator()(const Tensor& x) const { return down(gelu(up(x))); }

void FeedForward::collect(const std::string& prefix, ParamList& out) const {
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
}

EncoderLayer::EncoderLayer(std::size_t dim, std::size_t heads, std::size_t ff_hidden, Rng& rng)
    : norm1(dim), norm2(dim), attn(dim, heads, rng), ff(dim, ff_hidden, rng) {}

Tensor EncoderLayer::operator()(const Tensor& x) const {
  Tensor n1 = norm1(x);
  Tensor h = add(x, attn(n1, n1));
  return add(h, ff(norm2(h)));
}

void EncoderLayer::collect(const std::string& prefix, ParamList& out) const {
  norm1.collect(prefix + ".norm1", out);
  attn.collect(prefix + ".attn", out);
  norm2.collect(prefix + ".norm2", out);
  ff.collect(prefix + ".ff", out);
}

DecoderLayer::DecoderLayer(std::size_t dim, std::size_t heads, std::size_t ff_hidden, Rng& rng)
    : norm1(dim), norm2(dim), norm3(dim), self_attn(dim, heads, rng), cross_attn(dim, heads, rng), ff(dim, ff_hidden, rng) {}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& memory, const Tensor& mask) const {
  Tensor n1 = norm1(x);
  Tensor h = add(x, self_attn(n1, n1, &mask));
  h = add(h, cross_attn(norm2(h), memory));
  return add(h, ff(norm3(h)));
}

void DecoderLayer::collect(const std::string& prefix, ParamList& out) const {
  norm1.collect(prefix + ".norm1", out);
  self_attn.collect(prefix + ".self_attn", out);
  norm2.collect(prefix + ".norm2", out);
  cross_attn.collect(prefix + ".cross_attn", out);
  norm3.collect(prefix + ".norm3", out);
  ff.collect(prefix + ".ff", out);
}

Tensor sinusoidal_positions(std::size_t n, std::size_t dim, std::size_t offset) {
  std::vector<double> pe(n * dim);
  for (std::size_t p = 0; p < n; ++p) {
    const double pos = static_cast<double>(p + offset);
    for (std::size_t i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      pe[p * dim + i] = std::sin(pos * freq);
      if (i + 1 < dim) pe[p * dim + i + 1] = std::cos(pos * freq);
    }
  }
  return Tensor::from(n, dim, std::move(pe));
}

Tensor causal_mask(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -1e9;
  return Tensor::from(n, n, std::move(m));
}

}  // namespace fast::nn
