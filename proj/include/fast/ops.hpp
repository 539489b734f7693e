#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fast/tensor.hpp"

// Differentiable tensor operations. Every op records a backward closure when
// grad mode is on and at least one input requires a gradient.
namespace fast::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
/// Adds a 1xn row to every row of a.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// a times a 1x1 tensor.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
Tensor reciprocal(const Tensor& a);
Tensor abs(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
/// Per-row normalisation to zero mean / unit variance, then gain and bias (1xn each).
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
/// Row lookup; backward scatter-adds into the table.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
/// Row-major reinterpretation with the same element count.
Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols);

/// Row-wise cosine similarity, shape mx1. A zero-norm row yields 0.
Tensor cosine_rows(const Tensor& a, const Tensor& b);

/// Elementwise KL(Bernoulli(p) || Bernoulli(q)); p and q are clamped into
/// [eps, 1 - eps] with eps = 1e-6.
Tensor bernoulli_kl(const Tensor& p, const Tensor& q);
double bernoulli_kl(double p, double q);

/// Mean over rows of -log softmax(logits)[target]. With smoothing > 0 the
/// target distribution puts (1 - smoothing) on the target and spreads the
/// rest uniformly over the vocabulary.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets, double smoothing = 0.0);

Tensor mse(const Tensor& a, const Tensor& b);

/// Integrate-and-fire contribution matrix (units x t) for an alpha column
/// (t x 1). Entry (j, i) is the overlap of frame i's cumulative weight
/// interval [S_{i-1}, S_i] with unit j's interval [j*beta, (j+1)*beta].
Tensor cif_weights(const Tensor& alpha, double beta, std::size_t units);

}  // namespace fast::ops
