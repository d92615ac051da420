#pragma once

#include "domlm/tensor.hpp"

#include <span>
#include <vector>

// Differentiable operations over Tensor. Everything the encoder and the
// losses need is composed from this fixed set.
namespace domlm {

/// [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise sum. `b` may also be a rank-1 bias matching a's last axis.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_last(std::span<const Tensor> parts);

/// Row gather: out[i] = table[ids[i]]. Gradient scatters back into table.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

/// Softmax over the last axis, max-shifted.
Tensor softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

/// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);

/// Pairwise cosine similarity of rows: [m x d], [n x d] -> [m x n].
/// Row norms below 1e-8 are clamped; `degenerate` reports whether that happened.
Tensor cosine_similarity(const Tensor& x, const Tensor& y, bool* degenerate = nullptr);

// Compositions.
inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }
inline Tensor square(const Tensor& a) { return mul(a, a); }
/// Stacks matrices with equal column counts.
Tensor concat_rows(std::span<const Tensor> parts);

}  // namespace domlm
