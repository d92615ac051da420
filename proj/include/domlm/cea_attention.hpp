#pragma once

#include "domlm/tensor.hpp"

#include <utility>

// Cross-attention baseline for entity alignment: each side is reconstructed
// from the other through attention, and a triplet hinge separates associated
// pairs from a sampled negative.
namespace domlm {

struct CrossAttention {
  Tensor alpha;  // n x m, softmax over b for each a_i
  Tensor beta;   // m x n, softmax over a for each b_j
};

struct CrossAttentionOptions {
  /// Raw dot products by default; divide by sqrt(dim) when set.
  bool scaled = false;
};

/// a: [n x dim], b: [m x dim].
CrossAttention cross_attention(const Tensor& a, const Tensor& b, const CrossAttentionOptions& options = {});

/// a'_i = sum_j alpha_ij b_j and b'_j = sum_i beta_ji a_i.
std::pair<Tensor, Tensor> reconstruct(const CrossAttention& attention, const Tensor& a, const Tensor& b);

/// sum_i |a_i - a'_i|^2 + sum_j |b_j - b'_j|^2.
Tensor reconstruction_distance(const Tensor& a, const Tensor& b, const CrossAttentionOptions& options = {});

/// max(0, 1 + d_pos - d_neg). Returns a constant zero when the margin holds,
/// so no gradient flows through an inactive hinge.
Tensor triplet_hinge(const Tensor& positive_distance, const Tensor& negative_distance);

Tensor triplet_loss(const Tensor& a, const Tensor& b, const Tensor& negative_b, const CrossAttentionOptions& options = {});

}  // namespace domlm
