#include "domlm/cea_attention.hpp"

#include "domlm/errors.hpp"
#include "domlm/ops.hpp"

#include <cmath>

namespace domlm {

CrossAttention cross_attention(const Tensor& a, const Tensor& b, const CrossAttentionOptions& options) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("cross_attention: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor scores = matmul(a, transpose(b));
  if (options.scaled) scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(a.dim(1))));
  return {softmax(scores), softmax(transpose(scores))};
}

std::pair<Tensor, Tensor> reconstruct(const CrossAttention& attention, const Tensor& a, const Tensor& b) {
  return {matmul(attention.alpha, b), matmul(attention.beta, a)};
}

Tensor reconstruction_distance(const Tensor& a, const Tensor& b, const CrossAttentionOptions& options) {
  const auto [a_rec, b_rec] = reconstruct(cross_attention(a, b, options), a, b);
  return add(sum(square(sub(a, a_rec))), sum(square(sub(b, b_rec))));
}

Tensor triplet_hinge(const Tensor& positive_distance, const Tensor& negative_distance) {
  const double slack = 1.0 + positive_distance.item() - negative_distance.item();
  if (slack <= 0.0) return Tensor::scalar(0.0);
  return add(sub(positive_distance, negative_distance), Tensor::scalar(1.0));
}

Tensor triplet_loss(const Tensor& a, const Tensor& b, const Tensor& negative_b, const CrossAttentionOptions& options) {
  return triplet_hinge(reconstruction_distance(a, b, options), reconstruction_distance(a, negative_b, options));
}

}  // namespace domlm
