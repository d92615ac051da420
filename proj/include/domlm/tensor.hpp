#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace domlm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
// Tensor storage. Fixed alignment keeps vectorized reductions reproducible.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

std::string shape_string(const Shape& shape);
Index shape_numel(const Shape& shape);

namespace detail {

// One vertex of the dynamic tape. Results hold strong references to their
// inputs, so a loss tensor keeps its whole graph alive and nothing else does.
struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until first touched by backward
  bool requires_grad = false;
  std::uint64_t seq = 0;  // construction order; backward walks it descending
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::span<double> grad_buffer();
};

std::uint64_t next_seq();

}  // namespace detail

/// Dense row-major 64-bit tensor with an optional gradient slot.
///
/// Tensors are cheap handles: copying one shares the underlying node. Use
/// clone() for a deep copy of the values.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer data, bool requires_grad = false);
  Tensor(Shape shape, const std::vector<double>& data, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor from_matrix(const Eigen::Ref<const RowMatrix>& m, bool requires_grad = false);
  static Tensor from_vector(const Eigen::Ref<const Eigen::VectorXd>& v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  Index rank() const { return static_cast<Index>(shape().size()); }
  Index dim(Index axis) const;  // negative axes count from the back
  Index numel() const;

  std::span<const double> data() const;
  /// Writable view of a leaf's values. Throws ContractError on op results.
  std::span<double> mutable_data();
  /// Values viewed as (numel / last_dim) x last_dim.
  Eigen::Map<const RowMatrix> matrix() const;
  Eigen::Map<RowMatrix> mutable_matrix();
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  Eigen::Map<const RowMatrix> grad_matrix() const;
  /// Drops the gradient; has_grad() is false until the next backward reaches it.
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const;

  /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls.
  void backward() const;

  const char* op_name() const;
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

inline void backward(const Tensor& loss) { loss.backward(); }

}  // namespace domlm
