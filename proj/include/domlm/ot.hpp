#pragma once

#include "domlm/errors.hpp"
#include "domlm/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

// Optimal-transport alignment between two sets of token embeddings.
//
// Convention: rows index the first set (m items, marginal 1/m each), columns
// index the second (n items, marginal 1/n each).
namespace domlm {

template <typename Scalar>
using PlanMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct TransportPlan {
  PlanMatrix<Scalar> values;
  int iterations_run = 0;
  Scalar beta = Scalar(0);
  bool conditioning_warning = false;  // exp(-C/beta) left [1e-300, 1e300] and was clamped

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
};

/// Frobenius inner product <T, C>.
template <typename DerivedT, typename DerivedC>
typename DerivedT::Scalar transport_cost(const Eigen::MatrixBase<DerivedT>& plan,
                                         const Eigen::MatrixBase<DerivedC>& cost) {
  return plan.cwiseProduct(cost).sum();
}

/// C_ij = 1 - cos(x_i, y_j). Row norms below 1e-8 are clamped and reported
/// through `degenerate`.
template <typename DerivedX, typename DerivedY>
PlanMatrix<typename DerivedX::Scalar> cosine_cost(const Eigen::MatrixBase<DerivedX>& x,
                                                  const Eigen::MatrixBase<DerivedY>& y, bool* degenerate = nullptr) {
  using Scalar = typename DerivedX::Scalar;
  if (x.cols() != y.cols()) throw DimensionError("cosine_cost: embedding widths differ");
  const Scalar floor(1e-8);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> nx = x.rowwise().norm();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> ny = y.rowwise().norm();
  if (degenerate) *degenerate = (nx.array() < floor).any() || (ny.array() < floor).any();
  nx = nx.cwiseMax(floor);
  ny = ny.cwiseMax(floor);
  PlanMatrix<Scalar> cos = (x * y.transpose()).array().colwise() / nx.array();
  cos.array().rowwise() /= ny.transpose().array();
  return (Scalar(1) - cos.array()).matrix();
}

struct IpotOptions {
  double beta = 0.5;
  int outer_iters = 50;
  int inner_k = 1;
};

struct NoIpotObserver {
  template <typename M>
  void operator()(int, const M&) const {}
};

/// Inexact proximal point OT with a generalized-KL proximity term.
///
/// A = exp(-C / beta), T starts at all ones. Each outer iteration forms
/// Q = A .* T, runs `inner_k` rounds of the row scaling delta = 1 / (m Q sigma)
/// and column scaling sigma = 1 / (n Q^T delta), then sets
/// T = diag(delta) Q diag(sigma). Column sums are exact after every outer
/// iteration. `observer(t, T)` sees the plan after iteration t (1-based).
template <typename Derived, typename Observer = NoIpotObserver>
TransportPlan<typename Derived::Scalar> ipot(const Eigen::MatrixBase<Derived>& cost, const IpotOptions& options = {},
                                             Observer&& observer = {}) {
  using Scalar = typename Derived::Scalar;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Index m = cost.rows(), n = cost.cols();
  if (m == 0 || n == 0) throw ContractError("ipot: empty cost matrix");
  if (!(options.beta > 0.0)) throw ContractError("ipot: beta must be positive");
  if (options.inner_k < 1 || options.outer_iters < 0) throw ContractError("ipot: iteration counts must be positive");
  if (!cost.allFinite()) throw ContractError("ipot: cost matrix has non-finite entries");

  TransportPlan<Scalar> out;
  out.beta = Scalar(options.beta);
  PlanMatrix<Scalar> kernel = (-cost.array() / Scalar(options.beta)).exp().matrix();
  const Scalar lo(1e-300), hi(1e300);
  if ((kernel.array() < lo).any() || (kernel.array() > hi).any()) {
    out.conditioning_warning = true;
    kernel = kernel.cwiseMax(lo).cwiseMin(hi);
  }

  const Scalar inv_m = Scalar(1) / Scalar(m);
  const Scalar inv_n = Scalar(1) / Scalar(n);
  Vec sigma = Vec::Constant(n, inv_n);
  Vec delta(m);
  PlanMatrix<Scalar> plan = PlanMatrix<Scalar>::Ones(m, n);
  PlanMatrix<Scalar> q(m, n);
  for (int t = 1; t <= options.outer_iters; ++t) {
    q = kernel.cwiseProduct(plan);
    for (int k = 0; k < options.inner_k; ++k) {
      delta = (inv_m / (q * sigma).array()).matrix();
      sigma = (inv_n / (q.transpose() * delta).array()).matrix();
    }
    plan = delta.asDiagonal() * q * sigma.asDiagonal();
    out.iterations_run = t;
    observer(t, plan);
  }
  out.values = std::move(plan);
  if (options.outer_iters == 0) out.values /= Scalar(m * n);
  return out;
}

template <typename Scalar>
struct ExactTransport {
  PlanMatrix<Scalar> plan;
  Scalar cost = Scalar(0);
  int pivots = 0;
};

inline constexpr Index kExactOtMaxSide = 8;

/// Exact optimum of the uniform-marginal transportation LP, for validation.
///
/// Transportation simplex on the integer-scaled problem (row supply n, column
/// demand m), so degenerate pivots are exact. North-west-corner start, MODI
/// potentials, Bland's rule for entering and leaving cells.
template <typename Derived>
ExactTransport<typename Derived::Scalar> exact_ot_oracle(const Eigen::MatrixBase<Derived>& cost) {
  using Scalar = typename Derived::Scalar;
  const Index m = cost.rows(), n = cost.cols();
  if (m < 1 || n < 1 || m > kExactOtMaxSide || n > kExactOtMaxSide) {
    throw ContractError("exact_ot_oracle handles 1..8 rows and columns, got " + std::to_string(m) + "x" +
                        std::to_string(n));
  }
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> flow =
      Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(m, n);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> basic =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(m, n, false);

  {
    std::vector<std::int64_t> supply(static_cast<std::size_t>(m), n), demand(static_cast<std::size_t>(n), m);
    Index i = 0, j = 0;
    while (true) {
      const std::int64_t q = std::min(supply[static_cast<std::size_t>(i)], demand[static_cast<std::size_t>(j)]);
      flow(i, j) = q;
      basic(i, j) = true;
      supply[static_cast<std::size_t>(i)] -= q;
      demand[static_cast<std::size_t>(j)] -= q;
      if (i == m - 1 && j == n - 1) break;
      if (supply[static_cast<std::size_t>(i)] == 0 && i < m - 1) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  // Tree nodes: rows 0..m-1, columns m..m+n-1. Basic cells are the edges.
  auto tree_path = [&](Index from_row, Index to_col) {
    const Index nodes = m + n;
    std::vector<Index> parent(static_cast<std::size_t>(nodes), -1);
    std::vector<bool> visited(static_cast<std::size_t>(nodes), false);
    std::vector<Index> queue{from_row};
    visited[static_cast<std::size_t>(from_row)] = true;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const Index u = queue[head];
      if (u < m) {
        for (Index c = 0; c < n; ++c) {
          if (basic(u, c) && !visited[static_cast<std::size_t>(m + c)]) {
            visited[static_cast<std::size_t>(m + c)] = true;
            parent[static_cast<std::size_t>(m + c)] = u;
            queue.push_back(m + c);
          }
        }
      } else {
        for (Index r = 0; r < m; ++r) {
          if (basic(r, u - m) && !visited[static_cast<std::size_t>(r)]) {
            visited[static_cast<std::size_t>(r)] = true;
            parent[static_cast<std::size_t>(r)] = u;
            queue.push_back(r);
          }
        }
      }
    }
    // Cells along the path, starting at the column end.
    std::vector<std::pair<Index, Index>> cells;
    for (Index v = m + to_col; v != from_row;) {
      const Index p = parent[static_cast<std::size_t>(v)];
      if (p < 0) throw ContractError("exact_ot_oracle: basis is not a spanning tree");
      cells.push_back(v < m ? std::pair{v, p - m} : std::pair{p, v - m});
      v = p;
    }
    return cells;
  };

  ExactTransport<Scalar> out;
  const int max_pivots = 100000;
  for (; out.pivots < max_pivots; ++out.pivots) {
    // Potentials u_i + v_j = c_ij on basic cells, u_0 = 0.
    std::vector<Scalar> u(static_cast<std::size_t>(m)), v(static_cast<std::size_t>(n));
    std::vector<bool> has_u(static_cast<std::size_t>(m), false), has_v(static_cast<std::size_t>(n), false);
    u[0] = Scalar(0);
    has_u[0] = true;
    for (bool changed = true; changed;) {
      changed = false;
      for (Index i = 0; i < m; ++i) {
        for (Index j = 0; j < n; ++j) {
          if (!basic(i, j)) continue;
          const auto si = static_cast<std::size_t>(i), sj = static_cast<std::size_t>(j);
          if (has_u[si] && !has_v[sj]) {
            v[sj] = cost(i, j) - u[si];
            has_v[sj] = changed = true;
          } else if (!has_u[si] && has_v[sj]) {
            u[si] = cost(i, j) - v[sj];
            has_u[si] = changed = true;
          }
        }
      }
    }

    Index enter_i = -1, enter_j = -1;
    for (Index i = 0; i < m && enter_i < 0; ++i) {
      for (Index j = 0; j < n; ++j) {
        if (basic(i, j)) continue;
        if (cost(i, j) - u[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(j)] < Scalar(-1e-12)) {
          enter_i = i;
          enter_j = j;
          break;
        }
      }
    }
    if (enter_i < 0) break;

    const auto path = tree_path(enter_i, enter_j);
    std::int64_t theta = std::numeric_limits<std::int64_t>::max();
    std::pair<Index, Index> leave{-1, -1};
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const auto [r, c] = path[k];
      const std::int64_t f = flow(r, c);
      if (f < theta || (f == theta && std::pair{r, c} < leave)) {
        theta = f;
        leave = {r, c};
      }
    }
    flow(enter_i, enter_j) += theta;
    for (std::size_t k = 0; k < path.size(); ++k) {
      const auto [r, c] = path[k];
      flow(r, c) += (k % 2 == 0) ? -theta : theta;
    }
    basic(enter_i, enter_j) = true;
    basic(leave.first, leave.second) = false;
  }
  if (out.pivots >= max_pivots) throw ContractError("exact_ot_oracle: pivot limit reached");

  out.plan = flow.cast<Scalar>() / Scalar(m * n);
  out.cost = transport_cost(out.plan, cost);
  return out;
}

/// Row-normalized plan: A_ij = T_ij / sum_j T_ij.
template <typename Derived>
PlanMatrix<typename Derived::Scalar> alignment_matrix(const Eigen::MatrixBase<Derived>& plan) {
  using Scalar = typename Derived::Scalar;
  const auto row_sums = plan.rowwise().sum().eval();
  if ((row_sums.array() <= Scalar(0)).any()) throw ContractError("alignment_matrix: plan has an empty row");
  return (plan.array().colwise() / row_sums.array()).matrix();
}

/// Differentiable OT alignment loss <T*, C(X, Y)> with T* held constant.
struct CeaLoss {
  Tensor loss;
  TransportPlan<double> plan;
  bool degenerate = false;
};

CeaLoss cea_loss(const Tensor& x, const Tensor& y, const IpotOptions& options = {});

/// Cost matrix 1 - cos(x_i, y_j) as a graph node.
Tensor cost_matrix(const Tensor& x, const Tensor& y, bool* degenerate = nullptr);

/// Header row of column tokens, then one row per row token. Fields with
/// commas or quotes are quoted.
void write_alignment_csv(const std::filesystem::path& path, const std::vector<std::string>& row_tokens,
                         const std::vector<std::string>& col_tokens, const Eigen::Ref<const Eigen::MatrixXd>& values);

struct AlignmentTable {
  std::vector<std::string> row_tokens;
  std::vector<std::string> col_tokens;
  Eigen::MatrixXd values;
};

AlignmentTable read_alignment_csv(const std::filesystem::path& path);

}  // namespace domlm
