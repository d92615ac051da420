#include "domlm/ops.hpp"

#include "domlm/errors.hpp"

#include <cmath>
#include <numbers>

namespace domlm {

namespace {

using detail::Node;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

Tensor make_result(const char* op, Shape shape, Buffer value,
                   std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(value));
  auto& node = *out.node();
  node.op = op;
  if (!grad_enabled()) return out;
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (!any) return out;
  node.requires_grad = true;
  for (const Tensor* t : inputs) node.inputs.push_back(t->node());
  node.backward_fn = std::move(backward_fn);
  return out;
}

ConstMap value_map(const Node& n, Index rows, Index cols) { return {n.value.data(), rows, cols}; }
ConstMap grad_map(const Node& n, Index rows, Index cols) { return {n.grad.data(), rows, cols}; }
MutMap grad_acc(Node& n, Index rows, Index cols) { return {n.grad_buffer().data(), rows, cols}; }

Index rows_of(const Tensor& t) { return t.matrix().rows(); }
Index cols_of(const Tensor& t) { return t.matrix().cols(); }

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Buffer out(static_cast<std::size_t>(m * n));
  MutMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return make_result("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const auto dc = grad_map(self, m, n);
    if (na.requires_grad) grad_acc(na, m, k).noalias() += dc * value_map(nb, k, n).transpose();
    if (nb.requires_grad) grad_acc(nb, k, n).noalias() += value_map(na, m, k).transpose() * dc;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    Buffer out(a.data().begin(), a.data().end());
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
      for (int i = 0; i < 2; ++i) {
        Node& in = *self.inputs[static_cast<std::size_t>(i)];
        if (!in.requires_grad) continue;
        auto g = in.grad_buffer();
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += self.grad[j];
      }
    });
  }
  if (b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.dim(-1)) {
    const Index rows = rows_of(a), cols = cols_of(a);
    Buffer out(a.data().begin(), a.data().end());
    MutMap(out.data(), rows, cols).rowwise() += b.matrix().row(0);
    return make_result("add_bias", a.shape(), std::move(out), {&a, &b}, [rows, cols](Node& self) {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      const auto g = grad_map(self, rows, cols);
      if (na.requires_grad) grad_acc(na, rows, cols) += g;
      if (nb.requires_grad) grad_acc(nb, 1, cols) += g.colwise().sum();
    });
  }
  throw DimensionError("add: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  Buffer out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto g = na.grad_buffer();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += self.grad[j] * nb.value[j];
    }
    if (nb.requires_grad) {
      auto g = nb.grad_buffer();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += self.grad[j] * na.value[j];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  Buffer out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_result("scale", a.shape(), std::move(out), {&a}, [factor](Node& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += factor * self.grad[j];
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const Index m = a.dim(0), n = a.dim(1);
  Buffer out(static_cast<std::size_t>(m * n));
  MutMap(out.data(), n, m) = a.matrix().transpose();
  return make_result("transpose", {n, m}, std::move(out), {&a}, [m, n](Node& self) {
    grad_acc(*self.inputs[0], m, n) += grad_map(self, n, m).transpose();
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  Buffer out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {&a}, [](Node& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += self.grad[j];
  });
}

Tensor concat_last(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_last: no inputs");
  const Index rows = rows_of(parts[0]);
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<Index> widths;
  Index total = 0;
  for (const Tensor& p : parts) {
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (p.rank() == 0 || pl != lead) {
      throw DimensionError("concat_last: leading dimensions of " + shape_string(p.shape()) + " differ from " +
                           shape_string(parts[0].shape()));
    }
    widths.push_back(p.dim(-1));
    total += p.dim(-1);
  }
  Buffer out(static_cast<std::size_t>(rows * total));
  MutMap om(out.data(), rows, total);
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    om.middleCols(offset, widths[i]) = parts[i].matrix();
    offset += widths[i];
  }
  Shape shape = lead;
  shape.push_back(total);

  Tensor result(std::move(shape), std::move(out));
  auto& node = *result.node();
  node.op = "concat_last";
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (grad_enabled() && any) {
    node.requires_grad = true;
    for (const Tensor& p : parts) node.inputs.push_back(p.node());
    node.backward_fn = [rows, total, widths](Node& self) {
      const auto g = grad_map(self, rows, total);
      Index off = 0;
      for (std::size_t i = 0; i < widths.size(); ++i) {
        Node& in = *self.inputs[i];
        if (in.requires_grad) grad_acc(in, rows, widths[i]) += g.middleCols(off, widths[i]);
        off += widths[i];
      }
    };
  }
  return result;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  std::vector<Tensor> transposed;
  transposed.reserve(parts.size());
  for (const Tensor& p : parts) transposed.push_back(transpose(p));
  return transpose(concat_last(transposed));
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "gather_rows");
  const Index n = table.dim(0), d = table.dim(1);
  const auto count = static_cast<Index>(ids.size());
  Buffer out(static_cast<std::size_t>(count * d));
  MutMap om(out.data(), count, d);
  const auto tm = table.matrix();
  for (Index i = 0; i < count; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= n) {
      throw IndexError("gather_rows: id " + std::to_string(id) + " outside table of " + std::to_string(n) + " rows");
    }
    om.row(i) = tm.row(id);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result("gather_rows", {count, d}, std::move(out), {&table}, [n, d, idx = std::move(idx)](Node& self) {
    auto g = grad_acc(*self.inputs[0], n, d);
    const auto go = grad_map(self, static_cast<Index>(idx.size()), d);
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += go.row(static_cast<Index>(i));
  });
}

Tensor softmax(const Tensor& x) {
  const Index rows = rows_of(x), cols = cols_of(x);
  Buffer out(x.data().begin(), x.data().end());
  MutMap om(out.data(), rows, cols);
  for (Index r = 0; r < rows; ++r) {
    auto row = om.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).unaryExpr([](double v) { return std::exp(v); });
    row /= row.sum();
  }
  return make_result("softmax", x.shape(), std::move(out), {&x}, [rows, cols](Node& self) {
    const auto y = value_map(self, rows, cols);
    const auto gy = grad_map(self, rows, cols);
    auto gx = grad_acc(*self.inputs[0], rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const double dot = gy.row(r).dot(y.row(r));
      gx.row(r).array() += y.row(r).array() * (gy.row(r).array() - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index rows = rows_of(x), cols = cols_of(x);
  if (gain.numel() != cols || bias.numel() != cols) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " + shape_string(bias.shape()) +
                         " do not match last axis of " + shape_string(x.shape()));
  }
  const auto xm = x.matrix();
  Eigen::Map<const Eigen::RowVectorXd> gv(gain.data().data(), cols);
  Eigen::Map<const Eigen::RowVectorXd> bv(bias.data().data(), cols);
  RowMatrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const double mu = xm.row(r).mean();
    const double var = (xm.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xm.row(r).array() - mu) * inv_std(r);
  }
  Buffer out(static_cast<std::size_t>(rows * cols));
  MutMap om(out.data(), rows, cols);
  om = (xhat.array().rowwise() * gv.array()).rowwise() + bv.array();
  return make_result("layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
                     [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& nx = *self.inputs[0];
                       Node& ng = *self.inputs[1];
                       Node& nb = *self.inputs[2];
                       const auto gy = grad_map(self, rows, cols);
                       if (ng.requires_grad) grad_acc(ng, 1, cols) += (gy.array() * xhat.array()).colwise().sum().matrix();
                       if (nb.requires_grad) grad_acc(nb, 1, cols) += gy.colwise().sum();
                       if (!nx.requires_grad) return;
                       const auto g = value_map(ng, 1, cols);
                       auto gx = grad_acc(nx, rows, cols);
                       for (Index r = 0; r < rows; ++r) {
                         const Eigen::RowVectorXd dxhat = gy.row(r).cwiseProduct(g.row(0));
                         const double m1 = dxhat.mean();
                         const double m2 = dxhat.dot(xhat.row(r)) / static_cast<double>(cols);
                         gx.row(r).array() += inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  Buffer out(x.data().begin(), x.data().end());
  for (double& v : out) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return make_result("gelu", x.shape(), std::move(out), {&x}, [](Node& self) {
    Node& nx = *self.inputs[0];
    auto g = nx.grad_buffer();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double v = nx.value[j];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[j] += self.grad[j] * (cdf + v * pdf);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank2(logits, "cross_entropy");
  const Index batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(targets.size()) != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(logits.shape()));
  }
  if (batch == 0) throw ContractError("cross_entropy: empty batch");
  const auto lm = logits.matrix();
  RowMatrix probs(batch, classes);
  double total = 0.0;
  for (Index r = 0; r < batch; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= classes) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(classes) + ")");
    }
    const double mx = lm.row(r).maxCoeff();
    probs.row(r) = (lm.row(r).array() - mx).exp();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    total += std::log(z) + mx - lm(r, t);
  }
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result("cross_entropy", {}, {total / static_cast<double>(batch)}, {&logits},
                     [batch, classes, probs = std::move(probs), tg = std::move(tg)](Node& self) {
                       const double scale = self.grad[0] / static_cast<double>(batch);
                       auto g = grad_acc(*self.inputs[0], batch, classes);
                       g += scale * probs;
                       for (Index r = 0; r < batch; ++r) g(r, tg[static_cast<std::size_t>(r)]) -= scale;
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result("sum", {}, {total}, {&x}, [](Node& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  const double n = static_cast<double>(x.numel());
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result("mean", {}, {total / n}, {&x}, [n](Node& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (double& v : g) v += self.grad[0] / n;
  });
}

Tensor cosine_similarity(const Tensor& x, const Tensor& y, bool* degenerate) {
  require_rank2(x, "cosine_similarity");
  require_rank2(y, "cosine_similarity");
  const Index m = x.dim(0), n = y.dim(0), d = x.dim(1);
  if (y.dim(1) != d) {
    throw DimensionError("cosine_similarity: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  }
  constexpr double floor = 1e-8;
  const auto xm = x.matrix();
  const auto ym = y.matrix();
  Eigen::VectorXd nx = xm.rowwise().norm();
  Eigen::VectorXd ny = ym.rowwise().norm();
  Eigen::Array<bool, Eigen::Dynamic, 1> cx = (nx.array() < floor);
  Eigen::Array<bool, Eigen::Dynamic, 1> cy = (ny.array() < floor);
  if (degenerate) *degenerate = cx.any() || cy.any();
  nx = nx.cwiseMax(floor);
  ny = ny.cwiseMax(floor);
  RowMatrix cos = (xm * ym.transpose()).array().colwise() / nx.array();
  cos.array().rowwise() /= ny.transpose().array();
  Buffer out(static_cast<std::size_t>(m * n));
  MutMap(out.data(), m, n) = cos;
  return make_result("cosine_similarity", {m, n}, std::move(out), {&x, &y},
                     [m, n, d, nx, ny, cx, cy](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       const auto g = grad_map(self, m, n);
                       const auto c = value_map(self, m, n);
                       const auto xv = value_map(na, m, d);
                       const auto yv = value_map(nb, n, d);
                       if (na.requires_grad) {
                         // d cos_ij / d x_i = y_j / (|x_i||y_j|) - cos_ij x_i / |x_i|^2
                         RowMatrix gn = g.array().rowwise() / ny.transpose().array();
                         gn.array().colwise() /= nx.array();
                         RowMatrix gx = gn * yv;
                         for (Index i = 0; i < m; ++i) {
                           if (!cx(i)) gx.row(i) -= (g.row(i).dot(c.row(i)) / (nx(i) * nx(i))) * xv.row(i);
                         }
                         grad_acc(na, m, d) += gx;
                       }
                       if (nb.requires_grad) {
                         RowMatrix gn = g.array().colwise() / nx.array();
                         gn.array().rowwise() /= ny.transpose().array();
                         RowMatrix gy = gn.transpose() * xv;
                         for (Index j = 0; j < n; ++j) {
                           if (!cy(j)) gy.row(j) -= (g.col(j).dot(c.col(j)) / (ny(j) * ny(j))) * yv.row(j);
                         }
                         grad_acc(nb, n, d) += gy;
                       }
                     });
}

}  // namespace domlm
