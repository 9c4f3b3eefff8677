#include "kvt/ops.hpp"

#include "tensor_detail.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace kvt {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

using detail::NodePtr;
using detail::make_result;

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const std::size_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Offset into a tensor of shape `src` for every element of the broadcast shape `out`.
std::vector<std::size_t> broadcast_offsets(const Shape& src, const Shape& out) {
  const std::size_t n = out.size();
  std::vector<std::size_t> strides(n, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < src.size(); ++k) {
    const std::size_t axis = src.size() - 1 - k;
    const std::size_t out_axis = n - 1 - k;
    strides[out_axis] = src[axis] == 1 ? 0 : stride;
    stride *= src[axis];
  }
  const std::size_t total = shape_numel(out);
  std::vector<std::size_t> offsets(total);
  std::vector<std::size_t> index(n, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < total; ++i) {
    offsets[i] = offset;
    for (std::size_t axis = n; axis-- > 0;) {
      ++index[axis];
      offset += strides[axis];
      if (index[axis] < out[axis]) break;
      offset -= strides[axis] * index[axis];
      index[axis] = 0;
    }
  }
  return offsets;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

enum class BroadcastKind { Same, RightRepeats, LeftRepeats, General };

struct BroadcastPlan {
  Shape out;
  BroadcastKind kind;
  std::vector<std::size_t> a_offsets;
  std::vector<std::size_t> b_offsets;

  std::size_t a_at(std::size_t i, std::size_t a_n) const {
    switch (kind) {
      case BroadcastKind::Same:
      case BroadcastKind::RightRepeats: return i;
      case BroadcastKind::LeftRepeats: return i % a_n;
      default: return a_offsets[i];
    }
  }
  std::size_t b_at(std::size_t i, std::size_t b_n) const {
    switch (kind) {
      case BroadcastKind::Same:
      case BroadcastKind::LeftRepeats: return i;
      case BroadcastKind::RightRepeats: return i % b_n;
      default: return b_offsets[i];
    }
  }
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.kind = BroadcastKind::Same;
  } else if (is_suffix(b, a)) {
    plan.out = a;
    plan.kind = BroadcastKind::RightRepeats;
  } else if (is_suffix(a, b)) {
    plan.out = b;
    plan.kind = BroadcastKind::LeftRepeats;
  } else {
    plan.out = broadcast_shapes(a, b, op);
    plan.kind = BroadcastKind::General;
    plan.a_offsets = broadcast_offsets(a, plan.out);
    plan.b_offsets = broadcast_offsets(b, plan.out);
  }
  return plan;
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw ShapeError("matmul: operands need at least 2 dims, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t p = a.dim(-2);
  const std::size_t q = a.dim(-1);
  const std::size_t r = b.dim(-1);
  if (b.dim(-2) != q) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const auto eidx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };

  // A single right-hand matrix: fold all leading axes of `a` into rows.
  if (b_batch.empty()) {
    const std::size_t rows = a.numel() / q;
    Shape out_shape = a_batch;
    out_shape.push_back(p);
    out_shape.push_back(r);
    std::vector<T> out(rows * r);
    MatrixMap<T>(out.data(), eidx(rows), eidx(r)).noalias() =
        ConstMatrixMap<T>(a.data().data(), eidx(rows), eidx(q)) *
        ConstMatrixMap<T>(b.data().data(), eidx(q), eidx(r));
    auto result = make_result<T>(std::move(out_shape), std::move(out));
    NodePtr<T> an = a.node();
    NodePtr<T> bn = b.node();
    record_op<T>(result, {an, bn}, [an, bn, rows, q, r, eidx](TensorNode<T>& o) {
      ConstMatrixMap<T> dc(o.grad.data(), eidx(rows), eidx(r));
      if (an->requires_grad) {
        an->ensure_grad();
        MatrixMap<T>(an->grad.data(), eidx(rows), eidx(q)).noalias() +=
            dc * ConstMatrixMap<T>(bn->data.data(), eidx(q), eidx(r)).transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        MatrixMap<T>(bn->grad.data(), eidx(q), eidx(r)).noalias() +=
            ConstMatrixMap<T>(an->data.data(), eidx(rows), eidx(q)).transpose() * dc;
      }
    });
    return result;
  }

  const Shape out_batch = broadcast_shapes(a_batch, b_batch, "matmul");
  const std::vector<std::size_t> a_off =
      a_batch.empty() ? std::vector<std::size_t>(shape_numel(out_batch), 0)
                      : broadcast_offsets(a_batch, out_batch);
  const std::vector<std::size_t> b_off = broadcast_offsets(b_batch, out_batch);
  const std::size_t batches = shape_numel(out_batch);

  Shape out_shape = out_batch;
  out_shape.push_back(p);
  out_shape.push_back(r);
  std::vector<T> out(batches * p * r);
  for (std::size_t i = 0; i < batches; ++i) {
    MatrixMap<T>(out.data() + i * p * r, eidx(p), eidx(r)).noalias() =
        ConstMatrixMap<T>(a.data().data() + a_off[i] * p * q, eidx(p), eidx(q)) *
        ConstMatrixMap<T>(b.data().data() + b_off[i] * q * r, eidx(q), eidx(r));
  }
  auto result = make_result<T>(std::move(out_shape), std::move(out));
  NodePtr<T> an = a.node();
  NodePtr<T> bn = b.node();
  record_op<T>(result, {an, bn}, [an, bn, a_off, b_off, batches, p, q, r, eidx](TensorNode<T>& o) {
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (std::size_t i = 0; i < batches; ++i) {
      ConstMatrixMap<T> dc(o.grad.data() + i * p * r, eidx(p), eidx(r));
      if (an->requires_grad) {
        MatrixMap<T>(an->grad.data() + a_off[i] * p * q, eidx(p), eidx(q)).noalias() +=
            dc * ConstMatrixMap<T>(bn->data.data() + b_off[i] * q * r, eidx(q), eidx(r)).transpose();
      }
      if (bn->requires_grad) {
        MatrixMap<T>(bn->grad.data() + b_off[i] * q * r, eidx(q), eidx(r)).noalias() +=
            ConstMatrixMap<T>(an->data.data() + a_off[i] * p * q, eidx(p), eidx(q)).transpose() * dc;
      }
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> gram_last2(const BasicTensor<T>& a) {
  if (a.ndim() < 2) throw ShapeError("gram_last2: operand needs at least 2 dims, got " + shape_str(a.shape()));
  const std::size_t p = a.dim(-2);
  const std::size_t q = a.dim(-1);
  const std::size_t batches = a.numel() / std::max<std::size_t>(p * q, 1);
  const auto eidx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(p);
  std::vector<T> out(batches * p * p, T{0});
  for (std::size_t i = 0; i < batches; ++i) {
    MatrixMap<T> g(out.data() + i * p * p, eidx(p), eidx(p));
    g.template selfadjointView<Eigen::Lower>().rankUpdate(
        ConstMatrixMap<T>(a.data().data() + i * p * q, eidx(p), eidx(q)));
    g.template triangularView<Eigen::StrictlyUpper>() = g.transpose();
  }
  auto result = make_result<T>(std::move(out_shape), std::move(out));
  NodePtr<T> an = a.node();
  record_op<T>(result, {an}, [an, batches, p, q, eidx](TensorNode<T>& o) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < batches; ++i) {
      ConstMatrixMap<T> dg(o.grad.data() + i * p * p, eidx(p), eidx(p));
      const RowMatrix<T> sym = dg + dg.transpose();
      MatrixMap<T>(an->grad.data() + i * p * q, eidx(p), eidx(q)).noalias() +=
          sym * ConstMatrixMap<T>(an->data.data() + i * p * q, eidx(p), eidx(q));
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// layout

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t n = x.ndim();
  if (perm.size() != n) throw ShapeError("permute: permutation rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(n, false);
  for (auto axis : perm) {
    if (axis >= n || seen[axis]) throw ShapeError("permute: invalid permutation");
    seen[axis] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<std::size_t> in_strides(n, 1);
  for (std::size_t i = n - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(n);
  std::vector<std::size_t> strides(n);
  for (std::size_t i = 0; i < n; ++i) {
    out_shape[i] = in_shape[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  // Source offset for each output element, in output order.
  const std::size_t total = x.numel();
  std::vector<std::size_t> src(total);
  std::vector<std::size_t> index(n, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < total; ++i) {
    src[i] = offset;
    for (std::size_t axis = n; axis-- > 0;) {
      ++index[axis];
      offset += strides[axis];
      if (index[axis] < out_shape[axis]) break;
      offset -= strides[axis] * index[axis];
      index[axis] = 0;
    }
  }
  std::vector<T> out(total);
  const auto in = x.data();
  for (std::size_t i = 0; i < total; ++i) out[i] = in[src[i]];
  auto result = make_result<T>(std::move(out_shape), std::move(out));
  NodePtr<T> xn = x.node();
  record_op<T>(result, {xn}, [xn, src = std::move(src)](TensorNode<T>& o) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) xn->grad[src[i]] += o.grad[i];
  });
  return result;
}

template <typename T>
BasicTensor<T> transpose_last2(const BasicTensor<T>& x) {
  if (x.ndim() < 2) throw ShapeError("transpose_last2: need at least 2 dims, got " + shape_str(x.shape()));
  std::vector<std::size_t> perm(x.ndim());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto result = make_result<T>(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  NodePtr<T> xn = x.node();
  record_op<T>(result, {xn}, [xn](TensorNode<T>& o) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
  });
  return result;
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), "add"));
  const std::size_t total = shape_numel(plan->out);
  const std::size_t an_n = a.numel();
  const std::size_t bn_n = b.numel();
  std::vector<T> out(total);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < total; ++i) out[i] = ad[plan->a_at(i, an_n)] + bd[plan->b_at(i, bn_n)];
  auto result = make_result<T>(plan->out, std::move(out));
  NodePtr<T> an = a.node();
  NodePtr<T> bn = b.node();
  record_op<T>(result, {an, bn}, [an, bn, plan, an_n, bn_n](TensorNode<T>& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[plan->a_at(i, an_n)] += o.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[plan->b_at(i, bn_n)] += o.grad[i];
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), "mul"));
  const std::size_t total = shape_numel(plan->out);
  const std::size_t an_n = a.numel();
  const std::size_t bn_n = b.numel();
  std::vector<T> out(total);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < total; ++i) out[i] = ad[plan->a_at(i, an_n)] * bd[plan->b_at(i, bn_n)];
  auto result = make_result<T>(plan->out, std::move(out));
  NodePtr<T> an = a.node();
  NodePtr<T> bn = b.node();
  record_op<T>(result, {an, bn}, [an, bn, plan, an_n, bn_n](TensorNode<T>& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        an->grad[plan->a_at(i, an_n)] += o.grad[i] * bn->data[plan->b_at(i, bn_n)];
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        bn->grad[plan->b_at(i, bn_n)] += o.grad[i] * an->data[plan->a_at(i, an_n)];
      }
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  auto result = make_result<T>(x.shape(), std::move(out));
  NodePtr<T> xn = x.node();
  record_op<T>(result, {xn}, [xn, factor](TensorNode<T>& o) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += factor * o.grad[i];
  });
  return result;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T{0} ? v : T{0};
  auto result = make_result<T>(x.shape(), std::move(out));
  NodePtr<T> xn = x.node();
  record_op<T>(result, {xn}, [xn](TensorNode<T>& o) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (xn->data[i] > T{0}) xn->grad[i] += o.grad[i];
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& table, std::span<const std::int32_t> ids) {
  if (table.ndim() != 2) throw ShapeError("gather_rows: table must be 2-D, got " + shape_str(table.shape()));
  if (ids.empty()) throw ShapeError("gather_rows: no ids");
  const std::size_t rows = table.dim(0);
  const std::size_t width = table.dim(1);
  std::vector<T> out(ids.size() * width);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw IndexError("gather_rows: id " + std::to_string(id) + " outside [0, " + std::to_string(rows) + ")");
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(id) * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  auto result = make_result<T>(Shape{ids.size(), width}, std::move(out));
  NodePtr<T> tn = table.node();
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  record_op<T>(result, {tn}, [tn, kept = std::move(kept), width](TensorNode<T>& o) {
    tn->ensure_grad();
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const std::size_t row = static_cast<std::size_t>(kept[i]) * width;
      for (std::size_t j = 0; j < width; ++j) tn->grad[row + j] += o.grad[i * width + j];
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  auto result = make_result<T>(Shape{1}, std::vector<T>{total});
  NodePtr<T> xn = x.node();
  record_op<T>(result, {xn}, [xn](TensorNode<T>& o) {
    xn->ensure_grad();
    for (auto& g : xn->grad) g += o.grad[0];
  });
  return result;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// normalization

template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x) {
  const std::size_t width = x.dim(-1);
  const std::size_t rows = x.numel() / width;
  const auto in = x.data();
  std::vector<T> out(x.numel());
  constexpr T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * width;
    T* dst = out.data() + r * width;
    const T peak = *std::max_element(row, row + width);
    if (peak == neg_inf) throw NumericError("softmax: every entry of a slice is -inf");
    T total{0};
    for (std::size_t j = 0; j < width; ++j) {
      dst[j] = row[j] == neg_inf ? T{0} : std::exp(row[j] - peak);
      total += dst[j];
    }
    const T inv = T{1} / total;
    for (std::size_t j = 0; j < width; ++j) dst[j] *= inv;
  }
  auto result = make_result<T>(x.shape(), std::move(out));
  NodePtr<T> xn = x.node();
  record_op<T>(result, {xn}, [xn, rows, width](TensorNode<T>& o) {
    xn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = o.data.data() + r * width;
      const T* dy = o.grad.data() + r * width;
      T dot{0};
      for (std::size_t j = 0; j < width; ++j) dot += y[j] * dy[j];
      T* dx = xn->grad.data() + r * width;
      for (std::size_t j = 0; j < width; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          T eps) {
  const std::size_t width = x.dim(-1);
  if (gamma.shape() != Shape{width} || beta.shape() != Shape{width}) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(width) + "], got " +
                     shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  if (!(eps > T{0})) throw ShapeError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / width;
  const auto in = x.data();
  const auto g = gamma.data();
  const auto bt = beta.data();
  std::vector<T> out(x.numel());
  std::vector<T> normalized(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * width;
    T mu{0};
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<T>(width);
    T var{0};
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(width);
    const T rstd = T{1} / std::sqrt(var + eps);
    inv_std[r] = rstd;
    for (std::size_t j = 0; j < width; ++j) {
      const T xh = (row[j] - mu) * rstd;
      normalized[r * width + j] = xh;
      out[r * width + j] = xh * g[j] + bt[j];
    }
  }
  auto result = make_result<T>(x.shape(), std::move(out));
  NodePtr<T> xn = x.node();
  NodePtr<T> gn = gamma.node();
  NodePtr<T> bn = beta.node();
  record_op<T>(result, {xn, gn, bn},
               [xn, gn, bn, rows, width, normalized = std::move(normalized),
                inv_std = std::move(inv_std)](TensorNode<T>& o) {
                 if (gn->requires_grad) gn->ensure_grad();
                 if (bn->requires_grad) bn->ensure_grad();
                 if (xn->requires_grad) xn->ensure_grad();
                 std::vector<T> dxhat(width);
                 for (std::size_t r = 0; r < rows; ++r) {
                   const T* dy = o.grad.data() + r * width;
                   const T* xh = normalized.data() + r * width;
                   T mean_d{0};
                   T mean_dx{0};
                   for (std::size_t j = 0; j < width; ++j) {
                     if (gn->requires_grad) gn->grad[j] += dy[j] * xh[j];
                     if (bn->requires_grad) bn->grad[j] += dy[j];
                     dxhat[j] = dy[j] * gn->data[j];
                     mean_d += dxhat[j];
                     mean_dx += dxhat[j] * xh[j];
                   }
                   if (!xn->requires_grad) continue;
                   mean_d /= static_cast<T>(width);
                   mean_dx /= static_cast<T>(width);
                   T* dx = xn->grad.data() + r * width;
                   for (std::size_t j = 0; j < width; ++j) {
                     dx[j] += inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                   }
                 }
               });
  return result;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, T rate, Rng& rng) {
  if (rate < T{0} || rate >= T{1}) throw ConfigError("dropout rate must lie in [0, 1)");
  if (rate == T{0}) return x;
  const T keep_scale = T{1} / (T{1} - rate);
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < static_cast<double>(rate) ? T{0} : keep_scale;
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  auto result = make_result<T>(x.shape(), std::move(out));
  NodePtr<T> xn = x.node();
  record_op<T>(result, {xn}, [xn, mask = std::move(mask)](TensorNode<T>& o) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < mask.size(); ++i) xn->grad[i] += o.grad[i] * mask[i];
  });
  return result;
}

#define KVT_INSTANTIATE_OPS(T)                                                                  \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> transpose_last2(const BasicTensor<T>&);                               \
  template BasicTensor<T> gram_last2(const BasicTensor<T>&);                                    \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::size_t>&);      \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                      \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                          \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const std::int32_t>);    \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                           \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                          \
  template BasicTensor<T> softmax_lastdim(const BasicTensor<T>&);                               \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                     const BasicTensor<T>&, T);                                 \
  template BasicTensor<T> dropout(const BasicTensor<T>&, T, Rng&);

KVT_INSTANTIATE_OPS(float)
KVT_INSTANTIATE_OPS(double)

#undef KVT_INSTANTIATE_OPS

}  // namespace kvt
