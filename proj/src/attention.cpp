#include "kvt/attention.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

#include "tensor_detail.hpp"

namespace kvt {

using detail::make_result;
using detail::NodePtr;

AttentionKind AttentionKind::kv_pos(std::size_t pos_dim) {
  if (pos_dim < 1) throw ConfigError("kvpos attention needs pos_dim >= 1");
  return AttentionKind(AttentionVariant::KVPos, pos_dim);
}

AttentionKind AttentionKind::parse(std::string_view name, std::size_t pos_dim) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "qkv") return qkv();
  if (lower == "kv") return kv();
  if (lower == "kvpos" || lower == "kv+pos") return kv_pos(pos_dim);
  throw ConfigError("unknown attention kind '" + std::string(name) + "' (expected qkv, kv or kvpos)");
}

std::string variant_name(AttentionVariant variant) {
  switch (variant) {
    case AttentionVariant::QKV: return "qkv";
    case AttentionVariant::KV: return "kv";
    case AttentionVariant::KVPos: return "kvpos";
  }
  return "?";
}

std::string AttentionKind::name() const { return variant_name(variant_); }

// ---------------------------------------------------------------------------
// layer

template <typename T>
T AttentionLayer<T>::alpha() const {
  return T{1} / std::sqrt(static_cast<T>(head_dim()));
}

namespace {

template <typename T>
BasicTensor<T> normal_tensor(Shape shape, Rng& rng, double stddev) {
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.normal(0.0, stddev));
  return BasicTensor<T>(std::move(shape), std::move(values), true);
}

constexpr double kInitStd = 0.02;

}  // namespace

template <typename T>
AttentionLayer<T> AttentionLayer<T>::create(std::size_t d_model, std::size_t heads, std::size_t max_len,
                                            AttentionKind kind, bool causal, Rng& rng) {
  if (d_model == 0 || heads == 0 || max_len == 0) throw ConfigError("attention sizes must be positive");
  if (d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  AttentionLayer layer;
  layer.d_model = d_model;
  layer.heads = heads;
  layer.max_len = max_len;
  layer.kind = kind;
  layer.causal = causal;
  if (kind.has_query()) layer.w_q = normal_tensor<T>({d_model, d_model}, rng, kInitStd);
  layer.w_k = normal_tensor<T>({d_model, d_model}, rng, kInitStd);
  layer.w_v = normal_tensor<T>({d_model, d_model}, rng, kInitStd);
  layer.w_o = normal_tensor<T>({d_model, d_model}, rng, kInitStd);
  if (kind.has_positional_bias()) {
    const std::size_t m = *kind.pos_dim();
    layer.pos_table = normal_tensor<T>({max_len, max_len, m}, rng, kInitStd);
    layer.pos_weight = BasicTensor<T>::full({m}, T{1} / static_cast<T>(m), true);
    layer.pos_bias = BasicTensor<T>::zeros({1}, true);
  }
  return layer;
}

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>>> AttentionLayer<T>::named_parameters() const {
  std::vector<std::pair<std::string, BasicTensor<T>>> out;
  if (w_q.defined()) out.emplace_back("w_q", w_q);
  out.emplace_back("w_k", w_k);
  out.emplace_back("w_v", w_v);
  out.emplace_back("w_o", w_o);
  if (pos_table.defined()) {
    out.emplace_back("pos_table", pos_table);
    out.emplace_back("pos_weight", pos_weight);
    out.emplace_back("pos_bias", pos_bias);
  }
  return out;
}

// ---------------------------------------------------------------------------
// forward pieces

namespace {

template <typename T>
void check_input(const BasicTensor<T>& x, const AttentionLayer<T>& layer) {
  if (x.ndim() != 3 || x.dim(2) != layer.d_model) {
    throw ShapeError("attention input must be [B, T, " + std::to_string(layer.d_model) + "], got " +
                     shape_str(x.shape()));
  }
  if (x.dim(1) > layer.max_len) {
    throw CapacityError("sequence length " + std::to_string(x.dim(1)) + " exceeds max_len " +
                        std::to_string(layer.max_len));
  }
}

// [B, T, d] x [d, d] -> [B, H, T, head_dim]
template <typename T>
BasicTensor<T> project_heads(const BasicTensor<T>& x, const BasicTensor<T>& weight, std::size_t heads) {
  const std::size_t batch = x.dim(0);
  const std::size_t len = x.dim(1);
  const std::size_t d = x.dim(2);
  auto projected = reshape(matmul(x, weight), {batch, len, heads, d / heads});
  return permute(projected, {0, 2, 1, 3});
}

template <typename T>
void check_square_scores(const BasicTensor<T>& scores) {
  if (scores.ndim() < 2 || scores.dim(-1) != scores.dim(-2)) {
    throw ShapeError("attention scores must end in a square [T, T] block, got " + shape_str(scores.shape()));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> attention_scores(const BasicTensor<T>& x, const AttentionLayer<T>& layer) {
  check_input(x, layer);
  auto keys = project_heads(x, layer.w_k, layer.heads);
  if (layer.kind.has_query()) {
    auto queries = project_heads(x, layer.w_q, layer.heads);
    return scale(matmul(queries, transpose_last2(keys)), layer.alpha());
  }
  return scale(gram_last2(keys), layer.alpha());
}

template <typename T>
BasicTensor<T> add_positional_bias(const BasicTensor<T>& scores, const AttentionLayer<T>& layer) {
  if (!layer.kind.has_positional_bias() || !layer.pos_table.defined()) {
    throw ConfigError("positional bias requested on a " + layer.kind.name() + " attention layer");
  }
  check_square_scores(scores);
  const std::size_t len = scores.dim(-1);
  if (len > layer.max_len) {
    throw CapacityError("sequence length " + std::to_string(len) + " exceeds max_len " +
                        std::to_string(layer.max_len));
  }
  const std::size_t m = *layer.kind.pos_dim();
  const std::size_t table_len = layer.max_len;
  const std::size_t block = len * len;
  const std::size_t slices = scores.numel() / block;
  const auto table = layer.pos_table.data();
  const auto w = layer.pos_weight.data();
  const T b = layer.pos_bias.data()[0];

  T weight_sum{0};
  for (T wk : w) weight_sum += wk;
  // Positional term per (i, j) of the leading [len, len] corner of the table.
  std::vector<T> bias(block);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < len; ++j) {
      const T* p = table.data() + (i * table_len + j) * m;
      T acc = b;
      for (std::size_t k = 0; k < m; ++k) acc += w[k] * p[k];
      bias[i * len + j] = acc;
    }
  }
  const auto in = scores.data();
  std::vector<T> out(scores.numel());
  for (std::size_t s = 0; s < slices; ++s) {
    for (std::size_t e = 0; e < block; ++e) out[s * block + e] = weight_sum * in[s * block + e] + bias[e];
  }
  auto result = make_result<T>(scores.shape(), std::move(out));
  NodePtr<T> sn = scores.node();
  NodePtr<T> pn = layer.pos_table.node();
  NodePtr<T> wn = layer.pos_weight.node();
  NodePtr<T> bn = layer.pos_bias.node();
  record_op<T>(result, {sn, pn, wn, bn},
               [sn, pn, wn, bn, len, m, table_len, block, slices, weight_sum](TensorNode<T>& o) {
                 // Upstream gradient summed over batch and heads.
                 std::vector<T> g(block, T{0});
                 T grad_dot_scores{0};
                 for (std::size_t s = 0; s < slices; ++s) {
                   for (std::size_t e = 0; e < block; ++e) {
                     const T dy = o.grad[s * block + e];
                     g[e] += dy;
                     grad_dot_scores += dy * sn->data[s * block + e];
                   }
                 }
                 if (sn->requires_grad) {
                   sn->ensure_grad();
                   for (std::size_t e = 0; e < o.grad.size(); ++e) sn->grad[e] += weight_sum * o.grad[e];
                 }
                 if (pn->requires_grad) pn->ensure_grad();
                 if (wn->requires_grad) wn->ensure_grad();
                 for (std::size_t i = 0; i < len; ++i) {
                   for (std::size_t j = 0; j < len; ++j) {
                     const T gij = g[i * len + j];
                     const std::size_t base = (i * table_len + j) * m;
                     for (std::size_t k = 0; k < m; ++k) {
                       if (pn->requires_grad) pn->grad[base + k] += wn->data[k] * gij;
                       if (wn->requires_grad) wn->grad[k] += gij * pn->data[base + k];
                     }
                   }
                 }
                 if (wn->requires_grad) {
                   for (std::size_t k = 0; k < m; ++k) wn->grad[k] += grad_dot_scores;
                 }
                 if (bn->requires_grad) {
                   bn->ensure_grad();
                   T total{0};
                   for (T v : g) total += v;
                   bn->grad[0] += total;
                 }
               });
  return result;
}

template <typename T>
BasicTensor<T> apply_causal_mask(const BasicTensor<T>& scores) {
  check_square_scores(scores);
  const std::size_t len = scores.dim(-1);
  const std::size_t block = len * len;
  const std::size_t slices = scores.numel() / block;
  std::vector<T> out(scores.data().begin(), scores.data().end());
  constexpr T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t s = 0; s < slices; ++s) {
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = i + 1; j < len; ++j) out[s * block + i * len + j] = neg_inf;
    }
  }
  auto result = make_result<T>(scores.shape(), std::move(out));
  NodePtr<T> sn = scores.node();
  record_op<T>(result, {sn}, [sn, len, block, slices](TensorNode<T>& o) {
    sn->ensure_grad();
    for (std::size_t s = 0; s < slices; ++s) {
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j <= i; ++j) sn->grad[s * block + i * len + j] += o.grad[s * block + i * len + j];
      }
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& x, const AttentionLayer<T>& layer,
                                    const AttentionContext<T>& ctx) {
  auto scores = attention_scores(x, layer);
  if (layer.kind.has_positional_bias()) scores = add_positional_bias(scores, layer);
  if (ctx.trace != nullptr) ctx.trace->scores = scores.detach();
  if (layer.causal) scores = apply_causal_mask(scores);
  auto weights = softmax_lastdim(scores);
  if (ctx.trace != nullptr) ctx.trace->weights = weights.detach();
  if (ctx.training && ctx.dropout > T{0}) {
    if (ctx.rng == nullptr) throw ConfigError("attention dropout needs an rng");
    weights = dropout(weights, ctx.dropout, *ctx.rng);
  }
  auto values = project_heads(x, layer.w_v, layer.heads);
  auto mixed = matmul(weights, values);  // [B, H, T, hd]
  const std::size_t batch = x.dim(0);
  const std::size_t len = x.dim(1);
  auto merged = reshape(permute(mixed, {0, 2, 1, 3}), {batch, len, layer.d_model});
  return matmul(merged, layer.w_o);
}

// ---------------------------------------------------------------------------
// cost model

std::string CostReport::csv_header() {
  return "kind,n,d,H,m,table1_flops,table1_params,full_layer_params,full_forward_flops";
}

std::string CostReport::csv_row() const {
  std::ostringstream os;
  os << variant_name(variant) << ',' << n << ',' << d << ',' << heads << ',' << pos_dim << ',' << table1_flops
     << ',' << table1_params << ',' << full_layer_params << ',' << full_forward_flops;
  return os.str();
}

CostReport count_cost(AttentionVariant variant, std::uint64_t n, std::uint64_t d, std::uint64_t heads,
                      std::uint64_t pos_dim) {
  if (n == 0 || d == 0 || heads == 0) throw ConfigError("count_cost: n, d and H must be positive");
  if (d % heads != 0) {
    throw ConfigError("count_cost: d " + std::to_string(d) + " is not divisible by H " + std::to_string(heads));
  }
  CostReport report;
  report.variant = variant;
  report.n = n;
  report.d = d;
  report.heads = heads;
  report.pos_dim = variant == AttentionVariant::KVPos ? pos_dim : 0;

  const std::uint64_t proj_flops = n * d * d;   // one [n, d] x [d, d] projection
  const std::uint64_t proj_params = d * d;
  const std::uint64_t mix_flops = 2 * n * n * d;  // scores plus weighted sum, all heads
  const std::uint64_t m = report.pos_dim;

  switch (variant) {
    case AttentionVariant::QKV:
      report.table1_flops = 2 * proj_flops;
      report.table1_params = 2 * proj_params;
      report.full_layer_params = 4 * proj_params;
      report.full_forward_flops = 4 * proj_flops + mix_flops;
      break;
    case AttentionVariant::KV:
      report.table1_flops = proj_flops;
      report.table1_params = proj_params;
      report.full_layer_params = 3 * proj_params;
      report.full_forward_flops = 3 * proj_flops + mix_flops;
      break;
    case AttentionVariant::KVPos:
      report.table1_flops = proj_flops + n * n * m;
      report.table1_params = proj_params + m;
      report.full_layer_params = 3 * proj_params + n * n * m + m + 1;
      report.full_forward_flops = 3 * proj_flops + mix_flops + n * n * m;
      break;
  }
  return report;
}

#define KVT_INSTANTIATE_ATTENTION(T)                                                                       \
  template struct AttentionLayer<T>;                                                                       \
  template BasicTensor<T> attention_scores(const BasicTensor<T>&, const AttentionLayer<T>&);               \
  template BasicTensor<T> add_positional_bias(const BasicTensor<T>&, const AttentionLayer<T>&);            \
  template BasicTensor<T> apply_causal_mask(const BasicTensor<T>&);                                        \
  template BasicTensor<T> multi_head_attention(const BasicTensor<T>&, const AttentionLayer<T>&,            \
                                               const AttentionContext<T>&);

KVT_INSTANTIATE_ATTENTION(float)
KVT_INSTANTIATE_ATTENTION(double)

#undef KVT_INSTANTIATE_ATTENTION

}  // namespace kvt
