#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kvt/ops.hpp"
#include "kvt/rng.hpp"
#include "kvt/tensor.hpp"

namespace kvt {

enum class AttentionVariant { QKV, KV, KVPos };

/// Score mechanism selector. KVPos carries the depth m of its 2D positional
/// table; the other variants carry none.
class AttentionKind {
 public:
  static AttentionKind qkv() { return AttentionKind(AttentionVariant::QKV, std::nullopt); }
  static AttentionKind kv() { return AttentionKind(AttentionVariant::KV, std::nullopt); }
  static AttentionKind kv_pos(std::size_t pos_dim);
  /// Accepts "qkv", "kv", "kvpos" (case-insensitive). `pos_dim` is used for kvpos only.
  static AttentionKind parse(std::string_view name, std::size_t pos_dim);

  AttentionVariant variant() const { return variant_; }
  std::optional<std::size_t> pos_dim() const { return pos_dim_; }
  bool has_query() const { return variant_ == AttentionVariant::QKV; }
  bool has_positional_bias() const { return variant_ == AttentionVariant::KVPos; }
  std::string name() const;

  bool operator==(const AttentionKind&) const = default;

 private:
  AttentionKind(AttentionVariant variant, std::optional<std::size_t> pos_dim)
      : variant_(variant), pos_dim_(pos_dim) {}

  AttentionVariant variant_;
  std::optional<std::size_t> pos_dim_;
};

std::string variant_name(AttentionVariant variant);

/// Multi-head self-attention parameters. Per-head projections are stored as
/// one [d, d] matrix whose columns split into `heads` blocks of head_dim.
/// w_q is present only for QKV; the positional table, its projection
/// weights and bias only for KVPos (shared across batch and heads).
template <typename T>
struct AttentionLayer {
  std::size_t d_model = 0;
  std::size_t heads = 0;
  std::size_t max_len = 0;
  AttentionKind kind = AttentionKind::qkv();
  bool causal = false;

  BasicTensor<T> w_q;         // [d, d]
  BasicTensor<T> w_k;         // [d, d]
  BasicTensor<T> w_v;         // [d, d]
  BasicTensor<T> w_o;         // [d, d]
  BasicTensor<T> pos_table;   // [max_len, max_len, m]
  BasicTensor<T> pos_weight;  // [m]
  BasicTensor<T> pos_bias;    // [1]

  std::size_t head_dim() const { return d_model / heads; }
  /// 1 / sqrt(head_dim).
  T alpha() const;

  /// Projections and the positional table ~ N(0, 0.02); pos_weight = 1/m so
  /// the content scores start unscaled; pos_bias = 0.
  static AttentionLayer create(std::size_t d_model, std::size_t heads, std::size_t max_len,
                               AttentionKind kind, bool causal, Rng& rng);

  std::vector<std::pair<std::string, BasicTensor<T>>> named_parameters() const;
};

/// Snapshot of one attention call, captured without gradient history.
template <typename T>
struct AttentionTrace {
  BasicTensor<T> scores;   // [B, H, T, T] after positional bias, before masking
  BasicTensor<T> weights;  // [B, H, T, T] after softmax
};

template <typename T>
struct AttentionContext {
  bool training = false;
  T dropout = T{0};
  Rng* rng = nullptr;
  AttentionTrace<T>* trace = nullptr;
};

/// alpha * Q_h K_h^T (QKV) or alpha * K_h K_h^T (KV, KVPos): [B, T, d] -> [B, H, T, T].
/// Throws CapacityError when T exceeds the layer's max_len.
template <typename T>
BasicTensor<T> attention_scores(const BasicTensor<T>& x, const AttentionLayer<T>& layer);

/// out[b,h,i,j] = sum_k w_k (scores[b,h,i,j] + P[i,j,k]) + bias.
/// Throws ConfigError on a layer without a positional table.
template <typename T>
BasicTensor<T> add_positional_bias(const BasicTensor<T>& scores, const AttentionLayer<T>& layer);

/// Sets entries above the diagonal of the trailing [T, T] block to -inf.
template <typename T>
BasicTensor<T> apply_causal_mask(const BasicTensor<T>& scores);

/// scores -> positional bias (KVPos) -> causal mask (if set) -> softmax ->
/// weights * V_h, heads concatenated and projected by w_o.
template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& x, const AttentionLayer<T>& layer,
                                    const AttentionContext<T>& ctx = {});

struct CostReport {
  AttentionVariant variant = AttentionVariant::QKV;
  std::uint64_t n = 0;
  std::uint64_t d = 0;
  std::uint64_t heads = 0;
  std::uint64_t pos_dim = 0;
  // Score-forming projections only (Q and K, or K alone).
  std::uint64_t table1_flops = 0;
  std::uint64_t table1_params = 0;
  // Whole layer: adds V and output projections, the score and weighted-sum
  // products, and for KVPos the positional table, map weights and bias.
  std::uint64_t full_layer_params = 0;
  std::uint64_t full_forward_flops = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

/// Multiply-accumulate counts per sequence of length n. pos_dim is ignored
/// for QKV and KV; for KVPos a value of 0 is accepted here as a degenerate
/// cost-model point. Throws ConfigError when d is not divisible by heads or
/// any size is zero.
CostReport count_cost(AttentionVariant variant, std::uint64_t n, std::uint64_t d, std::uint64_t heads,
                      std::uint64_t pos_dim = 0);

inline CostReport count_cost(const AttentionKind& kind, std::uint64_t n, std::uint64_t d, std::uint64_t heads) {
  return count_cost(kind.variant(), n, d, heads, kind.pos_dim().value_or(0));
}

}  // namespace kvt
