#pragma once

#include <cstdint>
#include <span>

#include "kvt/rng.hpp"
#include "kvt/tensor.hpp"

namespace kvt {

/// Batched matrix product over the last two axes; leading axes broadcast.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> transpose_last2(const BasicTensor<T>& x);

/// a a^T over the last two axes. One triangle is computed and mirrored, so
/// the result is exactly symmetric.
template <typename T>
BasicTensor<T> gram_last2(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

/// out.shape[i] = x.shape[perm[i]].
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& perm);

// Elementwise with right-aligned broadcasting.
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

/// table[V, d], ids[n] -> [n, d].
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& table, std::span<const std::int32_t> ids);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

/// Numerically stable softmax along the last axis: the slice maximum is
/// subtracted before exponentiation and -inf entries map to exactly 0.
/// Throws NumericError for a slice that is entirely -inf.
template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x);

/// Per-slice normalization over the last axis (biased variance), then
/// `normalized * gamma + beta`.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps = T(1e-5));

/// Inverted dropout. Identity when `rate` is 0.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, T rate, Rng& rng);

}  // namespace kvt
