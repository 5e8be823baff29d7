#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nadex/rng.hpp"
#include "nadex/tensor.hpp"

namespace nadex::ops {

// Binary elementwise ops broadcast when one operand's shape is a trailing
// suffix of the other's, or when it holds a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor sigmoid(const Tensor& x);
// Natural log; every entry must be strictly positive.
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);

// Reductions to a one-element tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Sums the trailing axis away: [.., n] -> [..].
Tensor sum_last(const Tensor& x);

// 2-D products.
Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ without materialising the transpose.
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Softmax over the trailing axis of x / temperature.
Tensor softmax(const Tensor& x, double temperature);

// Unit L2 norm along the trailing axis. Zero slices map to zero with zero
// gradient.
Tensor l2_normalize(const Tensor& x);

inline constexpr double kLayerNormVarianceFloor = 1e-5;

// Normalises each trailing-axis slice with variance floored at
// kLayerNormVarianceFloor, then applies gain and bias of shape [n].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Rows of a 2-D table in the order given; backward scatter-adds.
Tensor embedding_gather(const Tensor& table, std::span<const std::size_t> ids);

// out[i] = x[i, ids[i]] for a 2-D x.
Tensor pick(const Tensor& x, std::span<const std::size_t> ids);

Tensor reshape(const Tensor& x, Shape shape);
// Rows [begin, begin + count) of the leading axis.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);

// Inverted dropout; identity when !train or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train);

// Scaled dot-product attention over `batch` sequences of length `seq`, with
// rows laid out as [batch * seq, heads * head_dim]. Keys whose mask entry is
// zero are excluded from every softmax; each sequence needs at least one
// live key.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t batch, std::size_t seq,
                            std::size_t heads,
                            std::span<const std::uint8_t> key_mask);

}  // namespace nadex::ops
