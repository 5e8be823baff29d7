#pragma once

#include <cstddef>
#include <span>

#include "nadex/tensor.hpp"

namespace nadex {

struct NegativePrototypeBatch {
  // Row i averages every other row of the target embeddings.
  Tensor prototypes;
  // False for a batch of one, where the prototypes are all zero.
  bool valid = false;
};

struct NegativeSamplingOptions {
  // Leave out rows whose gold id equals row i's gold id (off by default, so
  // duplicate golds count as negatives for each other).
  bool exclude_same_gold = false;
};

// Batch-wise negative prototypes from stacked target embeddings [N×h]:
// prototype_i = (sum_{j != i} e_j) / (N - 1). Differentiable w.r.t. targets.
// `gold_ids` is only read when exclude_same_gold is set.
NegativePrototypeBatch negative_prototypes(
    const Tensor& targets, std::span<const std::size_t> gold_ids = {},
    NegativeSamplingOptions options = {});

}  // namespace nadex
