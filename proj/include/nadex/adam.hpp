#pragma once

#include <cstdint>
#include <vector>

#include "nadex/tensor.hpp"

namespace nadex {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment accumulators, one pair per parameter, plus the shared
// step counter.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

AdamState make_adam_state(const std::vector<Tensor>& params,
                          AdamConfig config);

// Bias-corrected Adam update applied in place to every parameter using its
// accumulated grad (an absent grad counts as zero). Throws NumericError naming
// the first parameter whose gradient holds a NaN; nothing is updated then.
void adam_step(std::vector<Tensor>& params, AdamState& state);

void zero_grads(std::vector<Tensor>& params);

}  // namespace nadex
