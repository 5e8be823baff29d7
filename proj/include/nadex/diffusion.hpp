#pragma once

#include <cstddef>
#include <vector>

#include "nadex/rng.hpp"
#include "nadex/tensor.hpp"

namespace nadex {

struct ScheduleConfig {
  std::size_t steps = 50;
  double scale = 1.0;
  double alpha_min = 0.01;
  double alpha_max = 0.99;
};

// Linear schedule on the cumulative noise level 1 - ᾱ_m, m = 1..M:
//   1 - ᾱ_m = scale * (alpha_min + (m-1)/(M-1) * (alpha_max - alpha_min))
class NoiseSchedule {
 public:
  static NoiseSchedule build(const ScheduleConfig& config);

  const ScheduleConfig& config() const { return config_; }
  std::size_t steps() const { return config_.steps; }

  // All accessors take the 1-based step m.
  double one_minus_alpha_bar(std::size_t m) const;
  double alpha_bar(std::size_t m) const;
  double signal_coefficient(std::size_t m) const;
  double noise_coefficient(std::size_t m) const;

  const std::vector<double>& one_minus_alpha_bar_table() const {
    return one_minus_alpha_bar_;
  }

 private:
  void check_step(std::size_t m) const;

  ScheduleConfig config_;
  std::vector<double> one_minus_alpha_bar_;
};

NoiseSchedule build_schedule(std::size_t steps, double scale, double alpha_min,
                             double alpha_max);

// Uniform step in [1, steps].
std::size_t sample_step(Rng& rng, std::size_t steps);

// A tensor of i.i.d. standard normal draws.
Tensor gaussian_like(const Shape& shape, Rng& rng);

// sqrt(ᾱ_m) * clean + sqrt(1 - ᾱ_m) * noise; differentiable in `clean`.
Tensor diffuse(const Tensor& clean, const Tensor& noise, std::size_t m,
               const NoiseSchedule& schedule);

struct DiffusedTarget {
  Tensor positive;
  Tensor negative;
  std::size_t step = 0;
  Tensor positive_noise;
  Tensor negative_noise;
};

// Noises the positive and negative targets at the same step with independent
// draws (positive first).
DiffusedTarget forward_diffuse(const Tensor& clean_positive,
                               const Tensor& clean_negative, std::size_t m,
                               const NoiseSchedule& schedule, Rng& rng);

// Builds the denoiser input for N sequences of `window` history slots plus a
// trailing target slot: rows are [item0: hist_0..hist_{L-1}, target, item1:
// ...]. `history` is [N*L × h], `target` is [N × h] and `conditioning`
// (relation + time-gap embeddings for every slot) is [N*(L+1) × h].
Tensor assemble_sequence(const Tensor& history, const Tensor& target,
                         const Tensor& conditioning, std::size_t window);

// Inference input: history embeddings and a pure Gaussian draw in the target
// slot, plus per-slot conditioning. Shapes as in assemble_sequence.
Tensor make_inference_input(const Tensor& history, const Tensor& conditioning,
                            std::size_t window, std::size_t width, Rng& rng);

}  // namespace nadex
