#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nadex/adam.hpp"
#include "nadex/data.hpp"
#include "nadex/denoiser.hpp"
#include "nadex/diffusion.hpp"
#include "nadex/negsample.hpp"
#include "nadex/rng.hpp"
#include "nadex/tensor.hpp"

namespace nadex {

struct LossConfig {
  // Weight of the plain reconstruction term; 1 disables the negative term.
  double lambda = 0.5;
  double gamma = 1.0;
  double temperature = 0.5;
  double epsilon = 1e-8;

  void validate() const;
};

struct LossBreakdown {
  double reconstruction = 0.0;
  double negative = 0.0;
  double total = 0.0;
  std::size_t batch_size = 0;
  bool negatives_applied = false;

  bool operator==(const LossBreakdown&) const = default;
};

// mean_i -log(probabilities[i, gold_i] + epsilon)
Tensor reconstruction_loss(const Tensor& probabilities,
                           std::span<const std::size_t> gold,
                           double epsilon = 1e-8);

// mean_i (cos(clean_i, denoised_i) - 1)^2, or a constant 0 when !applied.
Tensor negative_cosine_loss(const Tensor& clean_negative,
                            const Tensor& denoised_negative, bool applied);

// -(1 - λ) log σ(-γ (L_r - L_neg) + ε) + λ L_r
Tensor combined_loss(const Tensor& reconstruction, const Tensor& negative,
                     const LossConfig& config);

struct EpochSummary {
  double reconstruction = 0.0;
  double negative = 0.0;
  double total = 0.0;
  std::size_t steps = 0;
  double seconds = 0.0;
};

// Owns the mutable training state: parameters, optimizer moments and rng.
class Trainer {
 public:
  Trainer(DenoiserParams params, NoiseSchedule schedule, LossConfig loss,
          AdamConfig adam, std::uint64_t seed,
          NegativeSamplingOptions negatives = {});

  // One optimisation step on the samples of a single timestamp batch.
  LossBreakdown train_step(const TimestampBatch& batch,
                           std::span<const HistorySample> samples);

  // Forward pass of train_step without backward or update. Draws from the
  // trainer rng exactly like train_step.
  LossBreakdown evaluate_loss(const TimestampBatch& batch,
                              std::span<const HistorySample> samples);

  // Runs train_step over the batches in order. `max_steps` > 0 stops early.
  EpochSummary train_epoch(std::span<const TimestampBatch> batches,
                           std::span<const HistorySample> samples,
                           std::size_t max_steps = 0);

  // Composite loss of one batch with its autodiff graph recorded, without
  // backward or update. Draws from the trainer rng like train_step.
  Tensor objective(const TimestampBatch& batch,
                   std::span<const HistorySample> samples, bool train_mode);

  // Resumes from saved optimizer moments and generator state.
  void restore(AdamState adam, const std::string& rng_state);

  const DenoiserParams& params() const { return params_; }
  DenoiserParams& params() { return params_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const LossConfig& loss_config() const { return loss_; }
  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

 private:
  struct Forward {
    Tensor reconstruction;
    Tensor negative;
    Tensor total;
    bool negatives_applied = false;
    std::size_t batch_size = 0;
  };
  Forward forward(const TimestampBatch& batch,
                  std::span<const HistorySample> samples, bool train_mode);

  DenoiserParams params_;
  std::vector<Tensor> tensors_;
  NoiseSchedule schedule_;
  LossConfig loss_;
  NegativeSamplingOptions negatives_;
  AdamState adam_;
  Rng rng_;
};

}  // namespace nadex
