#include "nadex/objectives.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "nadex/errors.hpp"
#include "nadex/ops.hpp"

namespace nadex {

void LossConfig::validate() const {
  if (lambda < 0.0 || lambda > 1.0) {
    throw ConfigError("lambda must lie in [0, 1], got " +
                      std::to_string(lambda));
  }
  if (!(gamma > 0.0)) {
    throw ConfigError("gamma must be positive, got " + std::to_string(gamma));
  }
  if (!(temperature > 0.0)) {
    throw ConfigError("temperature must be positive, got " +
                      std::to_string(temperature));
  }
}

Tensor reconstruction_loss(const Tensor& probabilities,
                           std::span<const std::size_t> gold, double epsilon) {
  Tensor picked = ops::pick(probabilities, gold);
  return ops::scale(ops::mean(ops::log(ops::add_scalar(picked, epsilon))), -1.0);
}

Tensor negative_cosine_loss(const Tensor& clean_negative,
                            const Tensor& denoised_negative, bool applied) {
  if (clean_negative.shape() != denoised_negative.shape()) {
    throw DimensionError("negative_cosine_loss: " +
                         shape_to_string(clean_negative.shape()) + " vs " +
                         shape_to_string(denoised_negative.shape()));
  }
  if (!applied) return Tensor::scalar(0.0);
  Tensor cos = ops::sum_last(ops::mul(ops::l2_normalize(clean_negative),
                                      ops::l2_normalize(denoised_negative)));
  Tensor gap = ops::add_scalar(cos, -1.0);
  return ops::mean(ops::mul(gap, gap));
}

Tensor combined_loss(const Tensor& reconstruction, const Tensor& negative,
                     const LossConfig& config) {
  Tensor margin = ops::add_scalar(
      ops::scale(ops::sub(reconstruction, negative), -config.gamma),
      config.epsilon);
  Tensor ranking = ops::scale(ops::log(ops::sigmoid(margin)),
                              -(1.0 - config.lambda));
  return ops::add(ranking, ops::scale(reconstruction, config.lambda));
}

Trainer::Trainer(DenoiserParams params, NoiseSchedule schedule,
                 LossConfig loss, AdamConfig adam, std::uint64_t seed,
                 NegativeSamplingOptions negatives)
    : params_(std::move(params)),
      tensors_(params_.tensors()),
      schedule_(std::move(schedule)),
      loss_(loss),
      negatives_(negatives),
      adam_(make_adam_state(tensors_, adam)),
      rng_(seed) {
  loss_.validate();
  if (schedule_.steps() != params_.config.steps) {
    throw ConfigError("schedule has " + std::to_string(schedule_.steps()) +
                      " steps, denoiser step table has " +
                      std::to_string(params_.config.steps));
  }
}

void Trainer::restore(AdamState adam, const std::string& rng_state) {
  if (adam.first_moment.size() != tensors_.size()) {
    throw DimensionError("optimizer state holds " +
                         std::to_string(adam.first_moment.size()) +
                         " moment pairs for " + std::to_string(tensors_.size()) +
                         " parameters");
  }
  adam_ = std::move(adam);
  rng_.set_state(rng_state);
}

Trainer::Forward Trainer::forward(const TimestampBatch& batch,
                                  std::span<const HistorySample> samples,
                                  bool train_mode) {
  if (batch.samples.empty()) throw ContractError("empty training batch");
  const SequenceBatch seq = make_sequence_batch(samples, batch.samples);
  const std::size_t n = seq.size;
  const ContextEmbedding ctx = embed_context(params_, seq);

  Tensor targets = ops::embedding_gather(params_.entity, seq.gold);
  NegativePrototypeBatch neg = negative_prototypes(targets, seq.gold, negatives_);

  const std::size_t m = sample_step(rng_, schedule_.steps());
  DiffusedTarget noised =
      forward_diffuse(targets, neg.prototypes, m, schedule_, rng_);

  Tensor positive_input = assemble_sequence(ctx.history, noised.positive,
                                            ctx.conditioning, seq.window);
  Forward f;
  f.batch_size = n;
  f.negatives_applied = neg.valid;
  Tensor denoised_positive, denoised_negative;
  if (neg.valid) {
    Tensor negative_input = assemble_sequence(ctx.history, noised.negative,
                                              ctx.conditioning, seq.window);
    std::vector<std::uint8_t> mask = seq.key_mask;
    mask.insert(mask.end(), seq.key_mask.begin(), seq.key_mask.end());
    Tensor out = denoise(params_,
                         ops::concat_rows({positive_input, negative_input}), m,
                         mask, train_mode, &rng_);
    denoised_positive = ops::slice_rows(out, 0, n);
    denoised_negative = ops::slice_rows(out, n, n);
  } else {
    denoised_positive =
        denoise(params_, positive_input, m, seq.key_mask, train_mode, &rng_);
    denoised_negative = Tensor::zeros({n, params_.config.width});
  }

  Tensor probs = score_entities(denoised_positive, params_.scoring_table(),
                                loss_.temperature);
  f.reconstruction = reconstruction_loss(probs, seq.gold, loss_.epsilon);
  f.negative =
      negative_cosine_loss(neg.prototypes, denoised_negative, neg.valid);
  f.total = combined_loss(f.reconstruction, f.negative, loss_);
  return f;
}

namespace {

LossBreakdown breakdown_of(const Tensor& reconstruction, const Tensor& negative,
                           const Tensor& total, std::size_t n, bool applied) {
  LossBreakdown b;
  b.reconstruction = reconstruction.item();
  b.negative = negative.item();
  b.total = total.item();
  b.batch_size = n;
  b.negatives_applied = applied;
  return b;
}

void check_finite(const LossBreakdown& b) {
  const char* bad = nullptr;
  if (!std::isfinite(b.reconstruction)) {
    bad = "reconstruction loss";
  } else if (!std::isfinite(b.negative)) {
    bad = "negative cosine loss";
  } else if (!std::isfinite(b.total)) {
    bad = "combined loss";
  }
  if (bad) {
    Tape::current().clear();
    throw NumericError(std::string("non-finite ") + bad);
  }
}

}  // namespace

LossBreakdown Trainer::train_step(const TimestampBatch& batch,
                                  std::span<const HistorySample> samples) {
  Forward f = forward(batch, samples, true);
  LossBreakdown b = breakdown_of(f.reconstruction, f.negative, f.total,
                                 f.batch_size, f.negatives_applied);
  check_finite(b);
  zero_grads(tensors_);
  backward(f.total);
  adam_step(tensors_, adam_);
  return b;
}

Tensor Trainer::objective(const TimestampBatch& batch,
                          std::span<const HistorySample> samples,
                          bool train_mode) {
  return forward(batch, samples, train_mode).total;
}

LossBreakdown Trainer::evaluate_loss(const TimestampBatch& batch,
                                     std::span<const HistorySample> samples) {
  NoGradGuard no_grad;
  Forward f = forward(batch, samples, false);
  return breakdown_of(f.reconstruction, f.negative, f.total, f.batch_size,
                      f.negatives_applied);
}

EpochSummary Trainer::train_epoch(std::span<const TimestampBatch> batches,
                                  std::span<const HistorySample> samples,
                                  std::size_t max_steps) {
  if (batches.empty()) throw ContractError("no training data");
  const auto start = std::chrono::steady_clock::now();
  EpochSummary summary;
  for (const TimestampBatch& batch : batches) {
    if (max_steps && summary.steps >= max_steps) break;
    const LossBreakdown b = train_step(batch, samples);
    summary.reconstruction += b.reconstruction;
    summary.negative += b.negative;
    summary.total += b.total;
    ++summary.steps;
  }
  const double steps = static_cast<double>(summary.steps);
  summary.reconstruction /= steps;
  summary.negative /= steps;
  summary.total /= steps;
  summary.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - start)
                        .count();
  return summary;
}

}  // namespace nadex
