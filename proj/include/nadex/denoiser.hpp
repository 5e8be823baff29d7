#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nadex/data.hpp"
#include "nadex/rng.hpp"
#include "nadex/tensor.hpp"

namespace nadex {

struct DenoiserConfig {
  std::size_t width = 200;
  std::size_t layers = 2;
  std::size_t heads = 4;
  // 0 selects 4 * width.
  std::size_t ffn_width = 0;
  double dropout = 0.2;
  // History window L; sequences have L + 1 slots.
  std::size_t window = 32;
  // Diffusion step count M (rows of the step table).
  std::size_t steps = 50;
  std::size_t gap_bins = 512;
  // Score against the entity table itself rather than a separate one.
  bool tie_scoring_table = true;

  std::size_t effective_ffn_width() const {
    return ffn_width ? ffn_width : 4 * width;
  }
  void validate() const;
};

struct EncoderLayerParams {
  Tensor norm1_gain, norm1_bias;
  Tensor query_weight, query_bias;
  Tensor key_weight, key_bias;
  Tensor value_weight, value_bias;
  Tensor output_weight, output_bias;
  Tensor norm2_gain, norm2_bias;
  Tensor ffn_in_weight, ffn_in_bias;
  Tensor ffn_out_weight, ffn_out_bias;
};

struct DenoiserParams {
  DenoiserConfig config;
  Tensor entity;    // [|E| × h]
  Tensor relation;  // [2|R| × h]
  Tensor time_gap;  // [gap_bins × h]
  Tensor position;  // [(L+1) × h]
  Tensor step;      // [M × h]
  std::vector<EncoderLayerParams> layers;
  Tensor final_gain, final_bias;
  // Only defined when the scoring table is untied.
  Tensor scoring;

  // Entity table used for scoring.
  const Tensor& scoring_table() const {
    return config.tie_scoring_table ? entity : scoring;
  }

  // Every trainable tensor in a fixed order; names are set on each.
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;
  // Deep copy; the default copy aliases storage.
  DenoiserParams clone() const;
};

// Embeddings ~ N(0, 0.02²), weight matrices Xavier-uniform, biases zero, norm
// gains one. Deterministic in `seed`.
DenoiserParams init_params(const DenoiserConfig& config,
                           const Vocabulary& vocab, std::uint64_t seed);

// Index form of a batch of samples, ready for embedding lookups.
struct SequenceBatch {
  std::size_t size = 0;
  std::size_t window = 0;
  std::vector<std::size_t> history_objects;  // N*L
  std::vector<std::size_t> slot_relations;   // N*(L+1)
  std::vector<std::size_t> slot_gaps;        // N*(L+1)
  std::vector<std::uint8_t> key_mask;        // N*(L+1), target slot live
  std::vector<std::size_t> gold;             // N
  std::vector<std::size_t> subjects;         // N
  std::vector<std::size_t> relations;        // N

  std::size_t sequence_length() const { return window + 1; }
};

SequenceBatch make_sequence_batch(std::span<const HistorySample> samples,
                                  std::span<const std::size_t> indices);
SequenceBatch make_sequence_batch(std::span<const HistorySample> samples);

struct ContextEmbedding {
  Tensor history;       // [N*L × h]
  Tensor conditioning;  // [N*(L+1) × h], relation + time-gap per slot
};

ContextEmbedding embed_context(const DenoiserParams& params,
                               const SequenceBatch& batch);

// Predicts the clean target embedding from an assembled sequence batch
// [N*(L+1) × h] at diffusion step m. Returns [N × h]. `key_mask` marks live
// slots; dropout draws from `rng` only when train_mode is set.
Tensor denoise(const DenoiserParams& params, const Tensor& input,
               std::size_t step, std::span<const std::uint8_t> key_mask,
               bool train_mode, Rng* rng = nullptr);

// Row-stochastic scores softmax(prediction · tableᵀ / temperature).
Tensor score_entities(const Tensor& prediction, const Tensor& table,
                      double temperature);

}  // namespace nadex
