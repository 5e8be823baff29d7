#include "nadex/denoiser.hpp"

#include <cmath>

#include "nadex/diffusion.hpp"
#include "nadex/errors.hpp"
#include "nadex/ops.hpp"

namespace nadex {

void DenoiserConfig::validate() const {
  if (width == 0 || layers == 0 || heads == 0 || window == 0 || steps == 0 ||
      gap_bins < 2) {
    throw ConfigError("denoiser dimensions must be positive (width, layers, "
                      "heads, window, steps) and gap_bins >= 2");
  }
  if (width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must lie in [0, 1), got " +
                      std::to_string(dropout));
  }
}

namespace {

template <class Params, class Fn>
void visit(Params& p, Fn&& fn) {
  fn("entity", p.entity);
  fn("relation", p.relation);
  fn("time_gap", p.time_gap);
  fn("position", p.position);
  fn("step", p.step);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    fn(prefix + "norm1_gain", l.norm1_gain);
    fn(prefix + "norm1_bias", l.norm1_bias);
    fn(prefix + "query_weight", l.query_weight);
    fn(prefix + "query_bias", l.query_bias);
    fn(prefix + "key_weight", l.key_weight);
    fn(prefix + "key_bias", l.key_bias);
    fn(prefix + "value_weight", l.value_weight);
    fn(prefix + "value_bias", l.value_bias);
    fn(prefix + "output_weight", l.output_weight);
    fn(prefix + "output_bias", l.output_bias);
    fn(prefix + "norm2_gain", l.norm2_gain);
    fn(prefix + "norm2_bias", l.norm2_bias);
    fn(prefix + "ffn_in_weight", l.ffn_in_weight);
    fn(prefix + "ffn_in_bias", l.ffn_in_bias);
    fn(prefix + "ffn_out_weight", l.ffn_out_weight);
    fn(prefix + "ffn_out_bias", l.ffn_out_bias);
  }
  fn("final_gain", p.final_gain);
  fn("final_bias", p.final_bias);
  if (!p.config.tie_scoring_table) fn("scoring", p.scoring);
}

Tensor normal_table(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = 0.02 * rng.normal();
  return Tensor::from({rows, cols}, std::move(v), true);
}

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = (2.0 * rng.uniform01() - 1.0) * bound;
  return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Tensor zeros(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor ones(std::size_t n) { return Tensor::full({n}, 1.0, true); }

// x[rows × in] · w[in × out] + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return ops::add(ops::matmul(x, w), b);
}

}  // namespace

std::vector<Tensor> DenoiserParams::tensors() const {
  std::vector<Tensor> out;
  visit(*this, [&](const std::string& name, const Tensor& t) {
    const_cast<Tensor&>(t).set_name(name);
    out.push_back(t);
  });
  return out;
}

std::size_t DenoiserParams::parameter_count() const {
  std::size_t n = 0;
  visit(*this, [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

DenoiserParams DenoiserParams::clone() const {
  DenoiserParams copy = *this;
  visit(copy, [](const std::string&, Tensor& t) { t = t.clone(); });
  return copy;
}

DenoiserParams init_params(const DenoiserConfig& config,
                           const Vocabulary& vocab, std::uint64_t seed) {
  config.validate();
  if (vocab.num_entities == 0 || vocab.num_base_relations == 0) {
    throw ConfigError("vocabulary must contain entities and relations");
  }
  Rng rng(seed);
  const std::size_t h = config.width;
  const std::size_t f = config.effective_ffn_width();
  DenoiserParams p;
  p.config = config;
  p.entity = normal_table(vocab.num_entities, h, rng);
  p.relation = normal_table(vocab.num_relations(), h, rng);
  p.time_gap = normal_table(config.gap_bins, h, rng);
  p.position = normal_table(config.window + 1, h, rng);
  p.step = normal_table(config.steps, h, rng);
  for (std::size_t i = 0; i < config.layers; ++i) {
    EncoderLayerParams l;
    l.norm1_gain = ones(h);
    l.norm1_bias = zeros(h);
    l.query_weight = xavier(h, h, rng);
    l.query_bias = zeros(h);
    l.key_weight = xavier(h, h, rng);
    l.key_bias = zeros(h);
    l.value_weight = xavier(h, h, rng);
    l.value_bias = zeros(h);
    l.output_weight = xavier(h, h, rng);
    l.output_bias = zeros(h);
    l.norm2_gain = ones(h);
    l.norm2_bias = zeros(h);
    l.ffn_in_weight = xavier(h, f, rng);
    l.ffn_in_bias = zeros(f);
    l.ffn_out_weight = xavier(f, h, rng);
    l.ffn_out_bias = zeros(h);
    p.layers.push_back(std::move(l));
  }
  p.final_gain = ones(h);
  p.final_bias = zeros(h);
  if (!config.tie_scoring_table) {
    p.scoring = normal_table(vocab.num_entities, h, rng);
  }
  p.tensors();  // assigns names
  return p;
}

SequenceBatch make_sequence_batch(std::span<const HistorySample> samples,
                                  std::span<const std::size_t> indices) {
  SequenceBatch b;
  b.size = indices.size();
  if (b.size == 0) return b;
  b.window = samples[indices[0]].window();
  const std::size_t seq = b.window + 1;
  b.history_objects.reserve(b.size * b.window);
  b.slot_relations.reserve(b.size * seq);
  b.slot_gaps.reserve(b.size * seq);
  b.key_mask.reserve(b.size * seq);
  for (std::size_t idx : indices) {
    const HistorySample& s = samples[idx];
    if (s.window() != b.window) {
      throw DimensionError("samples in one batch have different windows");
    }
    b.history_objects.insert(b.history_objects.end(), s.objects.begin(),
                             s.objects.end());
    b.slot_relations.insert(b.slot_relations.end(), s.relations.begin(),
                            s.relations.end());
    b.slot_relations.push_back(s.relation);
    b.slot_gaps.insert(b.slot_gaps.end(), s.time_gaps.begin(),
                       s.time_gaps.end());
    b.slot_gaps.push_back(s.query_gap);
    b.key_mask.insert(b.key_mask.end(), s.mask.begin(), s.mask.end());
    b.key_mask.push_back(1);
    b.gold.push_back(s.object);
    b.subjects.push_back(s.subject);
    b.relations.push_back(s.relation);
  }
  return b;
}

SequenceBatch make_sequence_batch(std::span<const HistorySample> samples) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_sequence_batch(samples, all);
}

ContextEmbedding embed_context(const DenoiserParams& params,
                               const SequenceBatch& batch) {
  if (batch.window != params.config.window) {
    throw DimensionError("batch window " + std::to_string(batch.window) +
                         " differs from model window " +
                         std::to_string(params.config.window));
  }
  ContextEmbedding ctx;
  ctx.history = ops::embedding_gather(params.entity, batch.history_objects);
  ctx.conditioning =
      ops::add(ops::embedding_gather(params.relation, batch.slot_relations),
               ops::embedding_gather(params.time_gap, batch.slot_gaps));
  return ctx;
}

Tensor denoise(const DenoiserParams& params, const Tensor& input,
               std::size_t step, std::span<const std::uint8_t> key_mask,
               bool train_mode, Rng* rng) {
  const DenoiserConfig& c = params.config;
  const std::size_t seq = c.window + 1;
  const std::size_t h = c.width;
  if (input.rank() != 2 || input.dim(1) != h || input.dim(0) % seq != 0) {
    throw DimensionError("denoise: input " + shape_to_string(input.shape()) +
                         " is not [N*" + std::to_string(seq) + " x " +
                         std::to_string(h) + "]");
  }
  if (step < 1 || step > c.steps) {
    throw IndexError("denoise: step " + std::to_string(step) +
                     " outside [1, " + std::to_string(c.steps) + "]");
  }
  const bool use_dropout = train_mode && c.dropout > 0.0;
  if (use_dropout && rng == nullptr) {
    throw ContractError("denoise: training mode with dropout needs an rng");
  }
  const std::size_t n = input.dim(0) / seq;

  const std::size_t step_row = step - 1;
  Tensor step_emb = ops::reshape(
      ops::embedding_gather(params.step, std::span(&step_row, 1)), {h});
  Tensor x = ops::reshape(input, {n, seq, h});
  x = ops::add(x, params.position);
  x = ops::add(x, step_emb);
  x = ops::reshape(x, {n * seq, h});

  Rng dummy(0);
  Rng& r = rng ? *rng : dummy;
  for (const EncoderLayerParams& l : params.layers) {
    Tensor a = ops::layer_norm(x, l.norm1_gain, l.norm1_bias);
    Tensor q = linear(a, l.query_weight, l.query_bias);
    Tensor k = linear(a, l.key_weight, l.key_bias);
    Tensor v = linear(a, l.value_weight, l.value_bias);
    Tensor ctx = ops::multi_head_attention(q, k, v, n, seq, c.heads, key_mask);
    Tensor attn = linear(ctx, l.output_weight, l.output_bias);
    x = ops::add(x, ops::dropout(attn, c.dropout, r, use_dropout));

    Tensor b = ops::layer_norm(x, l.norm2_gain, l.norm2_bias);
    Tensor hidden = ops::relu(linear(b, l.ffn_in_weight, l.ffn_in_bias));
    Tensor ffn = linear(hidden, l.ffn_out_weight, l.ffn_out_bias);
    x = ops::add(x, ops::dropout(ffn, c.dropout, r, use_dropout));
  }

  std::vector<std::size_t> target_rows(n);
  for (std::size_t i = 0; i < n; ++i) target_rows[i] = i * seq + c.window;
  Tensor target = ops::embedding_gather(x, target_rows);
  return ops::layer_norm(target, params.final_gain, params.final_bias);
}

Tensor score_entities(const Tensor& prediction, const Tensor& table,
                      double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("temperature must be positive, got " +
                      std::to_string(temperature));
  }
  return ops::softmax(ops::matmul_transposed(prediction, table), temperature);
}

}  // namespace nadex
