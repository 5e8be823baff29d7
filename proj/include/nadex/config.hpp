#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "nadex/adam.hpp"
#include "nadex/data.hpp"
#include "nadex/denoiser.hpp"
#include "nadex/diffusion.hpp"
#include "nadex/eval.hpp"
#include "nadex/negsample.hpp"
#include "nadex/objectives.hpp"

namespace nadex {

// Flat run configuration. Text form is one `key=value` per line; `#` starts a
// comment. Unknown keys are rejected.
struct RunConfig {
  std::string data_dir;
  std::int64_t time_granularity = 24;
  std::size_t window = 32;
  std::size_t gap_bins = 512;

  std::size_t width = 200;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_width = 0;
  double dropout = 0.2;
  bool tie_scoring = true;

  std::size_t steps = 50;
  double noise_scale = 1.0;
  double alpha_min = 0.01;
  double alpha_max = 0.99;

  double lambda = 0.5;
  double gamma = 1.0;
  double temperature = 0.5;
  bool exclude_same_gold = false;

  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t max_batch = 512;
  // Total optimisation steps across all epochs; 0 means unlimited.
  std::size_t max_steps = 0;
  std::uint64_t seed = 0;

  std::string checkpoint = "nadex.ckpt";
  std::size_t eval_every = 1;
  std::size_t eval_repeats = 1;
  std::size_t eval_threads = 1;
  bool iterative_sampling = false;

  void set(const std::string& key, const std::string& value);
  // Applies "key=value".
  void apply(const std::string& assignment);
  std::vector<std::pair<std::string, std::string>> entries() const;
  void validate() const;

  DatasetOptions dataset_options() const;
  DenoiserConfig denoiser_config() const;
  ScheduleConfig schedule_config() const;
  LossConfig loss_config() const;
  AdamConfig adam_config() const;
  NegativeSamplingOptions negative_options() const;
  EvalOptions eval_options() const;

  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_text(const RunConfig& config);

}  // namespace nadex
