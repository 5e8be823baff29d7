#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nadex/config.hpp"
#include "nadex/eval.hpp"
#include "nadex/objectives.hpp"

namespace nadex::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitVersion = 3;
inline constexpr int kExitUnknownId = 4;
inline constexpr int kExitNumeric = 5;

struct TrainOutcome {
  std::vector<EpochSummary> epochs;
  // (epoch, valid MRR) for every evaluation pass.
  std::vector<std::pair<std::size_t, double>> valid_mrr;
  std::size_t best_epoch = 0;
  double best_valid_mrr = 0.0;
  std::size_t total_steps = 0;
};

// Trains per `config`, logging tab-separated epoch and validation lines to
// `log`, and writes the best-validation checkpoint to config.checkpoint.
TrainOutcome run_training(const RunConfig& config, std::ostream& log);

struct EvalRequest {
  std::string checkpoint;
  std::string split = "test";
  bool unseen_only = false;
  bool tsv = false;
  std::string out_path;
  std::string data_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> repeats;
};

MetricReport run_eval(const EvalRequest& request, std::ostream& out);

struct PredictRequest {
  std::string checkpoint;
  std::size_t subject = 0;
  std::size_t relation = 0;
  // Raw timestamp in the dataset's units.
  std::int64_t time = 0;
  std::size_t top_k = 10;
  std::string data_dir;
  std::optional<std::uint64_t> seed;
  // Noise draws averaged before ranking; defaults to the checkpoint config.
  std::optional<std::size_t> repeats;
};

struct Prediction {
  std::size_t entity;
  double score;
  std::string label;
};

std::vector<Prediction> run_predict(const PredictRequest& request,
                                    std::ostream& out);

void run_inspect_schedule(const RunConfig& config, std::ostream& out);

// Applies NADEX_SEED from the environment when set.
void apply_environment(RunConfig& config);

// Entry point shared by the executable and tests. Errors are reported on
// `err` as one line "error: <kind>: <message>".
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nadex::cli
