#include "nadex/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "nadex/checkpoint.hpp"
#include "nadex/errors.hpp"
#include "nadex/ops.hpp"

namespace nadex::cli {

namespace {

std::string fmt(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

Dataset load_for(const RunConfig& config, const std::string& data_dir) {
  const std::string dir = data_dir.empty() ? config.data_dir : data_dir;
  if (dir.empty()) throw ConfigError("data_dir is not set");
  const auto train = std::filesystem::path(dir) / "train.txt";
  if (!std::filesystem::exists(train)) {
    throw IoError("train split not found: " + train.string());
  }
  return load_dataset(dir, config.dataset_options());
}

void check_vocab(const Vocabulary& stored, const Vocabulary& data) {
  if (stored.num_entities != data.num_entities ||
      stored.num_base_relations != data.num_base_relations) {
    throw ValidationError(
        "dataset vocabulary (" + std::to_string(data.num_entities) +
        " entities, " + std::to_string(data.num_base_relations) +
        " relations) does not match the checkpoint (" +
        std::to_string(stored.num_entities) + ", " +
        std::to_string(stored.num_base_relations) + ")");
  }
}

}  // namespace

void apply_environment(RunConfig& config) {
  if (const char* seed = std::getenv("NADEX_SEED"); seed && *seed) {
    config.set("seed", seed);
  }
}

TrainOutcome run_training(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Dataset data = load_for(config, "");
  if (data.train_samples.empty()) throw ConfigError("train split is empty");

  DenoiserParams params =
      init_params(config.denoiser_config(), data.vocab, config.seed);
  Trainer trainer(params, NoiseSchedule::build(config.schedule_config()),
                  config.loss_config(), config.adam_config(),
                  config.seed ^ 0x5eedULL, config.negative_options());
  const auto batches = batch_by_timestamp(data.train_samples, config.max_batch);
  const FilterIndex filter =
      build_filter_index({data.train, data.valid, data.test});

  log << "# parameters\t" << trainer.params().parameter_count() << '\n';
  log << "# epoch\tL_r\tL_neg\tL_total\tseconds\n";

  TrainOutcome outcome;
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::size_t budget = 0;
    if (config.max_steps) {
      if (outcome.total_steps >= config.max_steps) break;
      budget = config.max_steps - outcome.total_steps;
    }
    const EpochSummary s =
        trainer.train_epoch(batches, data.train_samples, budget);
    outcome.total_steps += s.steps;
    outcome.epochs.push_back(s);
    log << epoch << '\t' << fmt(s.reconstruction) << '\t' << fmt(s.negative)
        << '\t' << fmt(s.total) << '\t' << fmt(s.seconds, 3) << '\n';

    const bool last = epoch == config.epochs ||
                      (config.max_steps && outcome.total_steps >= config.max_steps);
    if (epoch % config.eval_every != 0 && !last) continue;

    double mrr = 0.0;
    if (!data.valid_samples.empty()) {
      const MetricReport report =
          evaluate(data.valid_samples, trainer.params(), trainer.schedule(),
                   filter, config.eval_options());
      mrr = report.mrr;
      outcome.valid_mrr.emplace_back(epoch, mrr);
      log << "valid\t" << epoch << '\t' << fmt(report.mrr) << '\t'
          << fmt(report.hits1) << '\t' << fmt(report.hits3) << '\t'
          << fmt(report.hits10) << '\n';
    }
    // Strict improvement keeps the earlier epoch on ties. Without a valid
    // split the latest epoch is kept.
    if (!have_best || mrr > outcome.best_valid_mrr ||
        data.valid_samples.empty()) {
      have_best = true;
      outcome.best_valid_mrr = mrr;
      outcome.best_epoch = epoch;
      Checkpoint ckpt;
      ckpt.config = config;
      ckpt.vocab = data.vocab;
      ckpt.params = trainer.params();
      ckpt.adam = trainer.adam();
      ckpt.epoch = epoch;
      ckpt.best_epoch = epoch;
      ckpt.best_valid_mrr = mrr;
      ckpt.rng_state = trainer.rng().state();
      save_checkpoint(config.checkpoint, ckpt);
    }
  }
  log << "# best\t" << outcome.best_epoch << '\t'
      << fmt(outcome.best_valid_mrr) << '\n';
  return outcome;
}

MetricReport run_eval(const EvalRequest& request, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(request.checkpoint);
  RunConfig config = ckpt.config;
  if (request.seed) config.seed = *request.seed;
  if (request.repeats) config.eval_repeats = *request.repeats;
  const Dataset data = load_for(config, request.data_dir);
  check_vocab(ckpt.vocab, data.vocab);

  const Split split = parse_split(request.split);
  const auto& samples = samples_for(data, split);
  if (samples.empty()) {
    throw ContractError(std::string("split '") + split_name(split) +
                        "' has no queries");
  }
  const FilterIndex filter =
      build_filter_index({data.train, data.valid, data.test});
  const NoiseSchedule schedule = NoiseSchedule::build(config.schedule_config());

  std::vector<std::size_t> indices;
  if (request.unseen_only) {
    indices = unseen_indices(samples, data.train);
    if (indices.empty()) {
      throw ContractError("empty subset: split '" + request.split +
                          "' has no unseen queries");
    }
  } else {
    indices.resize(samples.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
  }
  const MetricReport report = evaluate_subset(
      samples, indices, ckpt.params, schedule, filter, config.eval_options());

  if (request.tsv) {
    write_report_tsv(out, report);
  } else {
    std::string title = std::string(split_name(split));
    if (request.unseen_only) title += " [unseen (s,r,o) subset]";
    write_report_table(out, report, title);
  }
  if (!request.out_path.empty()) {
    std::ofstream file(request.out_path);
    if (!file) throw IoError("cannot write " + request.out_path);
    write_report_tsv(file, report);
  }
  return report;
}

std::vector<Prediction> run_predict(const PredictRequest& request,
                                    std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(request.checkpoint);
  RunConfig config = ckpt.config;
  if (request.seed) config.seed = *request.seed;
  if (request.repeats) config.eval_repeats = *request.repeats;
  if (config.eval_repeats == 0) throw ConfigError("repeats must be >= 1");
  if (request.subject >= ckpt.vocab.num_entities) {
    throw IndexError("unknown entity id " + std::to_string(request.subject) +
                     " (vocabulary has " +
                     std::to_string(ckpt.vocab.num_entities) + ")");
  }
  if (request.relation >= ckpt.vocab.num_relations()) {
    throw IndexError("unknown relation id " + std::to_string(request.relation) +
                     " (vocabulary has " +
                     std::to_string(ckpt.vocab.num_relations()) +
                     " incl. inverses)");
  }
  if (request.top_k == 0) throw ConfigError("top_k must be positive");
  const Dataset data = load_for(config, request.data_dir);
  check_vocab(ckpt.vocab, data.vocab);

  const std::int64_t query_time = request.time / config.time_granularity;
  std::vector<Quadruple> stream;
  for (const auto* split : {&data.train, &data.valid, &data.test}) {
    for (const Quadruple& q : *split) {
      if (q.time < query_time) stream.push_back(q);
    }
  }
  std::stable_sort(stream.begin(), stream.end(),
                   [](const Quadruple& a, const Quadruple& b) {
                     return a.time < b.time;
                   });
  stream.push_back({request.subject, request.relation, 0, query_time});
  auto samples = build_histories(stream, config.window, config.gap_bins);
  const std::vector<HistorySample> query{samples.back()};

  const NoiseSchedule schedule = NoiseSchedule::build(config.schedule_config());
  const std::size_t index = 0;
  std::vector<double> logits =
      score_queries(ckpt.params, schedule, query, std::span(&index, 1),
                    config.eval_options());
  const std::size_t entities = logits.size();
  const Tensor probs = ops::softmax(
      Tensor::from({1, entities}, std::move(logits)), config.temperature);

  std::vector<std::string> labels;
  const std::string dir =
      request.data_dir.empty() ? config.data_dir : request.data_dir;
  const auto label_path = std::filesystem::path(dir) / "entity2id.txt";
  if (std::filesystem::exists(label_path)) labels = load_labels(label_path);

  std::vector<std::size_t> order(entities);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = std::min(request.top_k, entities);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      if (probs[a] != probs[b]) return probs[a] > probs[b];
                      return a < b;
                    });
  std::vector<Prediction> result;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t e = order[i];
    Prediction p{e, probs[e], e < labels.size() ? labels[e] : std::string{}};
    out << (i + 1) << '\t' << e << '\t' << fmt(p.score, 8);
    if (!p.label.empty()) out << '\t' << p.label;
    out << '\n';
    result.push_back(std::move(p));
  }
  return result;
}

void run_inspect_schedule(const RunConfig& config, std::ostream& out) {
  const NoiseSchedule schedule = NoiseSchedule::build(config.schedule_config());
  out << "m\tone_minus_alpha_bar\tsqrt_alpha_bar\n";
  char buf[96];
  for (std::size_t m = 1; m <= schedule.steps(); ++m) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\n", m,
                  schedule.one_minus_alpha_bar(m),
                  schedule.signal_coefficient(m));
    out << buf;
  }
}

namespace {

RunConfig config_from(const std::string& path,
                      const std::vector<std::string>& overrides) {
  RunConfig config = path.empty() ? RunConfig{} : load_config(path);
  apply_environment(config);
  for (const std::string& o : overrides) config.apply(o);
  return config;
}

int exit_code_for(const Error& e) {
  const std::string& kind = e.kind();
  if (kind == "version") return kExitVersion;
  if (kind == "index") return kExitUnknownId;
  if (kind == "numeric") return kExitNumeric;
  if (kind == "config" || kind == "io" || kind == "parse" ||
      kind == "validation") {
    return kExitConfig;
  }
  return kExitFailure;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Negative-aware diffusion for temporal knowledge graph "
               "extrapolation"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("-c,--config", config_path, "key=value config file");
  train->add_option("overrides", overrides, "key=value overrides");

  EvalRequest eval_req;
  std::uint64_t eval_seed = 0;
  std::size_t eval_repeats = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_req.checkpoint)->required();
  eval->add_option("--split", eval_req.split, "train|valid|test");
  eval->add_flag("--unseen-only", eval_req.unseen_only,
                 "only queries whose (s,r,o) never occurs in training");
  eval->add_flag("--tsv", eval_req.tsv, "print tab-separated metrics");
  eval->add_option("--out", eval_req.out_path, "also write metrics TSV here");
  eval->add_option("--data-dir", eval_req.data_dir);
  auto* seed_opt = eval->add_option("--seed", eval_seed);
  auto* repeats_opt = eval->add_option("--repeats", eval_repeats);

  PredictRequest pred_req;
  auto* predict = app.add_subcommand("predict", "rank objects for (s, r, ?, t)");
  predict->add_option("--checkpoint", pred_req.checkpoint)->required();
  predict->add_option("--subject", pred_req.subject)->required();
  predict->add_option("--relation", pred_req.relation)->required();
  predict->add_option("--time", pred_req.time, "raw timestamp")->required();
  predict->add_option("--top-k", pred_req.top_k);
  predict->add_option("--data-dir", pred_req.data_dir);
  std::uint64_t pred_seed = 0;
  std::size_t pred_repeats = 0;
  auto* pred_seed_opt = predict->add_option("--seed", pred_seed);
  auto* pred_repeats_opt = predict->add_option(
      "--repeats", pred_repeats, "noise draws averaged per query");

  auto* inspect =
      app.add_subcommand("inspect-schedule", "print the noise schedule");
  inspect->add_option("-c,--config", config_path);
  inspect->add_option("overrides", overrides, "key=value overrides");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (*train) {
      run_training(config_from(config_path, overrides), out);
    } else if (*eval) {
      if (*seed_opt) eval_req.seed = eval_seed;
      if (*repeats_opt) eval_req.repeats = eval_repeats;
      run_eval(eval_req, out);
    } else if (*predict) {
      if (*pred_seed_opt) pred_req.seed = pred_seed;
      if (*pred_repeats_opt) pred_req.repeats = pred_repeats;
      run_predict(pred_req, out);
    } else if (*inspect) {
      run_inspect_schedule(config_from(config_path, overrides), out);
    }
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace nadex::cli
