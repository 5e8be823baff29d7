#include <doctest.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nadex/checkpoint.hpp"
#include "nadex/cli.hpp"
#include "nadex/config.hpp"
#include "nadex/errors.hpp"
#include "support/synthetic.hpp"

using namespace nadex;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "nadex");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Runs the real executable; stderr is folded into `out`.
CliResult run_binary(const std::string& args) {
  const std::string cmd = std::string(NADEX_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 512> buf;
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

RunConfig small_run(const fs::path& data, const fs::path& ckpt) {
  RunConfig c;
  c.data_dir = data.string();
  c.checkpoint = ckpt.string();
  c.time_granularity = 1;
  c.window = 4;
  c.gap_bins = 16;
  c.width = 16;
  c.layers = 1;
  c.heads = 2;
  c.dropout = 0.0;
  c.steps = 10;
  c.alpha_min = 0.5;
  c.learning_rate = 0.01;
  c.epochs = 3;
  c.seed = 7;
  return c;
}

fs::path cyclic_dir(const std::string& tag) {
  const fs::path dir = nadex::testing::scratch_dir(tag);
  nadex::testing::write_dataset_dir(dir / "data", nadex::testing::cyclic_tkg(), 1);
  return dir;
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("config text parsing") {
  std::istringstream in(
      "# comment\n"
      "width = 64\n"
      "\n"
      "lambda=0.25   # trailing comment\n"
      "tie_scoring=false\n"
      "data_dir=/tmp/x\n");
  RunConfig c = parse_config(in);
  CHECK(c.width == 64);
  CHECK(c.lambda == 0.25);
  CHECK_FALSE(c.tie_scoring);
  CHECK(c.data_dir == "/tmp/x");
  CHECK(c.layers == 2);

  std::istringstream unknown("widht=3\n");
  try {
    parse_config(unknown);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("widht") != std::string::npos);
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  std::istringstream bad_number("learning_rate=fast\n");
  CHECK_THROWS_AS(parse_config(bad_number), ConfigError);
  std::istringstream no_equals("width\n");
  CHECK_THROWS_AS(parse_config(no_equals), ConfigError);

  c.apply("width=32");
  CHECK(c.width == 32);
  CHECK_THROWS_AS(c.apply("nope=1"), ConfigError);

  std::istringstream again(config_to_text(c));
  CHECK(parse_config(again) == c);
}

TEST_CASE("config validation covers downstream constraints") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  c.noise_scale = 1.0 / 0.99;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.width = 10;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lambda = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.max_batch = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("checkpoint round trip is bitwise") {
  RunConfig config;
  config.width = 8;
  config.heads = 2;
  config.layers = 1;
  config.window = 3;
  config.steps = 4;
  config.gap_bins = 5;
  config.tie_scoring = false;
  Vocabulary vocab{6, 2, 11};
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.vocab = vocab;
  ckpt.params = init_params(config.denoiser_config(), vocab, 3);
  ckpt.adam = make_adam_state(ckpt.params.tensors(), config.adam_config());
  ckpt.adam.step = 17;
  Rng rng(5);
  for (auto& m : ckpt.adam.first_moment) {
    for (double& v : m) v = rng.normal();
  }
  for (auto& m : ckpt.adam.second_moment) {
    for (double& v : m) v = rng.uniform01();
  }
  ckpt.epoch = 9;
  ckpt.best_epoch = 4;
  ckpt.best_valid_mrr = 0.123456789012345;
  ckpt.rng_state = rng.state();

  std::stringstream ss;
  write_checkpoint(ss, ckpt);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "NADX");
  Checkpoint back = read_checkpoint(ss);

  CHECK(back.config == config);
  CHECK(back.vocab.num_entities == 6);
  CHECK(back.vocab.num_base_relations == 2);
  CHECK(back.vocab.max_time == 11);
  const auto a = ckpt.params.tensors();
  const auto b = back.params.tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name() == b[i].name());
    CHECK(a[i].shape() == b[i].shape());
    CHECK(same_bits(a[i].data(), b[i].data()));
    CHECK(b[i].requires_grad());
  }
  CHECK(back.adam.step == 17);
  CHECK(back.adam.config.learning_rate == config.learning_rate);
  CHECK(back.adam.first_moment == ckpt.adam.first_moment);
  CHECK(back.adam.second_moment == ckpt.adam.second_moment);
  CHECK(back.epoch == 9);
  CHECK(back.best_epoch == 4);
  CHECK(back.best_valid_mrr == ckpt.best_valid_mrr);
  CHECK(back.rng_state == ckpt.rng_state);
  Rng restored(0);
  restored.set_state(back.rng_state);
  CHECK(restored.normal() == rng.normal());

  std::stringstream again;
  write_checkpoint(again, back);
  CHECK(again.str() == bytes);
}

TEST_CASE("checkpoint corruption is detected") {
  RunConfig config;
  config.width = 4;
  config.heads = 2;
  config.layers = 1;
  config.window = 2;
  config.steps = 3;
  config.gap_bins = 4;
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.vocab = {3, 1, 2};
  ckpt.params = init_params(config.denoiser_config(), ckpt.vocab, 1);
  ckpt.adam = make_adam_state(ckpt.params.tensors(), config.adam_config());
  std::stringstream ss;
  write_checkpoint(ss, ckpt);
  const std::string bytes = ss.str();

  std::string versioned = bytes;
  versioned[4] = 2;
  std::istringstream v(versioned);
  CHECK_THROWS_AS(read_checkpoint(v), VersionError);

  std::string magic = bytes;
  magic[0] = 'X';
  std::istringstream m(magic);
  CHECK_THROWS_AS(read_checkpoint(m), ParseError);

  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(truncated), ParseError);

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/nadex.ckpt"), IoError);
}

TEST_CASE("inspect-schedule output") {
  CliResult r = run_cli({"inspect-schedule"});
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string line, last;
  std::getline(lines, line);
  CHECK(line == "m\tone_minus_alpha_bar\tsqrt_alpha_bar");
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    last = line;
  }
  CHECK(rows == 50);
  CHECK(last.rfind("50\t0.98999999999999999\t", 0) == 0);
  CHECK(std::stod(last.substr(3)) == 0.99);

  CliResult two = run_cli({"inspect-schedule", "steps=2", "alpha_min=0.2",
                           "alpha_max=0.7"});
  REQUIRE(two.code == 0);
  std::istringstream two_lines(two.out);
  std::getline(two_lines, line);
  std::vector<double> values;
  while (std::getline(two_lines, line)) {
    const auto tab = line.find('\t');
    values.push_back(std::stod(line.substr(tab + 1)));
  }
  CHECK(values == std::vector<double>{0.2, 0.7});

  CliResult bad = run_cli({"inspect-schedule", "noise_scale=1.2"});
  CHECK(bad.code == cli::kExitConfig);
  CHECK(bad.err.rfind("error: config: ", 0) == 0);
  CHECK(bad.err.find("signal coefficient") != std::string::npos);
  CHECK(std::count(bad.err.begin(), bad.err.end(), '\n') == 1);
}

TEST_CASE("config file plus overrides, override wins") {
  const fs::path dir = nadex::testing::scratch_dir("cfg");
  {
    std::ofstream f(dir / "run.cfg");
    f << "steps=3\nalpha_min=0.1\nalpha_max=0.5\n";
  }
  CliResult r = run_cli({"inspect-schedule", "-c", (dir / "run.cfg").string(),
                         "alpha_max=0.3"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("3\t0.29999999999999999") != std::string::npos);
  CliResult missing = run_cli({"inspect-schedule", "-c", (dir / "nope.cfg").string()});
  CHECK(missing.code == cli::kExitConfig);
  CHECK(missing.err.rfind("error: io: ", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("usage errors") {
  CHECK(run_cli({}).code == cli::kExitConfig);
  CliResult r = run_cli({"frobnicate"});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.rfind("error: usage: ", 0) == 0);
  CHECK(run_cli({"eval"}).code == cli::kExitConfig);
}

TEST_CASE("NADEX_SEED overrides the config seed") {
  RunConfig c;
  c.seed = 3;
  ::setenv("NADEX_SEED", "42", 1);
  cli::apply_environment(c);
  CHECK(c.seed == 42);
  ::setenv("NADEX_SEED", "abc", 1);
  CHECK_THROWS_AS(cli::apply_environment(c), ConfigError);
  ::unsetenv("NADEX_SEED");
  c.seed = 3;
  cli::apply_environment(c);
  CHECK(c.seed == 3);
}

TEST_CASE("missing train split") {
  const fs::path dir = nadex::testing::scratch_dir("missing");
  CliResult r = run_cli({"train", "data_dir=" + (dir / "none").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("train split not found") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("training, best checkpoint and evaluation") {
  const fs::path dir = cyclic_dir("train");
  const RunConfig config = small_run(dir / "data", dir / "best.ckpt");

  std::ostringstream log1, log2;
  const cli::TrainOutcome a = cli::run_training(config, log1);
  const cli::TrainOutcome b = cli::run_training(config, log2);
  REQUIRE(a.epochs.size() == 3);
  CHECK(a.epochs[0].total == b.epochs[0].total);
  CHECK(a.epochs[0].reconstruction == b.epochs[0].reconstruction);

  // Log lines: "<epoch>\tL_r\tL_neg\tL_total\tseconds" and "valid\t<epoch>\t...".
  std::istringstream lines(log1.str());
  std::string line;
  std::size_t epoch_lines = 0;
  double best_logged = -1.0;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string head;
    std::getline(fields, head, '\t');
    if (head == "valid") {
      std::string epoch, mrr;
      std::getline(fields, epoch, '\t');
      std::getline(fields, mrr, '\t');
      best_logged = std::max(best_logged, std::stod(mrr));
    } else {
      ++epoch_lines;
      CHECK(std::count(line.begin(), line.end(), '\t') == 4);
    }
  }
  CHECK(epoch_lines == 3);
  REQUIRE(a.valid_mrr.size() == 3);

  const Checkpoint best = load_checkpoint(config.checkpoint);
  double best_mrr = 0.0;
  for (const auto& [epoch, mrr] : a.valid_mrr) best_mrr = std::max(best_mrr, mrr);
  CHECK(best.best_valid_mrr == best_mrr);
  CHECK(std::abs(best.best_valid_mrr - best_logged) <= 5e-7);
  CHECK(best.config == config);
  CHECK(best.epoch == a.best_epoch);

  // Evaluating the stored best checkpoint on valid reproduces its MRR.
  cli::EvalRequest req;
  req.checkpoint = config.checkpoint;
  req.split = "valid";
  req.tsv = true;
  req.out_path = (dir / "valid.tsv").string();
  std::ostringstream out;
  const MetricReport report = cli::run_eval(req, out);
  CHECK(report.mrr == best.best_valid_mrr);
  std::istringstream tsv(out.str());
  const MetricReport parsed = read_report_tsv(tsv);
  CHECK(parsed.mrr == report.mrr);
  CHECK(parsed.hits10 == report.hits10);
  CHECK(parsed.query_count == report.query_count);
  std::ifstream file(req.out_path);
  CHECK(read_report_tsv(file).mrr == report.mrr);

  // The cyclic graph repeats every pair, so nothing in test is unseen.
  req.split = "test";
  req.unseen_only = true;
  req.out_path.clear();
  try {
    cli::run_eval(req, out);
    FAIL("expected an empty-subset error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("empty subset") != std::string::npos);
  }
  CliResult r = run_cli({"eval", "--checkpoint", config.checkpoint,
                         "--split", "test", "--unseen-only"});
  CHECK(r.code == cli::kExitFailure);
  CHECK(r.err.rfind("error: contract: empty subset", 0) == 0);

  CliResult table = run_cli({"eval", "--checkpoint", config.checkpoint});
  CHECK(table.code == 0);
  CHECK(table.out.find("Hits@10") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("prediction lists") {
  const fs::path dir = cyclic_dir("predict");
  RunConfig config = small_run(dir / "data", dir / "m.ckpt");
  config.epochs = 1;
  std::ostringstream log;
  cli::run_training(config, log);
  {
    std::ofstream labels(dir / "data" / "entity2id.txt");
    for (int e = 0; e < 5; ++e) labels << "entity_" << e << '\t' << e << '\n';
  }

  cli::PredictRequest req;
  req.checkpoint = config.checkpoint;
  req.subject = 2;
  req.relation = 1;
  req.time = 60;
  req.top_k = 5;
  std::ostringstream out;
  const auto all = cli::run_predict(req, out);
  REQUIRE(all.size() == 5);
  std::vector<std::size_t> ids;
  double total = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    ids.push_back(all[i].entity);
    total += all[i].score;
    if (i) CHECK(all[i - 1].score >= all[i].score);
    CHECK(all[i].label == "entity_" + std::to_string(all[i].entity));
  }
  std::sort(ids.begin(), ids.end());
  CHECK(ids == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.str().rfind("1\t", 0) == 0);

  req.top_k = 1;
  std::ostringstream one;
  const auto top = cli::run_predict(req, one);
  REQUIRE(top.size() == 1);
  CHECK(top[0].entity == all[0].entity);

  req.subject = 5;
  CHECK_THROWS_AS(cli::run_predict(req, one), IndexError);
  CliResult r = run_cli({"predict", "--checkpoint", config.checkpoint,
                         "--subject", "99", "--relation", "0", "--time", "60"});
  CHECK(r.code == cli::kExitUnknownId);
  CHECK(r.err.rfind("error: index: unknown entity id 99", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("a trained model predicts the next object of a deterministic chain") {
  const fs::path dir = nadex::testing::scratch_dir("chain");
  // No valid split, so the checkpoint holds the last epoch.
  nadex::testing::write_dataset_dir(dir / "data", nadex::testing::twenty_fact_tkg(), 1);
  RunConfig c;
  c.data_dir = (dir / "data").string();
  c.checkpoint = (dir / "chain.ckpt").string();
  c.time_granularity = 1;
  c.window = 2;
  c.gap_bins = 8;
  c.width = 32;
  c.layers = 1;
  c.heads = 4;
  c.dropout = 0.0;
  c.steps = 10;
  c.learning_rate = 0.01;
  c.epochs = 25;
  c.seed = 1;
  std::ostringstream log;
  cli::run_training(c, log);

  // The history ends ... 3, 4, so the walk continues with 1.
  cli::PredictRequest req;
  req.checkpoint = c.checkpoint;
  req.subject = 0;
  req.relation = 0;
  req.time = 20;
  req.top_k = 4;
  // One pure-noise draw can land on the wrong object; average several.
  req.repeats = 16;
  std::ostringstream out;
  const auto top = cli::run_predict(req, out);
  CHECK_MESSAGE(top[0].entity == 1, out.str());
  fs::remove_all(dir);
}

TEST_CASE("exit codes from the executable") {
  const fs::path dir = cyclic_dir("exit");
  RunConfig config = small_run(dir / "data", dir / "m.ckpt");
  config.epochs = 1;
  std::ostringstream log;
  cli::run_training(config, log);

  CHECK(run_binary("inspect-schedule").code == 0);
  CliResult schedule = run_binary("inspect-schedule noise_scale=2");
  CHECK(schedule.code == 2);
  CHECK(schedule.out.rfind("error: config: ", 0) == 0);

  CliResult missing =
      run_binary("train data_dir=" + (dir / "absent").string());
  CHECK(missing.code == 2);
  CHECK(missing.out.find("train split not found") != std::string::npos);

  // Bump the version field of a copy of the checkpoint.
  std::string bytes;
  {
    std::ifstream in(config.checkpoint, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  bytes[4] = 9;
  {
    std::ofstream out(dir / "future.ckpt", std::ios::binary);
    out << bytes;
  }
  CliResult version =
      run_binary("eval --checkpoint " + (dir / "future.ckpt").string());
  CHECK(version.code == 3);
  CHECK(version.out.rfind("error: version: ", 0) == 0);

  CliResult unknown = run_binary("predict --checkpoint " + config.checkpoint +
                                 " --subject 77 --relation 0 --time 3");
  CHECK(unknown.code == 4);

  CliResult ok = run_binary("predict --checkpoint " + config.checkpoint +
                            " --subject 1 --relation 0 --time 60 --top-k 2");
  CHECK(ok.code == 0);
  CHECK(std::count(ok.out.begin(), ok.out.end(), '\n') == 2);
  fs::remove_all(dir);
}
