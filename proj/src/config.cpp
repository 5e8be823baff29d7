#include "nadex/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>
#include <variant>

#include "nadex/errors.hpp"

namespace nadex {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>,
              "seed is stored through the std::size_t field slot");

using Field = std::variant<std::string RunConfig::*, std::int64_t RunConfig::*,
                           std::size_t RunConfig::*, double RunConfig::*,
                           bool RunConfig::*>;

struct Entry {
  const char* key;
  Field field;
};

const std::vector<Entry>& fields() {
  static const std::vector<Entry> table = {
      {"data_dir", &RunConfig::data_dir},
      {"time_granularity", &RunConfig::time_granularity},
      {"window", &RunConfig::window},
      {"gap_bins", &RunConfig::gap_bins},
      {"width", &RunConfig::width},
      {"layers", &RunConfig::layers},
      {"heads", &RunConfig::heads},
      {"ffn_width", &RunConfig::ffn_width},
      {"dropout", &RunConfig::dropout},
      {"tie_scoring", &RunConfig::tie_scoring},
      {"steps", &RunConfig::steps},
      {"noise_scale", &RunConfig::noise_scale},
      {"alpha_min", &RunConfig::alpha_min},
      {"alpha_max", &RunConfig::alpha_max},
      {"lambda", &RunConfig::lambda},
      {"gamma", &RunConfig::gamma},
      {"temperature", &RunConfig::temperature},
      {"exclude_same_gold", &RunConfig::exclude_same_gold},
      {"learning_rate", &RunConfig::learning_rate},
      {"epochs", &RunConfig::epochs},
      {"max_batch", &RunConfig::max_batch},
      {"max_steps", &RunConfig::max_steps},
      {"seed", &RunConfig::seed},
      {"checkpoint", &RunConfig::checkpoint},
      {"eval_every", &RunConfig::eval_every},
      {"eval_repeats", &RunConfig::eval_repeats},
      {"eval_threads", &RunConfig::eval_threads},
      {"iterative_sampling", &RunConfig::iterative_sampling},
  };
  return table;
}

std::string trim(std::string s) {
  const char* ws = " \t\r\n";
  const auto first = s.find_first_not_of(ws);
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(ws);
  return s.substr(first, last - first + 1);
}

template <class Int>
Int parse_integer(const std::string& key, const std::string& value) {
  Int out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" +
                      value + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" +
                      value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" +
                    value + "'");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  for (const Entry& e : fields()) {
    if (key != e.key) continue;
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, std::string>) {
            this->*member = value;
          } else if constexpr (std::is_same_v<T, bool>) {
            this->*member = parse_bool(key, value);
          } else if constexpr (std::is_same_v<T, double>) {
            this->*member = parse_double(key, value);
          } else {
            this->*member = parse_integer<T>(key, value);
          }
        },
        e.field);
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("expected key=value, got '" + assignment + "'");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Entry& e : fields()) {
    std::string text = std::visit(
        [&](auto member) -> std::string {
          using T = std::remove_cvref_t<decltype(this->*member)>;
          const T& v = this->*member;
          if constexpr (std::is_same_v<T, std::string>) {
            return v;
          } else if constexpr (std::is_same_v<T, bool>) {
            return v ? "true" : "false";
          } else if constexpr (std::is_same_v<T, double>) {
            return format_double(v);
          } else {
            return std::to_string(v);
          }
        },
        e.field);
    out.emplace_back(e.key, std::move(text));
  }
  return out;
}

void RunConfig::validate() const {
  if (time_granularity <= 0) throw ConfigError("time_granularity must be > 0");
  if (epochs == 0) throw ConfigError("epochs must be > 0");
  if (eval_every == 0) throw ConfigError("eval_every must be > 0");
  if (eval_repeats == 0) throw ConfigError("eval_repeats must be > 0");
  if (eval_threads == 0) throw ConfigError("eval_threads must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (max_batch < 2) throw ConfigError("max_batch must be >= 2");
  denoiser_config().validate();
  NoiseSchedule::build(schedule_config());
  loss_config().validate();
}

DatasetOptions RunConfig::dataset_options() const {
  return {time_granularity, window, gap_bins};
}

DenoiserConfig RunConfig::denoiser_config() const {
  DenoiserConfig c;
  c.width = width;
  c.layers = layers;
  c.heads = heads;
  c.ffn_width = ffn_width;
  c.dropout = dropout;
  c.window = window;
  c.steps = steps;
  c.gap_bins = gap_bins;
  c.tie_scoring_table = tie_scoring;
  return c;
}

ScheduleConfig RunConfig::schedule_config() const {
  return {steps, noise_scale, alpha_min, alpha_max};
}

LossConfig RunConfig::loss_config() const {
  LossConfig c;
  c.lambda = lambda;
  c.gamma = gamma;
  c.temperature = temperature;
  return c;
}

AdamConfig RunConfig::adam_config() const {
  AdamConfig c;
  c.learning_rate = learning_rate;
  return c;
}

NegativeSamplingOptions RunConfig::negative_options() const {
  return {exclude_same_gold};
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.seed = seed;
  o.repeats = eval_repeats;
  o.threads = eval_threads;
  o.iterative = iterative_sampling;
  return o;
}

RunConfig parse_config(std::istream& in) {
  RunConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      config.apply(line);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_config(in);
}

std::string config_to_text(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& [key, value] : config.entries()) {
    os << key << '=' << value << '\n';
  }
  return os.str();
}

}  // namespace nadex
