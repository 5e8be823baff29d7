#include "nadex/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "nadex/errors.hpp"

namespace nadex {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == '\t' || line[i] == ' ' ||
                               line[i] == '\r')) {
      ++i;
    }
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != '\t' && line[j] != ' ' &&
           line[j] != '\r') {
      ++j;
    }
    fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

std::int64_t parse_int(std::string_view field, const std::string& source,
                       std::size_t line_no) {
  std::int64_t value = 0;
  auto [ptr, ec] =
      std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError(source + ":" + std::to_string(line_no) +
                     ": not an integer: '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

std::vector<Quadruple> parse_quadruples(std::istream& in,
                                        std::int64_t time_granularity,
                                        const std::string& source) {
  if (time_granularity <= 0) {
    throw ConfigError("time granularity must be positive, got " +
                      std::to_string(time_granularity));
  }
  std::vector<Quadruple> quads;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (fields.size() < 4) {
      throw ParseError(source + ":" + std::to_string(line_no) +
                       ": expected 4 tab-separated integers, got " +
                       std::to_string(fields.size()) + " fields");
    }
    std::int64_t v[4];
    for (int k = 0; k < 4; ++k) v[k] = parse_int(fields[k], source, line_no);
    for (int k = 0; k < 4; ++k) {
      if (v[k] < 0) {
        throw ValidationError(source + ":" + std::to_string(line_no) +
                              ": negative value " + std::to_string(v[k]));
      }
    }
    quads.push_back({static_cast<std::size_t>(v[0]),
                     static_cast<std::size_t>(v[1]),
                     static_cast<std::size_t>(v[2]), v[3] / time_granularity});
  }
  return quads;
}

std::vector<Quadruple> parse_quadruples(const std::filesystem::path& path,
                                        std::int64_t time_granularity) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_quadruples(in, time_granularity, path.string());
}

void write_quadruples(std::ostream& out, std::span<const Quadruple> quads,
                      std::int64_t time_granularity) {
  for (const Quadruple& q : quads) {
    out << q.subject << '\t' << q.relation << '\t' << q.object << '\t'
        << q.time * time_granularity << '\n';
  }
}

Vocabulary build_vocabulary(
    std::initializer_list<std::span<const Quadruple>> splits) {
  Vocabulary vocab;
  for (auto split : splits) {
    for (const Quadruple& q : split) {
      vocab.num_entities =
          std::max({vocab.num_entities, q.subject + 1, q.object + 1});
      vocab.num_base_relations =
          std::max(vocab.num_base_relations, q.relation + 1);
      vocab.max_time = std::max(vocab.max_time, q.time);
    }
  }
  return vocab;
}

std::vector<Quadruple> augment_inverse(std::span<const Quadruple> quads,
                                       const Vocabulary& vocab) {
  std::vector<Quadruple> out;
  out.reserve(2 * quads.size());
  for (const Quadruple& q : quads) {
    if (q.relation >= vocab.num_base_relations) {
      throw ContractError("augment_inverse: relation " +
                          std::to_string(q.relation) + " is not below " +
                          std::to_string(vocab.num_base_relations) +
                          " (already augmented?)");
    }
    out.push_back(q);
    out.push_back({q.object, q.relation + vocab.num_base_relations, q.subject,
                   q.time});
  }
  return out;
}

std::size_t HistorySample::history_length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

std::vector<HistorySample> build_histories(std::span<const Quadruple> stream,
                                           std::size_t window,
                                           std::size_t gap_bins) {
  if (window == 0) throw ConfigError("history window must be positive");
  if (gap_bins < 2) throw ConfigError("need at least 2 time-gap bins");
  for (std::size_t i = 1; i < stream.size(); ++i) {
    if (stream[i].time < stream[i - 1].time) {
      throw ContractError("build_histories: stream not sorted by time at " +
                          std::to_string(i));
    }
  }

  struct Event {
    std::size_t object;
    std::size_t relation;
    std::int64_t time;
  };
  std::unordered_map<std::size_t, std::vector<Event>> past;
  std::vector<HistorySample> samples;
  samples.reserve(stream.size());

  std::size_t begin = 0;
  while (begin < stream.size()) {
    std::size_t end = begin;
    while (end < stream.size() && stream[end].time == stream[begin].time) ++end;

    for (std::size_t i = begin; i < end; ++i) {
      const Quadruple& q = stream[i];
      HistorySample s;
      s.subject = q.subject;
      s.relation = q.relation;
      s.object = q.object;
      s.time = q.time;
      s.objects.assign(window, 0);
      s.relations.assign(window, 0);
      s.time_gaps.assign(window, 0);
      s.mask.assign(window, 0);
      auto it = past.find(q.subject);
      if (it != past.end()) {
        const auto& events = it->second;
        const std::size_t take = std::min(window, events.size());
        const std::size_t first = events.size() - take;
        const std::size_t pad = window - take;
        for (std::size_t k = 0; k < take; ++k) {
          const Event& e = events[first + k];
          const auto gap = static_cast<std::size_t>(q.time - e.time);
          s.objects[pad + k] = e.object;
          s.relations[pad + k] = e.relation;
          s.time_gaps[pad + k] = std::min(gap, gap_bins - 1);
          s.mask[pad + k] = 1;
        }
      }
      samples.push_back(std::move(s));
    }
    for (std::size_t i = begin; i < end; ++i) {
      const Quadruple& q = stream[i];
      past[q.subject].push_back({q.object, q.relation, q.time});
    }
    begin = end;
  }
  return samples;
}

std::vector<TimestampBatch> batch_by_timestamp(
    std::span<const HistorySample> samples, std::size_t max_batch) {
  if (max_batch < 2) {
    throw ConfigError("max batch size must be at least 2, got " +
                      std::to_string(max_batch));
  }
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].time < samples[b].time;
  });

  std::vector<TimestampBatch> batches;
  std::size_t begin = 0;
  while (begin < order.size()) {
    const std::int64_t t = samples[order[begin]].time;
    std::size_t end = begin;
    while (end < order.size() && samples[order[end]].time == t) ++end;
    for (std::size_t chunk = begin; chunk < end; chunk += max_batch) {
      TimestampBatch batch;
      batch.time = t;
      const std::size_t stop = std::min(end, chunk + max_batch);
      batch.samples.assign(order.begin() + static_cast<std::ptrdiff_t>(chunk),
                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      batches.push_back(std::move(batch));
    }
    begin = end;
  }
  return batches;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "' (train|valid|test)");
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

Dataset make_dataset(std::vector<Quadruple> train, std::vector<Quadruple> valid,
                     std::vector<Quadruple> test,
                     const DatasetOptions& options) {
  auto by_time = [](const Quadruple& a, const Quadruple& b) {
    return a.time < b.time;
  };
  std::stable_sort(train.begin(), train.end(), by_time);
  std::stable_sort(valid.begin(), valid.end(), by_time);
  std::stable_sort(test.begin(), test.end(), by_time);

  Dataset data;
  data.vocab = build_vocabulary({train, valid, test});
  data.train = augment_inverse(train, data.vocab);
  data.valid = augment_inverse(valid, data.vocab);
  data.test = augment_inverse(test, data.vocab);

  // Build over the time-merged stream, then route each sample back to its
  // split. Ties keep split order (train, valid, test).
  std::vector<Quadruple> merged;
  std::vector<int> owner;
  merged.reserve(data.train.size() + data.valid.size() + data.test.size());
  {
    std::size_t a = 0, b = 0, c = 0;
    while (a < data.train.size() || b < data.valid.size() ||
           c < data.test.size()) {
      int pick = -1;
      std::int64_t best = 0;
      auto consider = [&](int who, const std::vector<Quadruple>& v,
                          std::size_t idx) {
        if (idx >= v.size()) return;
        if (pick < 0 || v[idx].time < best) {
          pick = who;
          best = v[idx].time;
        }
      };
      consider(0, data.train, a);
      consider(1, data.valid, b);
      consider(2, data.test, c);
      if (pick == 0) merged.push_back(data.train[a++]);
      if (pick == 1) merged.push_back(data.valid[b++]);
      if (pick == 2) merged.push_back(data.test[c++]);
      owner.push_back(pick);
    }
  }
  auto samples = build_histories(merged, options.window, options.gap_bins);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    switch (owner[i]) {
      case 0: data.train_samples.push_back(std::move(samples[i])); break;
      case 1: data.valid_samples.push_back(std::move(samples[i])); break;
      default: data.test_samples.push_back(std::move(samples[i])); break;
    }
  }
  return data;
}

Dataset load_dataset(const std::filesystem::path& dir,
                     const DatasetOptions& options) {
  const auto train_path = dir / "train.txt";
  if (!std::filesystem::exists(train_path)) {
    throw IoError("train split not found: " + train_path.string());
  }
  auto read_optional = [&](const char* name) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) return std::vector<Quadruple>{};
    return parse_quadruples(path, options.time_granularity);
  };
  auto train = parse_quadruples(train_path, options.time_granularity);
  return make_dataset(std::move(train), read_optional("valid.txt"),
                      read_optional("test.txt"), options);
}

const std::vector<HistorySample>& samples_for(const Dataset& data, Split split) {
  switch (split) {
    case Split::kTrain: return data.train_samples;
    case Split::kValid: return data.valid_samples;
    case Split::kTest: return data.test_samples;
  }
  return data.test_samples;
}

std::vector<std::string> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected 'name<TAB>id'");
    }
    const auto id = parse_int(std::string_view(line).substr(tab + 1),
                              path.string(), line_no);
    if (id < 0) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": negative id");
    }
    const auto index = static_cast<std::size_t>(id);
    if (labels.size() <= index) labels.resize(index + 1);
    labels[index] = line.substr(0, tab);
  }
  return labels;
}

}  // namespace nadex
