#include "nadex/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "nadex/errors.hpp"
#include "nadex/ops.hpp"

namespace nadex {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t query_seed(std::uint64_t seed, std::size_t index) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index)));
}

}  // namespace

std::size_t FilterIndex::KeyHash::operator()(const Key& k) const noexcept {
  std::uint64_t h = splitmix64(k.subject);
  h = splitmix64(h ^ k.relation);
  return static_cast<std::size_t>(
      splitmix64(h ^ static_cast<std::uint64_t>(k.time)));
}

void FilterIndex::add(const Quadruple& q) {
  auto& objs = map_[Key{q.subject, q.relation, q.time}];
  auto it = std::lower_bound(objs.begin(), objs.end(), q.object);
  if (it == objs.end() || *it != q.object) objs.insert(it, q.object);
}

std::span<const std::size_t> FilterIndex::objects(std::size_t subject,
                                                  std::size_t relation,
                                                  std::int64_t time) const {
  auto it = map_.find(Key{subject, relation, time});
  if (it == map_.end()) return {};
  return it->second;
}

FilterIndex build_filter_index(
    std::initializer_list<std::span<const Quadruple>> splits) {
  FilterIndex index;
  for (auto split : splits) {
    for (const Quadruple& q : split) index.add(q);
  }
  return index;
}

std::size_t filtered_rank(std::span<const double> scores, std::size_t gold,
                          std::span<const std::size_t> filtered) {
  if (gold >= scores.size()) {
    throw IndexError("gold id " + std::to_string(gold) + " out of range for " +
                     std::to_string(scores.size()) + " candidates");
  }
  const double target = scores[gold];
  std::size_t rank = 1;
  std::size_t next = 0;  // cursor into the sorted filter list
  for (std::size_t e = 0; e < scores.size(); ++e) {
    while (next < filtered.size() && filtered[next] < e) ++next;
    const bool skip = next < filtered.size() && filtered[next] == e;
    if (e == gold || skip) continue;
    if (scores[e] >= target) ++rank;
  }
  return rank;
}

MetricReport metrics_from_ranks(std::vector<std::size_t> ranks) {
  MetricReport r;
  r.query_count = ranks.size();
  if (ranks.empty()) return r;
  for (std::size_t rank : ranks) {
    r.mrr += 1.0 / static_cast<double>(rank);
    r.hits1 += rank <= 1 ? 1.0 : 0.0;
    r.hits3 += rank <= 3 ? 1.0 : 0.0;
    r.hits10 += rank <= 10 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(ranks.size());
  r.mrr /= n;
  r.hits1 /= n;
  r.hits3 /= n;
  r.hits10 /= n;
  r.ranks = std::move(ranks);
  return r;
}

namespace {

// Scores one chunk into `out` ([chunk × |E|], row-major).
void score_chunk(const DenoiserParams& params, const NoiseSchedule& schedule,
                 std::span<const HistorySample> samples,
                 std::span<const std::size_t> chunk, const EvalOptions& options,
                 double* out) {
  NoGradGuard no_grad;
  const std::size_t n = chunk.size();
  const std::size_t h = params.config.width;
  const std::size_t steps = schedule.steps();
  const Tensor& table = params.scoring_table();
  const std::size_t entities = table.dim(0);

  const SequenceBatch seq = make_sequence_batch(samples, chunk);
  const ContextEmbedding ctx = embed_context(params, seq);

  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (std::size_t idx : chunk) rngs.emplace_back(query_seed(options.seed, idx));
  auto draw = [&]() {
    std::vector<double> noise(n * h);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < h; ++c) noise[i * h + c] = rngs[i].normal();
    }
    return Tensor::from({n, h}, std::move(noise));
  };

  std::fill(out, out + n * entities, 0.0);
  for (std::size_t k = 0; k < options.repeats; ++k) {
    Tensor state = draw();
    Tensor prediction;
    if (!options.iterative) {
      prediction = denoise(
          params, assemble_sequence(ctx.history, state, ctx.conditioning,
                                    seq.window),
          steps, seq.key_mask, false);
    } else {
      for (std::size_t m = steps; m >= 1; --m) {
        prediction = denoise(
            params, assemble_sequence(ctx.history, state, ctx.conditioning,
                                      seq.window),
            m, seq.key_mask, false);
        if (m == 1) break;
        state = diffuse(prediction, draw(), m - 1, schedule);
      }
    }
    Tensor logits = ops::matmul_transposed(prediction, table);
    for (std::size_t i = 0; i < n * entities; ++i) out[i] += logits[i];
  }
  if (options.repeats > 1) {
    const double inv = 1.0 / static_cast<double>(options.repeats);
    for (std::size_t i = 0; i < n * entities; ++i) out[i] *= inv;
  }
}

}  // namespace

std::vector<double> score_queries(const DenoiserParams& params,
                                  const NoiseSchedule& schedule,
                                  std::span<const HistorySample> samples,
                                  std::span<const std::size_t> indices,
                                  const EvalOptions& options) {
  if (options.repeats == 0) throw ConfigError("eval repeats must be >= 1");
  if (schedule.steps() != params.config.steps) {
    throw ConfigError("schedule/denoiser step count mismatch");
  }
  const std::size_t entities = params.scoring_table().dim(0);
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk_size);
  std::vector<double> scores(indices.size() * entities);

  std::vector<std::size_t> starts;
  for (std::size_t b = 0; b < indices.size(); b += chunk) starts.push_back(b);
  auto run = [&](std::size_t worker, std::size_t workers) {
    for (std::size_t c = worker; c < starts.size(); c += workers) {
      const std::size_t begin = starts[c];
      const std::size_t count = std::min(chunk, indices.size() - begin);
      score_chunk(params, schedule, samples, indices.subspan(begin, count),
                  options, scores.data() + begin * entities);
    }
  };
  const std::size_t workers =
      std::max<std::size_t>(1, std::min(options.threads, starts.size()));
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
  }
  return scores;
}

MetricReport evaluate_subset(std::span<const HistorySample> samples,
                             std::span<const std::size_t> indices,
                             const DenoiserParams& params,
                             const NoiseSchedule& schedule,
                             const FilterIndex& filter,
                             const EvalOptions& options) {
  if (indices.empty()) throw ContractError("no queries to evaluate");
  const std::vector<double> scores =
      score_queries(params, schedule, samples, indices, options);
  const std::size_t entities = params.scoring_table().dim(0);
  std::vector<std::size_t> ranks(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const HistorySample& s = samples[indices[i]];
    ranks[i] = filtered_rank(
        std::span(scores).subspan(i * entities, entities), s.object,
        filter.objects(s.subject, s.relation, s.time));
  }
  return metrics_from_ranks(std::move(ranks));
}

MetricReport evaluate(std::span<const HistorySample> samples,
                      const DenoiserParams& params,
                      const NoiseSchedule& schedule, const FilterIndex& filter,
                      const EvalOptions& options) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return evaluate_subset(samples, all, params, schedule, filter, options);
}

std::vector<std::size_t> unseen_indices(std::span<const HistorySample> samples,
                                        std::span<const Quadruple> train) {
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  for (const Quadruple& q : train) seen.emplace(q.subject, q.relation, q.object);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const HistorySample& s = samples[i];
    if (!seen.count({s.subject, s.relation, s.object})) out.push_back(i);
  }
  return out;
}

MetricReport evaluate_frequency_baseline(const Dataset& data, Split split,
                                         const FilterIndex& filter) {
  struct Tagged {
    const Quadruple* quad;
    bool query;
  };
  std::vector<Tagged> stream;
  auto push = [&](const std::vector<Quadruple>& v, Split which) {
    for (const Quadruple& q : v) stream.push_back({&q, which == split});
  };
  push(data.train, Split::kTrain);
  push(data.valid, Split::kValid);
  push(data.test, Split::kTest);
  std::stable_sort(stream.begin(), stream.end(),
                   [](const Tagged& a, const Tagged& b) {
                     return a.quad->time < b.quad->time;
                   });

  const std::size_t entities = data.vocab.num_entities;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> counts;
  std::vector<std::size_t> ranks;
  std::vector<double> zero(entities, 0.0);
  std::size_t begin = 0;
  while (begin < stream.size()) {
    std::size_t end = begin;
    const std::int64_t t = stream[begin].quad->time;
    while (end < stream.size() && stream[end].quad->time == t) ++end;
    for (std::size_t i = begin; i < end; ++i) {
      if (!stream[i].query) continue;
      const Quadruple& q = *stream[i].quad;
      auto it = counts.find({q.subject, q.relation});
      const std::vector<double>& scores = it == counts.end() ? zero : it->second;
      ranks.push_back(filtered_rank(scores, q.object,
                                    filter.objects(q.subject, q.relation, t)));
    }
    for (std::size_t i = begin; i < end; ++i) {
      const Quadruple& q = *stream[i].quad;
      auto& c = counts[{q.subject, q.relation}];
      if (c.empty()) c.assign(entities, 0.0);
      c[q.object] += 1.0;
    }
    begin = end;
  }
  if (ranks.empty()) throw ContractError("no queries to evaluate");
  return metrics_from_ranks(std::move(ranks));
}

void write_report_tsv(std::ostream& out, const MetricReport& report) {
  char buf[64];
  auto line = [&](const char* name, double value) {
    std::snprintf(buf, sizeof buf, "%.17g", value);
    out << name << '\t' << buf << '\t' << report.query_count << '\n';
  };
  line("mrr", report.mrr);
  line("hits@1", report.hits1);
  line("hits@3", report.hits3);
  line("hits@10", report.hits10);
}

MetricReport read_report_tsv(std::istream& in) {
  MetricReport r;
  std::string line;
  int seen = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name;
    double value = 0.0;
    std::size_t count = 0;
    if (!std::getline(fields, name, '\t') || !(fields >> value >> count)) {
      throw ParseError("malformed report line: '" + line + "'");
    }
    if (name == "mrr") {
      r.mrr = value;
    } else if (name == "hits@1") {
      r.hits1 = value;
    } else if (name == "hits@3") {
      r.hits3 = value;
    } else if (name == "hits@10") {
      r.hits10 = value;
    } else {
      throw ParseError("unknown metric '" + name + "'");
    }
    r.query_count = count;
    ++seen;
  }
  if (seen != 4) throw ParseError("report needs mrr and hits@{1,3,10} lines");
  return r;
}

void write_report_table(std::ostream& out, const MetricReport& report,
                        const std::string& title) {
  char buf[160];
  out << title << " (" << report.query_count
      << " queries, time-aware filtered)\n";
  std::snprintf(buf, sizeof buf, "  %-8s %8s %8s %8s\n", "MRR", "Hits@1",
                "Hits@3", "Hits@10");
  out << buf;
  std::snprintf(buf, sizeof buf, "  %-8.4f %8.4f %8.4f %8.4f\n", report.mrr,
                report.hits1, report.hits3, report.hits10);
  out << buf;
}

}  // namespace nadex
