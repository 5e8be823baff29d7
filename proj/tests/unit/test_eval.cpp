#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>
#include <tuple>

#include "nadex/errors.hpp"
#include "nadex/eval.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace nadex;
using nadex::testing::reference_metrics;
using nadex::testing::reference_rank;

namespace {

std::vector<Quadruple> random_kg(Rng& rng, std::size_t entities,
                                 std::size_t relations, std::size_t facts,
                                 std::int64_t times) {
  std::vector<Quadruple> out;
  for (std::size_t i = 0; i < facts; ++i) {
    out.push_back(
        {static_cast<std::size_t>(rng.uniform_int(0, entities - 1)),
         static_cast<std::size_t>(rng.uniform_int(0, relations - 1)),
         static_cast<std::size_t>(rng.uniform_int(0, entities - 1)),
         rng.uniform_int(0, times - 1)});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Quadruple& a, const Quadruple& b) {
                     return a.time < b.time;
                   });
  return out;
}

bool same_bits(double a, double b) {
  return std::memcmp(&a, &b, sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("filter index examples") {
  std::vector<Quadruple> one = {{1, 2, 3, 4}};
  FilterIndex a = build_filter_index({one});
  CHECK(a.key_count() == 1);
  CHECK(std::vector<std::size_t>(a.objects(1, 2, 4).begin(),
                                 a.objects(1, 2, 4).end()) ==
        std::vector<std::size_t>{3});
  CHECK(a.objects(1, 2, 5).empty());

  std::vector<Quadruple> train = {{0, 0, 7, 1}, {0, 0, 2, 1}};
  std::vector<Quadruple> test = {{0, 0, 2, 1}, {0, 0, 5, 1}};
  FilterIndex b = build_filter_index({train, test});
  CHECK(b.key_count() == 1);
  CHECK(std::vector<std::size_t>(b.objects(0, 0, 1).begin(),
                                 b.objects(0, 0, 1).end()) ==
        std::vector<std::size_t>{2, 5, 7});
}

TEST_CASE("filtered rank examples") {
  const std::vector<double> scores = {0.9, 0.1, 0.5};
  CHECK(filtered_rank(scores, 2, {}) == 2);
  const std::size_t f0[] = {0};
  CHECK(filtered_rank(scores, 2, f0) == 1);
  const std::vector<double> flat(5, 0.3);
  CHECK(filtered_rank(flat, 1, {}) == 5);
  const std::size_t with_gold[] = {1, 2};
  CHECK(filtered_rank(flat, 1, with_gold) == 4);
  CHECK_THROWS_AS(filtered_rank(scores, 3, {}), IndexError);
}

TEST_CASE("metric examples") {
  MetricReport r = metrics_from_ranks({1, 2, 4});
  CHECK(std::abs(r.mrr - 0.58333333333333333) <= 1e-9);
  CHECK(r.hits1 == doctest::Approx(1.0 / 3.0));
  CHECK(r.hits3 == doctest::Approx(2.0 / 3.0));
  CHECK(r.hits10 == 1.0);
  CHECK(r.query_count == 3);
  CHECK(r.ranks == std::vector<std::size_t>{1, 2, 4});
}

TEST_CASE("filtering never hurts and ranks stay in bounds") {
  Rng rng(71);
  for (int trial = 0; trial < 500; ++trial) {
    const auto e = static_cast<std::size_t>(rng.uniform_int(1, 12));
    std::vector<double> scores(e);
    for (double& s : scores) s = std::floor(4.0 * rng.uniform01()) / 4.0;
    const auto gold = static_cast<std::size_t>(rng.uniform_int(0, e - 1));
    std::vector<std::size_t> filter;
    for (std::size_t i = 0; i < e; ++i) {
      if (rng.uniform01() < 0.3) filter.push_back(i);
    }
    const std::size_t raw = filtered_rank(scores, gold, {});
    const std::size_t filtered = filtered_rank(scores, gold, filter);
    CHECK(filtered <= raw);
    CHECK(filtered >= 1);
    std::size_t others = 0;
    for (std::size_t f : filter) others += f != gold;
    CHECK(filtered <= e - others);
  }
}

TEST_CASE("metrics match an exhaustive reference on random toy graphs") {
  Rng rng(2025);
  for (int trial = 0; trial < 100; ++trial) {
    const auto entities = static_cast<std::size_t>(rng.uniform_int(2, 10));
    const auto relations = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const auto facts = static_cast<std::size_t>(rng.uniform_int(4, 30));
    std::vector<Quadruple> kg = random_kg(rng, entities, relations, facts, 6);
    // Quantised scores make ties common.
    std::vector<std::vector<double>> scores(kg.size(),
                                            std::vector<double>(entities));
    for (auto& row : scores) {
      for (double& s : row) s = std::floor(5.0 * rng.uniform01());
    }
    FilterIndex index = build_filter_index({kg});
    std::vector<std::size_t> ranks, expected;
    for (std::size_t i = 0; i < kg.size(); ++i) {
      const Quadruple& q = kg[i];
      ranks.push_back(filtered_rank(scores[i], q.object,
                                    index.objects(q.subject, q.relation, q.time)));
      expected.push_back(
          reference_rank(scores[i], q.object, q.subject, q.relation, q.time, kg));
    }
    CHECK(ranks == expected);
    const MetricReport got = metrics_from_ranks(ranks);
    const nadex::testing::ReferenceMetrics want = reference_metrics(expected);
    CHECK(got.mrr == want.mrr);
    CHECK(got.hits1 == want.h1);
    CHECK(got.hits3 == want.h3);
    CHECK(got.hits10 == want.h10);
    CHECK(got.hits1 <= got.hits3);
    CHECK(got.hits3 <= got.hits10);
    if (entities <= 10) CHECK(got.hits10 == 1.0);
  }
}

TEST_CASE("evaluate matches the reference over model scores") {
  Rng rng(99);
  DenoiserConfig c;
  c.width = 8;
  c.layers = 1;
  c.heads = 2;
  c.window = 3;
  c.steps = 4;
  c.gap_bins = 8;
  for (int trial = 0; trial < 20; ++trial) {
    const auto entities = static_cast<std::size_t>(rng.uniform_int(3, 10));
    std::vector<Quadruple> kg = random_kg(rng, entities, 2, 30, 8);
    nadex::testing::Splits s = nadex::testing::split_by_time(kg, 5, 6);
    DatasetOptions o;
    o.time_granularity = 1;
    o.window = 3;
    o.gap_bins = 8;
    Dataset d = make_dataset(s.train, s.valid, s.test, o);
    if (d.test_samples.empty()) continue;
    DenoiserParams p = init_params(c, d.vocab, trial);
    NoiseSchedule sched = build_schedule(4, 1.0, 0.1, 0.9);
    FilterIndex filter = build_filter_index({d.train, d.valid, d.test});
    EvalOptions opt;
    opt.seed = 5;
    const MetricReport r = evaluate(d.test_samples, p, sched, filter, opt);

    std::vector<std::size_t> idx(d.test_samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const std::vector<double> flat =
        score_queries(p, sched, d.test_samples, idx, opt);
    std::vector<Quadruple> all = d.train;
    all.insert(all.end(), d.valid.begin(), d.valid.end());
    all.insert(all.end(), d.test.begin(), d.test.end());
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const HistorySample& q = d.test_samples[i];
      std::vector<double> row(flat.begin() + i * d.vocab.num_entities,
                              flat.begin() + (i + 1) * d.vocab.num_entities);
      expected.push_back(
          reference_rank(row, q.object, q.subject, q.relation, q.time, all));
    }
    CHECK(r.ranks == expected);
    CHECK(r.mrr == reference_metrics(expected).mrr);
  }
}

TEST_CASE("evaluation is seeded and independent of chunking and threads") {
  const auto s = nadex::testing::cyclic_tkg();
  DatasetOptions o;
  o.time_granularity = 1;
  o.window = 4;
  o.gap_bins = 8;
  Dataset d = make_dataset(s.train, s.valid, s.test, o);
  DenoiserConfig c;
  c.width = 8;
  c.layers = 1;
  c.heads = 2;
  c.window = 4;
  c.steps = 5;
  c.gap_bins = 8;
  DenoiserParams p = init_params(c, d.vocab, 3);
  NoiseSchedule sched = build_schedule(5, 1.0, 0.1, 0.9);
  FilterIndex filter = build_filter_index({d.train, d.valid, d.test});

  std::vector<std::size_t> idx(d.test_samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  EvalOptions base;
  base.seed = 17;
  const std::vector<double> ref = score_queries(p, sched, d.test_samples, idx, base);
  for (std::size_t chunk : {1u, 7u, 1000u}) {
    for (std::size_t threads : {1u, 3u}) {
      EvalOptions opt = base;
      opt.chunk_size = chunk;
      opt.threads = threads;
      const std::vector<double> got =
          score_queries(p, sched, d.test_samples, idx, opt);
      REQUIRE(got.size() == ref.size());
      bool same = true;
      for (std::size_t i = 0; i < got.size(); ++i) same = same && same_bits(got[i], ref[i]);
      CHECK_MESSAGE(same, "chunk " << chunk << " threads " << threads);
    }
  }

  const MetricReport a = evaluate(d.test_samples, p, sched, filter, base);
  const MetricReport b = evaluate(d.test_samples, p, sched, filter, base);
  CHECK(a.ranks == b.ranks);
  CHECK(same_bits(a.mrr, b.mrr));

  EvalOptions other = base;
  other.seed = 18;
  CHECK(score_queries(p, sched, d.test_samples, idx, other) != ref);
  EvalOptions repeated = base;
  repeated.repeats = 3;
  const auto r3 = score_queries(p, sched, d.test_samples, idx, repeated);
  CHECK(r3 != ref);
  CHECK(score_queries(p, sched, d.test_samples, idx, repeated) == r3);
  repeated.repeats = 0;
  CHECK_THROWS_AS(score_queries(p, sched, d.test_samples, idx, repeated),
                  ConfigError);

  CHECK_THROWS_AS(evaluate({}, p, sched, filter, base), ContractError);
}

TEST_CASE("iterative refinement is seeded too") {
  const auto s = nadex::testing::cyclic_tkg();
  DatasetOptions o;
  o.time_granularity = 1;
  o.window = 4;
  o.gap_bins = 8;
  Dataset d = make_dataset(s.train, s.valid, s.test, o);
  DenoiserConfig c;
  c.width = 8;
  c.layers = 1;
  c.heads = 2;
  c.window = 4;
  c.steps = 5;
  c.gap_bins = 8;
  DenoiserParams p = init_params(c, d.vocab, 3);
  NoiseSchedule sched = build_schedule(5, 1.0, 0.1, 0.9);
  std::vector<std::size_t> idx = {0, 1, 2, 3};
  EvalOptions opt;
  opt.iterative = true;
  opt.seed = 4;
  const auto a = score_queries(p, sched, d.test_samples, idx, opt);
  CHECK(a == score_queries(p, sched, d.test_samples, idx, opt));
  opt.iterative = false;
  CHECK(a != score_queries(p, sched, d.test_samples, idx, opt));
}

TEST_CASE("report TSV round trip") {
  MetricReport r = metrics_from_ranks({1, 3, 7, 2, 11, 1});
  std::stringstream ss;
  write_report_tsv(ss, r);
  const std::string text = ss.str();
  CHECK(text.rfind("mrr\t", 0) == 0);
  MetricReport back = read_report_tsv(ss);
  CHECK(same_bits(back.mrr, r.mrr));
  CHECK(same_bits(back.hits1, r.hits1));
  CHECK(same_bits(back.hits3, r.hits3));
  CHECK(same_bits(back.hits10, r.hits10));
  CHECK(back.query_count == 6);

  std::stringstream table;
  write_report_table(table, r, "test");
  CHECK(table.str().find("MRR") != std::string::npos);

  std::istringstream bad("mrr\tabc\t3\n");
  CHECK_THROWS_AS(read_report_tsv(bad), ParseError);
  std::istringstream partial("mrr\t0.5\t3\n");
  CHECK_THROWS_AS(read_report_tsv(partial), ParseError);
}

TEST_CASE("unseen subset") {
  std::vector<Quadruple> train = {{0, 0, 1, 0}, {2, 1, 3, 1}};
  std::vector<HistorySample> samples(4);
  samples[0].subject = 0, samples[0].relation = 0, samples[0].object = 1;
  samples[1].subject = 0, samples[1].relation = 0, samples[1].object = 2;
  samples[2].subject = 2, samples[2].relation = 1, samples[2].object = 3;
  samples[3].subject = 2, samples[3].relation = 0, samples[3].object = 3;
  CHECK(unseen_indices(samples, train) == std::vector<std::size_t>{1, 3});
  CHECK(unseen_indices(samples, {}).size() == 4);
}

TEST_CASE("frequency baseline hand example") {
  std::vector<Quadruple> train = {{0, 0, 1, 0}, {0, 0, 1, 1}, {0, 0, 2, 2}};
  std::vector<Quadruple> test = {{0, 0, 2, 3}};
  DatasetOptions o;
  o.time_granularity = 1;
  o.window = 4;
  o.gap_bins = 8;
  Dataset d = make_dataset(train, {}, test, o);
  FilterIndex filter = build_filter_index({d.train, d.valid, d.test});
  // (0, r0, ?) has seen 1 twice and 2 once: gold 2 ranks second.
  // The inverse query (2, r0⁻¹, ?) has only seen 0: rank 1.
  MetricReport r = evaluate_frequency_baseline(d, Split::kTest, filter);
  CHECK(r.ranks == std::vector<std::size_t>{2, 1});
  CHECK(r.mrr == 0.75);
  CHECK_THROWS_AS(evaluate_frequency_baseline(d, Split::kValid, filter),
                  ContractError);
}

TEST_CASE("frequency baseline ignores facts from the query timestamp") {
  std::vector<Quadruple> train = {{0, 0, 1, 0}};
  std::vector<Quadruple> test = {{0, 0, 2, 1}, {0, 0, 3, 1}};
  DatasetOptions o;
  o.time_granularity = 1;
  o.window = 4;
  o.gap_bins = 8;
  Dataset d = make_dataset(train, {}, test, o);
  FilterIndex filter = build_filter_index({d.train, d.valid, d.test});
  MetricReport r = evaluate_frequency_baseline(d, Split::kTest, filter);
  // Queries (0,r0,2) and (0,r0,3) filter each other; entity 1 outranks, and
  // the tied zero of entity 0 counts against the gold. The inverse queries
  // have no history, so every candidate ties.
  CHECK(r.ranks == std::vector<std::size_t>{3, 4, 3, 4});
}

TEST_CASE("filter index at full benchmark scale builds quickly") {
  Rng rng(3);
  std::vector<Quadruple> kg = random_kg(rng, 7000, 230, 180000, 365);
  const auto start = std::chrono::steady_clock::now();
  FilterIndex index = build_filter_index({kg});
  const double seconds = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - start)
                             .count();
  CHECK(index.key_count() > 0);
  CHECK(seconds < 5.0);
}
