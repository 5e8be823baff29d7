#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "nadex/denoiser.hpp"
#include "nadex/errors.hpp"
#include "nadex/objectives.hpp"
#include "nadex/ops.hpp"
#include "support/random.hpp"
#include "support/synthetic.hpp"

using namespace nadex;
using nadex::testing::uniform_tensor;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.width = 8;
  c.layers = 2;
  c.heads = 2;
  c.dropout = 0.0;
  c.window = 4;
  c.steps = 5;
  c.gap_bins = 6;
  return c;
}

Vocabulary small_vocab() { return {7, 3, 20}; }

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
           return std::memcmp(&x, &y, sizeof(double)) == 0;
         });
}

}  // namespace

TEST_CASE("init is deterministic in the seed") {
  DenoiserParams a = init_params(small_config(), small_vocab(), 11);
  DenoiserParams b = init_params(small_config(), small_vocab(), 11);
  DenoiserParams c = init_params(small_config(), small_vocab(), 12);
  const auto ta = a.tensors(), tb = b.tensors(), tc = c.tensors();
  REQUIRE(ta.size() == tb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].name() == tb[i].name());
    CHECK(ta[i].requires_grad());
    CHECK(bitwise_equal(ta[i].data(), tb[i].data()));
    if (!bitwise_equal(ta[i].data(), tc[i].data())) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("init distributions") {
  DenoiserConfig c = small_config();
  c.width = 64;
  c.heads = 4;
  DenoiserParams p = init_params(c, {500, 3, 10}, 3);
  double sum = 0.0, sq = 0.0;
  for (double v : p.entity.data()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(p.entity.numel());
  CHECK(std::abs(sum / n) < 0.002);
  CHECK(std::sqrt(sq / n) == doctest::Approx(0.02).epsilon(0.05));
  const double bound = std::sqrt(6.0 / (64.0 + 64.0));
  const auto& w = p.layers[0].query_weight;
  CHECK(*std::max_element(w.data().begin(), w.data().end()) <= bound);
  CHECK(*std::min_element(w.data().begin(), w.data().end()) >= -bound);
  for (double v : p.layers[0].query_bias.data()) CHECK(v == 0.0);
  for (double v : p.final_gain.data()) CHECK(v == 1.0);
}

TEST_CASE("full-size entity table shape and parameter count") {
  DenoiserConfig c;  // width 200, 2 layers, window 32, 50 steps, 512 bins
  DenoiserParams p = init_params(c, {6869, 230, 365}, 0);
  CHECK(p.entity.shape() == Shape{6869, 200});
  CHECK(p.relation.shape() == Shape{460, 200});
  CHECK(p.position.shape() == Shape{33, 200});
  CHECK(p.step.shape() == Shape{50, 200});
  CHECK(p.parameter_count() == 2550400);
  CHECK(init_params(c, {6869, 230, 365}, 0).parameter_count() ==
        p.parameter_count());
}

TEST_CASE("config validation") {
  DenoiserConfig c = small_config();
  c.width = 10;
  c.heads = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.layers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(init_params(small_config(), {0, 3, 1}, 0), ConfigError);
}

TEST_CASE("denoise output shape and step range") {
  DenoiserParams p = init_params(small_config(), small_vocab(), 1);
  Rng rng(5);
  for (std::size_t n : {1u, 3u, 6u}) {
    Tensor input = uniform_tensor({n * 5, 8}, rng, -1, 1);
    std::vector<std::uint8_t> mask(n * 5, 1);
    CHECK(denoise(p, input, 3, mask, false).shape() == Shape{n, 8});
  }
  Tensor input = uniform_tensor({5, 8}, rng, -1, 1);
  std::vector<std::uint8_t> mask(5, 1);
  CHECK_THROWS_AS(denoise(p, input, 0, mask, false), IndexError);
  CHECK_THROWS_AS(denoise(p, input, 6, mask, false), IndexError);
  CHECK_THROWS_AS(denoise(p, uniform_tensor({6, 8}, rng, -1, 1), 1,
                          std::vector<std::uint8_t>(6, 1), false),
                  DimensionError);
}

TEST_CASE("all-off mask is a contract error") {
  DenoiserParams p = init_params(small_config(), small_vocab(), 1);
  Rng rng(5);
  Tensor input = uniform_tensor({10, 8}, rng, -1, 1);
  std::vector<std::uint8_t> mask(10, 1);
  std::fill(mask.begin() + 5, mask.end(), 0);
  CHECK_THROWS_AS(denoise(p, input, 2, mask, false), ContractError);
}

TEST_CASE("padding content does not reach the output") {
  DenoiserParams p = init_params(small_config(), small_vocab(), 4);
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3;
    Tensor input = uniform_tensor({n * 5, 8}, rng, -1, 1);
    std::vector<std::uint8_t> mask(n * 5, 1);
    // Left padding of varying length per item; the target slot stays live.
    for (std::size_t i = 0; i < n; ++i) {
      const auto pad = static_cast<std::size_t>(rng.uniform_int(0, 4));
      for (std::size_t j = 0; j < pad; ++j) mask[i * 5 + j] = 0;
    }
    const std::size_t step = static_cast<std::size_t>(rng.uniform_int(1, 5));
    Tensor base = denoise(p, input, step, mask, false);
    Tensor scrambled = input.clone();
    auto d = scrambled.mutable_data();
    for (std::size_t row = 0; row < n * 5; ++row) {
      if (mask[row]) continue;
      for (std::size_t k = 0; k < 8; ++k) {
        d[row * 8 + k] = 1e3 * (rng.uniform01() - 0.5);
      }
    }
    CHECK(bitwise_equal(base.data(),
                        denoise(p, scrambled, step, mask, false).data()));
  }
}

TEST_CASE("swapping two history positions changes the output") {
  DenoiserParams p = init_params(small_config(), small_vocab(), 9);
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor input = uniform_tensor({5, 8}, rng, -1, 1);
    std::vector<std::uint8_t> mask(5, 1);
    Tensor swapped = input.clone();
    auto d = swapped.mutable_data();
    for (std::size_t k = 0; k < 8; ++k) std::swap(d[0 * 8 + k], d[2 * 8 + k]);
    Tensor a = denoise(p, input, 1, mask, false);
    Tensor b = denoise(p, swapped, 1, mask, false);
    double diff = 0.0;
    for (std::size_t i = 0; i < 8; ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff > 1e-9);
  }
}

TEST_CASE("inference mode ignores dropout") {
  DenoiserConfig c = small_config();
  c.dropout = 0.5;
  DenoiserParams p = init_params(c, small_vocab(), 2);
  Rng rng(3);
  Tensor input = uniform_tensor({10, 8}, rng, -1, 1);
  std::vector<std::uint8_t> mask(10, 1);
  Rng r1(1), r2(2);
  CHECK(bitwise_equal(denoise(p, input, 4, mask, false, &r1).data(),
                      denoise(p, input, 4, mask, false, &r2).data()));
  Rng r3(1), r4(2);
  Tensor t1 = denoise(p, input, 4, mask, true, &r3);
  Tensor t2 = denoise(p, input, 4, mask, true, &r4);
  CHECK_FALSE(bitwise_equal(t1.data(), t2.data()));
  CHECK_THROWS_AS(denoise(p, input, 4, mask, true), ContractError);
}

TEST_CASE("every parameter tensor receives gradient") {
  const auto s = nadex::testing::cyclic_tkg();
  DatasetOptions o;
  o.time_granularity = 1;
  o.window = 4;
  o.gap_bins = 8;
  Dataset d = make_dataset(s.train, s.valid, s.test, o);
  DenoiserConfig c = small_config();
  c.gap_bins = 8;
  c.dropout = 0.1;
  c.tie_scoring_table = false;
  for (bool tied : {true, false}) {
    c.tie_scoring_table = tied;
    Trainer tr(init_params(c, d.vocab, 1), build_schedule(5, 1.0, 0.1, 0.9),
               {}, {}, 3);
    auto batches = batch_by_timestamp(d.train_samples, 512);
    const auto tensors = tr.params().tensors();
    for (Tensor t : tensors) t.zero_grad();
    backward(tr.objective(batches[10], d.train_samples, true));
    for (const Tensor& t : tensors) {
      double norm = 0.0;
      for (double g : t.grad()) norm += g * g;
      CHECK_MESSAGE(norm > 0.0, t.name());
    }
  }
}

TEST_CASE("score_entities examples") {
  Tensor table = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor pred = Tensor::from({1, 2}, {1, 0});
  Tensor p = score_entities(pred, table, 1.0);
  CHECK(p[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.731).epsilon(1e-3));
  CHECK(p[1] == doctest::Approx(0.269).epsilon(1e-3));

  Tensor table3 = Tensor::from({3, 3}, {0, 1, 0, 0, 2, 0, 0, -3, 0});
  Tensor orth = Tensor::from({1, 3}, {5, 0, 0});
  Tensor u = score_entities(orth, table3, 0.7);
  for (std::size_t j = 0; j < 3; ++j) CHECK(u[j] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  CHECK_THROWS_AS(score_entities(pred, table, 0.0), ConfigError);
  CHECK_THROWS_AS(score_entities(pred, table, -1.0), ConfigError);
}

TEST_CASE("score rows sum to one") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto e = static_cast<std::size_t>(rng.uniform_int(1, 40));
    const double tau = 0.05 + 2.0 * rng.uniform01();
    Tensor p = score_entities(uniform_tensor({n, 8}, rng, -3, 3),
                              uniform_tensor({e, 8}, rng, -3, 3), tau);
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < e; ++j) {
        CHECK(p.at(i, j) >= 0.0);
        row += p.at(i, j);
      }
      CHECK(std::abs(row - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("20-fact capacity: reconstruction loss below 0.05 within 500 steps") {
  const auto s = nadex::testing::twenty_fact_tkg();
  DatasetOptions o;
  o.time_granularity = 1;
  o.window = 2;
  o.gap_bins = 8;
  Dataset d = make_dataset(s.train, {}, {}, o);
  REQUIRE(d.train_samples.size() == 40);
  DenoiserConfig c;
  c.width = 32;
  c.layers = 1;
  c.heads = 4;
  c.dropout = 0.0;
  c.window = 2;
  c.steps = 10;
  c.gap_bins = 8;
  AdamConfig adam;
  adam.learning_rate = 0.01;
  const auto batches = batch_by_timestamp(d.train_samples, 512);
  for (std::uint64_t seed : {1u, 2u}) {
    Trainer tr(init_params(c, d.vocab, seed), build_schedule(10, 1.0, 0.01, 0.99),
               {}, adam, seed + 7);
    std::size_t steps = 0;
    double best = std::numeric_limits<double>::infinity();
    while (steps < 500) {
      EpochSummary e = tr.train_epoch(batches, d.train_samples, 500 - steps);
      steps += e.steps;
      best = std::min(best, e.reconstruction);
    }
    CHECK_MESSAGE(best < 0.05, "seed " << seed << " best epoch L_r " << best);
  }
}
