#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nadex/data.hpp"
#include "nadex/denoiser.hpp"
#include "nadex/diffusion.hpp"

namespace nadex {

// (subject, relation, time) -> every object that completes it in any split.
class FilterIndex {
 public:
  void add(const Quadruple& q);
  // Sorted, duplicate-free objects for the key; empty when absent.
  std::span<const std::size_t> objects(std::size_t subject,
                                       std::size_t relation,
                                       std::int64_t time) const;
  std::size_t key_count() const { return map_.size(); }

 private:
  struct Key {
    std::size_t subject;
    std::size_t relation;
    std::int64_t time;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };
  std::unordered_map<Key, std::vector<std::size_t>, KeyHash> map_;
};

FilterIndex build_filter_index(
    std::initializer_list<std::span<const Quadruple>> splits);

// 1-based rank of `gold` among candidates not in `filtered` (gold itself is
// always kept). Ties with the gold score count against it.
std::size_t filtered_rank(std::span<const double> scores, std::size_t gold,
                          std::span<const std::size_t> filtered);

struct MetricReport {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  std::size_t query_count = 0;
  std::vector<std::size_t> ranks;
};

MetricReport metrics_from_ranks(std::vector<std::size_t> ranks);

struct EvalOptions {
  std::uint64_t seed = 0;
  // Noise draws averaged per query.
  std::size_t repeats = 1;
  // Queries per denoiser call.
  std::size_t chunk_size = 256;
  std::size_t threads = 1;
  // Multi-step ancestral refinement instead of a single denoiser call.
  bool iterative = false;
};

// Ranking scores ô_0 · tableᵀ for a subset of samples, [indices.size() × |E|].
// Each query draws its noise from a generator derived from (seed, its index
// in `samples`), so results do not depend on chunking or threading.
std::vector<double> score_queries(const DenoiserParams& params,
                                  const NoiseSchedule& schedule,
                                  std::span<const HistorySample> samples,
                                  std::span<const std::size_t> indices,
                                  const EvalOptions& options);

MetricReport evaluate(std::span<const HistorySample> samples,
                      const DenoiserParams& params,
                      const NoiseSchedule& schedule, const FilterIndex& filter,
                      const EvalOptions& options);

// Restricts evaluation to the listed sample indices.
MetricReport evaluate_subset(std::span<const HistorySample> samples,
                             std::span<const std::size_t> indices,
                             const DenoiserParams& params,
                             const NoiseSchedule& schedule,
                             const FilterIndex& filter,
                             const EvalOptions& options);

// Indices of samples whose (subject, relation, object) never occurs in
// `train`.
std::vector<std::size_t> unseen_indices(std::span<const HistorySample> samples,
                                        std::span<const Quadruple> train);

// History-frequency baseline: each candidate is scored by how often it was
// the object of (subject, relation) strictly before the query time.
MetricReport evaluate_frequency_baseline(const Dataset& data, Split split,
                                         const FilterIndex& filter);

// Tab-separated "metric\tvalue\tquery_count" lines.
void write_report_tsv(std::ostream& out, const MetricReport& report);
MetricReport read_report_tsv(std::istream& in);
void write_report_table(std::ostream& out, const MetricReport& report,
                        const std::string& title);

}  // namespace nadex
