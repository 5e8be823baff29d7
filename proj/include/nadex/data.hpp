#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace nadex {

// One time-stamped fact. `time` is the raw timestamp divided by the dataset's
// granularity.
struct Quadruple {
  std::size_t subject = 0;
  std::size_t relation = 0;
  std::size_t object = 0;
  std::int64_t time = 0;

  bool operator==(const Quadruple&) const = default;
};

struct Vocabulary {
  std::size_t num_entities = 0;
  std::size_t num_base_relations = 0;
  std::int64_t max_time = 0;

  // Relation count after inverse augmentation.
  std::size_t num_relations() const { return 2 * num_base_relations; }
};

std::vector<Quadruple> parse_quadruples(std::istream& in,
                                        std::int64_t time_granularity,
                                        const std::string& source = "<stream>");
std::vector<Quadruple> parse_quadruples(const std::filesystem::path& path,
                                        std::int64_t time_granularity);

// Inverse of parse_quadruples: writes raw timestamps (time * granularity).
void write_quadruples(std::ostream& out, std::span<const Quadruple> quads,
                      std::int64_t time_granularity);

// Sizes the vocabulary from the union of every split's ids (base relations).
Vocabulary build_vocabulary(
    std::initializer_list<std::span<const Quadruple>> splits);

// Emits every fact followed by its inverse (o, r + |R_base|, s, t), so a
// time-sorted input stays time-sorted.
std::vector<Quadruple> augment_inverse(std::span<const Quadruple> quads,
                                       const Vocabulary& vocab);

// A query with its subject-centric history, left-padded to the window length.
struct HistorySample {
  std::size_t subject = 0;
  std::size_t relation = 0;
  std::size_t object = 0;
  std::int64_t time = 0;

  std::vector<std::size_t> objects;
  std::vector<std::size_t> relations;
  std::vector<std::size_t> time_gaps;
  // 1 for a real history entry, 0 for padding.
  std::vector<std::uint8_t> mask;
  // Time-gap bin of the query slot itself.
  std::size_t query_gap = 0;

  std::size_t window() const { return objects.size(); }
  std::size_t history_length() const;
};

// One history per fact in `stream`, built from the facts with the same
// subject and strictly earlier timestamps (the `window` most recent, oldest
// first). Gaps are clamped to `gap_bins - 1`. The stream must be sorted by
// time.
std::vector<HistorySample> build_histories(std::span<const Quadruple> stream,
                                           std::size_t window,
                                           std::size_t gap_bins);

// Indices into a sample list that share one query timestamp.
struct TimestampBatch {
  std::int64_t time = 0;
  std::vector<std::size_t> samples;

  // Negative prototypes need at least one other target in the chunk.
  bool negatives_valid() const { return samples.size() >= 2; }
};

std::vector<TimestampBatch> batch_by_timestamp(
    std::span<const HistorySample> samples, std::size_t max_batch);

// Inverse-augmented splits sharing one vocabulary. `stream` is
// train ++ valid ++ test, and every sample list is built over that stream so
// evaluation histories see all earlier facts.
struct Dataset {
  Vocabulary vocab;
  std::vector<Quadruple> train;
  std::vector<Quadruple> valid;
  std::vector<Quadruple> test;

  std::vector<HistorySample> train_samples;
  std::vector<HistorySample> valid_samples;
  std::vector<HistorySample> test_samples;
};

enum class Split { kTrain, kValid, kTest };

Split parse_split(const std::string& name);
const char* split_name(Split split);

struct DatasetOptions {
  std::int64_t time_granularity = 24;
  std::size_t window = 32;
  std::size_t gap_bins = 512;
};

// Assembles a dataset from already parsed base-relation splits.
Dataset make_dataset(std::vector<Quadruple> train, std::vector<Quadruple> valid,
                     std::vector<Quadruple> test,
                     const DatasetOptions& options);

// Reads train.txt / valid.txt / test.txt from `dir`. Missing valid/test files
// are treated as empty; a missing train file is an IoError.
Dataset load_dataset(const std::filesystem::path& dir,
                     const DatasetOptions& options);

const std::vector<HistorySample>& samples_for(const Dataset& data, Split split);

// "name\tid" lines (entity2id.txt / relation2id.txt) as an id-indexed table.
std::vector<std::string> load_labels(const std::filesystem::path& path);

}  // namespace nadex
