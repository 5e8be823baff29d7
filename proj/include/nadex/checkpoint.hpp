#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "nadex/adam.hpp"
#include "nadex/config.hpp"
#include "nadex/data.hpp"
#include "nadex/denoiser.hpp"

namespace nadex {

// Binary layout, all integers and floats little-endian:
//   "NADX" | u32 version | str config_text
//   | u64 entities | u64 base_relations | i64 max_time
//   | u64 tensor_count | { str name | u64 rank | u64 dims[rank] | f64 data[] }
//   | f64 lr | f64 beta1 | f64 beta2 | f64 eps | u64 adam_step
//   | u64 moment_count | { u64 n | f64 m[n] | f64 v[n] }
//   | u64 epoch | u64 best_epoch | f64 best_valid_mrr | str rng_state
// where str is u64 length followed by raw bytes.
inline constexpr char kCheckpointMagic[4] = {'N', 'A', 'D', 'X'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  Vocabulary vocab;
  DenoiserParams params;
  AdamState adam;
  std::uint64_t epoch = 0;
  std::uint64_t best_epoch = 0;
  double best_valid_mrr = 0.0;
  std::string rng_state;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
// Throws VersionError on a version mismatch and ParseError on corruption.
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nadex
