#include "nadex/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "nadex/errors.hpp"

namespace nadex {

namespace {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u64(std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b, 8);
  }
  void u32(std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b, 4);
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void raw(const char* data, std::size_t n) {
    out_.write(data, static_cast<std::streamsize>(n));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void raw(char* data, std::size_t n) {
    in_.read(data, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw ParseError("checkpoint truncated");
    }
  }
  std::uint64_t u64() {
    unsigned char b[8];
    raw(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    unsigned char b[4];
    raw(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = bounded(u64());
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::uint64_t bounded(std::uint64_t n) {
    if (n > (std::uint64_t{1} << 36)) throw ParseError("checkpoint length field corrupt");
    return n;
  }

 private:
  std::istream& in_;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  Writer w(out);
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(config_to_text(ckpt.config));
  w.u64(ckpt.vocab.num_entities);
  w.u64(ckpt.vocab.num_base_relations);
  w.i64(ckpt.vocab.max_time);

  const std::vector<Tensor> tensors = ckpt.params.tensors();
  w.u64(tensors.size());
  for (const Tensor& t : tensors) {
    w.str(t.name());
    w.u64(t.rank());
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }

  const AdamState& a = ckpt.adam;
  w.f64(a.config.learning_rate);
  w.f64(a.config.beta1);
  w.f64(a.config.beta2);
  w.f64(a.config.epsilon);
  w.u64(a.step);
  w.u64(a.first_moment.size());
  for (std::size_t i = 0; i < a.first_moment.size(); ++i) {
    w.u64(a.first_moment[i].size());
    for (double v : a.first_moment[i]) w.f64(v);
    for (double v : a.second_moment[i]) w.f64(v);
  }

  w.u64(ckpt.epoch);
  w.u64(ckpt.best_epoch);
  w.f64(ckpt.best_valid_mrr);
  w.str(ckpt.rng_state);
  if (!out) throw IoError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw ParseError("not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       ", this build reads version " +
                       std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  {
    std::istringstream text(r.str());
    ckpt.config = parse_config(text);
  }
  ckpt.vocab.num_entities = r.u64();
  ckpt.vocab.num_base_relations = r.u64();
  ckpt.vocab.max_time = r.i64();

  // Shape the parameter set from the echoed config, then fill it by name.
  ckpt.params = init_params(ckpt.config.denoiser_config(), ckpt.vocab, 0);
  std::map<std::string, Tensor> by_name;
  for (const Tensor& t : ckpt.params.tensors()) by_name.emplace(t.name(), t);

  const std::uint64_t count = r.u64();
  if (count != by_name.size()) {
    throw ParseError("checkpoint holds " + std::to_string(count) +
                     " tensors, config implies " +
                     std::to_string(by_name.size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("unexpected tensor '" + name + "'");
    Shape shape(r.bounded(r.u64()));
    for (std::size_t& d : shape) d = r.u64();
    Tensor& t = it->second;
    if (shape != t.shape()) {
      throw ParseError("tensor '" + name + "' has shape " +
                       shape_to_string(shape) + ", expected " +
                       shape_to_string(t.shape()));
    }
    for (double& v : t.mutable_data()) v = r.f64();
  }

  AdamState& a = ckpt.adam;
  a.config.learning_rate = r.f64();
  a.config.beta1 = r.f64();
  a.config.beta2 = r.f64();
  a.config.epsilon = r.f64();
  a.step = r.u64();
  const std::uint64_t moments = r.bounded(r.u64());
  a.first_moment.resize(moments);
  a.second_moment.resize(moments);
  for (std::uint64_t i = 0; i < moments; ++i) {
    const std::uint64_t n = r.bounded(r.u64());
    a.first_moment[i].resize(n);
    a.second_moment[i].resize(n);
    for (double& v : a.first_moment[i]) v = r.f64();
    for (double& v : a.second_moment[i]) v = r.f64();
  }

  ckpt.epoch = r.u64();
  ckpt.best_epoch = r.u64();
  ckpt.best_valid_mrr = r.f64();
  ckpt.rng_state = r.str();
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    write_checkpoint(out, ckpt);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace nadex
