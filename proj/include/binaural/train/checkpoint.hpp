#pragma once

// Checkpoint file layout (all integers little-endian, reals IEEE-754 f64):
//
//   "BNBN"                       magic
//   u32  version (= 1)
//   str  model config (key=value text)
//   str  train config (key=value text)
//   u64  step counter
//   u64  optimizer step t
//   str  sampler state (index stream + engine state, text)
//   u32  parameter count
//   per parameter, in model order:
//     str  name
//     u32  rank, then rank x u64 extents
//     f64  values[n], f64 first moment[n], f64 second moment[n]
//   "BNBE"                       end marker
//
// where str is a u32 byte length followed by UTF-8 bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "binaural/errors.hpp"
#include "binaural/net/config.hpp"
#include "binaural/net/model.hpp"
#include "binaural/train/trainer.hpp"

namespace binaural::train {

inline constexpr char kCheckpointMagic[4] = {'B', 'N', 'B', 'N'};
inline constexpr char kCheckpointEnd[4] = {'B', 'N', 'B', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf_.append(b, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  void reals(const std::vector<double>& v) { raw(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double)); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  void reals(std::vector<double>& v) { raw(reinterpret_cast<char*>(v.data()), v.size() * sizeof(double)); }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw LoadError("checkpoint: truncated file");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  detail::Writer w;
  w.raw(kCheckpointMagic, 4);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(net::to_text(ck.model));
  w.str(to_text(ck.train));
  w.pod<std::uint64_t>(ck.step);
  w.pod<std::uint64_t>(ck.optimizer.t);
  w.str(ck.sampler_state);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.params.size()));
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const auto& t = ck.params.tensor(i);
    w.str(ck.params.name(i));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape) w.pod<std::uint64_t>(e);
    w.reals(t.data);
    w.reals(ck.optimizer.m.at(i).data);
    w.reals(ck.optimizer.v.at(i).data);
  }
  w.raw(kCheckpointEnd, 4);
  return w.bytes();
}

/// Parses and validates against the embedded model config: every parameter
/// the config implies must be present once with the expected shape.
inline Checkpoint parse_checkpoint(std::string bytes) {
  detail::Reader r(std::move(bytes));
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw LoadError("checkpoint: bad magic (not a BNBN file)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw LoadError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  try {
    ck.model = net::model_config_from_text(r.str());
    ck.train = train_config_from_text(r.str());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint: invalid embedded config: ") + e.what());
  }
  ck.step = r.pod<std::uint64_t>();
  ck.optimizer.t = r.pod<std::uint64_t>();
  ck.sampler_state = r.str();

  const ParameterSet expected = net::init_parameters(ck.model);
  const auto count = r.pod<std::uint32_t>();
  if (count != expected.size())
    throw LoadError("checkpoint: holds " + std::to_string(count) + " parameters, config implies " +
                    std::to_string(expected.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    if (!expected.contains(name)) throw LoadError("checkpoint: unexpected parameter '" + name + "'");
    if (ck.params.contains(name)) throw LoadError("checkpoint: parameter '" + name + "' appears twice");
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw LoadError("checkpoint: implausible rank for '" + name + "'");
    grad::Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.pod<std::uint64_t>());
    if (shape != expected[name].shape)
      throw LoadError("checkpoint: parameter '" + name + "' has shape " + grad::to_string(shape) + ", config implies " +
                      grad::to_string(expected[name].shape));
    grad::Tensor value(shape), m(shape), v(shape);
    r.reals(value.data);
    r.reals(m.data);
    r.reals(v.data);
    ck.params.add(name, std::move(value));
    ck.optimizer.m.push_back(std::move(m));
    ck.optimizer.v.push_back(std::move(v));
  }
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (ck.params.name(i) != expected.name(i))
      throw LoadError("checkpoint: parameter order differs from the model at '" + ck.params.name(i) + "'");
  char end[4];
  r.raw(end, 4);
  if (std::memcmp(end, kCheckpointEnd, 4) != 0 || !r.at_end()) throw LoadError("checkpoint: missing end marker");
  Sampler::from_state(ck.sampler_state);  // validates
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("checkpoint: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(std::move(bytes));
}

}  // namespace binaural::train
