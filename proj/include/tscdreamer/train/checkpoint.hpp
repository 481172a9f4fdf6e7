#pragma once

// Single-file checkpoint container.
//
// Layout (all integers little-endian):
//   "CDRM" | u32 version
//   u32 tensor count, then per tensor: name, u32 rank, u64 dims[rank], u64 payload offset
//   u32 counter count, then per counter: name, u64 value
//   u32 scalar count, then per scalar: name, f64 value
//   u32 blob count, then per blob: name, u64 length, bytes
//   u64 payload bytes, then float32 tensor payloads
//   u64 FNV-1a hash of every preceding byte
// Names are u32 length + bytes.

#include "tscdreamer/core/tensor.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace tscdreamer::train {

inline constexpr char kCheckpointMagic[4] = {'C', 'D', 'R', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, Tensor<float>> tensors;
  std::map<std::string, std::uint64_t> counters;
  std::map<std::string, double> scalars;
  std::map<std::string, std::string> blobs;

  const Tensor<float>& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint has no tensor " + name);
    return it->second;
  }
  std::uint64_t counter(const std::string& name) const {
    auto it = counters.find(name);
    if (it == counters.end()) throw std::runtime_error("checkpoint has no counter " + name);
    return it->second;
  }
  double scalar(const std::string& name) const {
    auto it = scalars.find(name);
    if (it == scalars.end()) throw std::runtime_error("checkpoint has no scalar " + name);
    return it->second;
  }
  const std::string& blob(const std::string& name) const {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw std::runtime_error("checkpoint has no blob " + name);
    return it->second;
  }
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void name(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const std::string& s) { out_ += s; }
  std::string& str() { return out_; }

 private:
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = in_.substr(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }
  std::string name() { return bytes(u32()); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw std::runtime_error("checkpoint is truncated or corrupt");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::Writer w;
  w.raw(std::string(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    w.name(name);
    w.u32(static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) w.u64(d);
    w.u64(offset);
    offset += 4 * static_cast<std::uint64_t>(t.values().size());
  }
  w.u32(static_cast<std::uint32_t>(c.counters.size()));
  for (const auto& [name, v] : c.counters) {
    w.name(name);
    w.u64(v);
  }
  w.u32(static_cast<std::uint32_t>(c.scalars.size()));
  for (const auto& [name, v] : c.scalars) {
    w.name(name);
    w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(c.blobs.size()));
  for (const auto& [name, v] : c.blobs) {
    w.name(name);
    w.u64(v.size());
    w.raw(v);
  }
  w.u64(offset);
  for (const auto& [name, t] : c.tensors)
    for (float v : t.values()) w.f32(v);
  const std::uint64_t h = detail::fnv1a(w.str());
  w.u64(h);
  return std::move(w.str());
}

/// Parses the whole file before returning; nothing is produced on failure.
inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file (bad magic)");
  detail::Reader r(bytes);
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  if (bytes.size() < 16) throw std::runtime_error("checkpoint is truncated or corrupt");
  detail::Reader tail(bytes);
  const std::string body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[bytes.size() - 8 + static_cast<std::size_t>(i)])) << (8 * i);
  if (detail::fnv1a(body) != stored) throw std::runtime_error("checkpoint is truncated or corrupt (hash mismatch)");

  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries(r.u32());
  for (auto& e : entries) {
    e.name = r.name();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw std::runtime_error("checkpoint is truncated or corrupt (rank)");
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(static_cast<std::size_t>(r.u64()));
    e.offset = r.u64();
  }
  Checkpoint c;
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    std::string name = r.name();
    c.counters[name] = r.u64();
  }
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    std::string name = r.name();
    c.scalars[name] = r.f64();
  }
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    std::string name = r.name();
    c.blobs[name] = r.bytes(r.u64());
  }
  const std::uint64_t payload = r.u64();
  const std::size_t base = r.pos();
  if (payload != bytes.size() - 8 - base) throw std::runtime_error("checkpoint is truncated or corrupt (payload size)");
  for (const auto& e : entries) {
    std::uint64_t count = 1;
    for (std::size_t d : e.shape) count *= d;
    if (e.offset + 4 * count > payload) throw std::runtime_error("checkpoint is truncated or corrupt (tensor bounds)");
    std::vector<float> values(static_cast<std::size_t>(count));
    for (std::uint64_t k = 0; k < count; ++k) {
      const std::size_t at = base + static_cast<std::size_t>(e.offset + 4 * k);
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + static_cast<std::size_t>(b)])) << (8 * b);
      values[static_cast<std::size_t>(k)] = std::bit_cast<float>(bits);
    }
    c.tensors.emplace(e.name, Tensor<float>(e.shape, std::move(values)));
  }
  return c;
}

/// Writes to a temporary sibling and renames, so a crash never leaves a
/// half-written checkpoint under `path`.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    const std::string bytes = serialize_checkpoint(c);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

/// Parameter values plus Adam state under `prefix`: <prefix><name>, #m, #v
/// tensors and a #step counter.
template <class T>
void put_params(Checkpoint& c, const std::string& prefix, const ParamSet<T>& ps, bool with_moments = true) {
  for (const auto& [name, p] : ps) {
    c.tensors[prefix + name] = Tensor<float>::from_matrix(p.value);
    if (with_moments) {
      c.tensors[prefix + name + "#m"] = Tensor<float>::from_matrix(p.m);
      c.tensors[prefix + name + "#v"] = Tensor<float>::from_matrix(p.v);
      c.counters[prefix + name + "#step"] = static_cast<std::uint64_t>(p.step);
    }
  }
}

template <class T>
void get_params(const Checkpoint& c, const std::string& prefix, ParamSet<T>& ps, bool with_moments = true) {
  auto fetch = [&](const std::string& key, const Matrix<T>& like) {
    Matrix<T> m = c.tensor(key).template to_matrix<T>();
    if (m.rows() != like.rows() || m.cols() != like.cols())
      throw std::runtime_error("checkpoint tensor " + key + " has the wrong shape for this model");
    return m;
  };
  // Validate everything before touching the parameters.
  std::map<std::string, Param<T>> staged;
  for (const auto& [name, p] : ps) {
    Param<T> q = p;
    q.value = fetch(prefix + name, p.value);
    if (with_moments) {
      q.m = fetch(prefix + name + "#m", p.m);
      q.v = fetch(prefix + name + "#v", p.v);
      q.step = static_cast<decltype(q.step)>(c.counter(prefix + name + "#step"));
    }
    staged.emplace(name, std::move(q));
  }
  for (auto& [name, p] : ps) p = std::move(staged.at(name));
}

}  // namespace tscdreamer::train
