// SPDX-License-Identifier: Apache-2.0
#include "manager/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "manager/error.hpp"

namespace manager {

namespace {

constexpr char kMagic[8] = {'M', 'G', 'R', 'T', 'N', 'S', 'R', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    auto* c = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw FormatError("tensor archive truncated at byte " + std::to_string(pos_));
  }
  const std::uint8_t* bytes(std::size_t n) {
    need(n);
    const auto* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto* p = bytes(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    auto n = u64();
    need(n);
    const auto* p = bytes(static_cast<std::size_t>(n));
    return {reinterpret_cast<const char*>(p), static_cast<std::size_t>(n)};
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(TensorArchive::kVersion);
  w.str(archive.metadata);
  w.u64(archive.tensors.size());
  for (const auto& [name, t] : archive.tensors) {
    w.str(name);
    w.u64(t.rank());
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
  return w.take();
}

TensorArchive decode_archive(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.bytes(sizeof kMagic), kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a tensor archive (bad magic)");
  }
  const auto version = r.u32();
  if (version != TensorArchive::kVersion) {
    throw FormatError("unsupported tensor archive version " + std::to_string(version));
  }
  TensorArchive out;
  out.metadata = r.str();
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.u64();
    r.need(rank * 8);
    Shape shape(static_cast<std::size_t>(rank));
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.u64());
      if (d == 0) throw FormatError("tensor '" + name + "' has a zero dimension");
      n *= d;
    }
    r.need(n * 8);
    std::vector<double> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = r.f64();
    out.tensors.push_back({std::move(name), Tensor::from_vector(std::move(shape), std::move(values))});
  }
  if (!r.done()) throw FormatError("trailing bytes after tensor archive");
  return out;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  const auto bytes = encode_archive(archive);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

void load_into(ParameterStore& store, const TensorArchive& archive) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& e : archive.tensors) by_name[e.name] = &e.tensor;
  for (const auto& e : store.entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor '" + e.name + "'");
    if (it->second->shape() != e.tensor.shape()) {
      throw FormatError("checkpoint tensor '" + e.name + "' has shape " + shape_to_string(it->second->shape()) +
                        ", model expects " + shape_to_string(e.tensor.shape()));
    }
  }
  if (by_name.size() != store.entries().size()) {
    throw FormatError("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model has " +
                      std::to_string(store.entries().size()));
  }
  for (auto e : store.entries()) {
    auto src = by_name.at(e.name)->data();
    auto dst = e.tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

TensorArchive snapshot(const ParameterStore& store, std::string metadata) {
  TensorArchive a;
  a.metadata = std::move(metadata);
  for (const auto& e : store.entries()) a.tensors.push_back({e.name, e.tensor.detach()});
  return a;
}

}  // namespace manager
