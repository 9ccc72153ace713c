#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lotr/tensor.hpp"

namespace lotr {

/// Named-tensor container file.
///
/// Layout (all integers little-endian):
///   "LOTR" | version u32 | entry count u32
///   per entry: name length u16 | UTF-8 name | dtype u8 (0 = f64, 1 = f32) |
///              rank u8 | dims u64 x rank | raw little-endian values
/// Entries keep insertion order.
class TensorContainer {
 public:
  static constexpr std::uint32_t kVersion = 1;
  enum class Dtype : std::uint8_t { kF64 = 0, kF32 = 1 };

  void add(std::string name, Tensor value, Dtype dtype = Dtype::kF64) {
    if (name.size() > 0xFFFF) throw IoError("container entry name too long");
    if (value.rank() > 0xFF) throw IoError("container entry rank too large");
    if (index_.count(name)) throw IoError("duplicate container entry '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), value.detached(), dtype});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("container has no entry '" + name + "'");
    return entries_[it->second].value;
  }

  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  std::vector<char> encode() const {
    std::vector<char> out;
    out.insert(out.end(), {'L', 'O', 'T', 'R'});
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      put_int(out, static_cast<std::uint16_t>(e.name.size()), 2);
      out.insert(out.end(), e.name.begin(), e.name.end());
      out.push_back(static_cast<char>(e.dtype));
      out.push_back(static_cast<char>(e.value.rank()));
      for (auto d : e.value.shape()) put_int(out, d, 8);
      for (double v : e.value.data()) {
        if (e.dtype == Dtype::kF64)
          put_int(out, std::bit_cast<std::uint64_t>(v), 8);
        else
          put_int(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
      }
    }
    return out;
  }

  static TensorContainer decode(const std::vector<char>& bytes) {
    Reader r{bytes, 0};
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "LOTR", 4) != 0)
      throw IoError("corrupt container: bad magic");
    r.pos = 4;
    const auto version = static_cast<std::uint32_t>(r.get(4));
    if (version != kVersion) throw IoError("corrupt container: unsupported version " + std::to_string(version));
    const auto count = static_cast<std::uint32_t>(r.get(4));
    TensorContainer c;
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto nlen = static_cast<std::size_t>(r.get(2));
      std::string name = r.bytes(nlen);
      const auto dtype = static_cast<std::uint8_t>(r.get(1));
      if (dtype > 1) throw IoError("corrupt container: unknown dtype " + std::to_string(dtype));
      const auto rank = static_cast<std::size_t>(r.get(1));
      Shape shape(rank);
      for (auto& d : shape) {
        d = static_cast<std::size_t>(r.get(8));
        if (d == 0) throw IoError("corrupt container: zero dimension in '" + name + "'");
      }
      const std::size_t n = shape_size(shape);
      const std::size_t width = dtype == 0 ? 8 : 4;
      if (n > (bytes.size() - r.pos) / width) throw IoError("corrupt container: truncated data for '" + name + "'");
      std::vector<double> values(n);
      for (auto& v : values) {
        if (dtype == 0)
          v = std::bit_cast<double>(r.get(8));
        else
          v = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(r.get(4))));
      }
      c.add(std::move(name), Tensor(std::move(shape), std::move(values)), static_cast<Dtype>(dtype));
    }
    if (r.pos != bytes.size()) throw IoError("corrupt container: trailing bytes");
    return c;
  }

  void save(const std::string& path) const {
    const auto bytes = encode();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + path + "'");
  }

  static TensorContainer load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
      return decode(bytes);
    } catch (const IoError& e) {
      throw IoError(path + ": " + e.what());
    }
  }

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Dtype dtype;
  };

  struct Reader {
    const std::vector<char>& buf;
    std::size_t pos;

    std::uint64_t get(std::size_t width) {
      if (buf.size() - pos < width) throw IoError("corrupt container: truncated");
      std::uint64_t v = 0;
      for (std::size_t i = 0; i < width; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
      pos += width;
      return v;
    }

    std::string bytes(std::size_t n) {
      if (buf.size() - pos < n) throw IoError("corrupt container: truncated");
      std::string s(buf.data() + pos, n);
      pos += n;
      return s;
    }
  };

  static void put_int(std::vector<char>& out, std::uint64_t v, std::size_t width) {
    for (std::size_t i = 0; i < width; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  static void put_u32(std::vector<char>& out, std::uint32_t v) { put_int(out, v, 4); }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace lotr
