// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "atom/core/error.hpp"

namespace atom::io {

/// 64-bit FNV-1a, used for config and data fingerprints.
class Fnv1a {
 public:
  void update(const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void update_pod(const T& v) {
    update(&v, sizeof(T));
  }
  std::uint64_t digest() const noexcept { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Little-endian binary writer over an in-memory buffer. Files are written in
/// one shot by `save`, so a failed write never leaves a partial container.
class Writer {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }

  void bytes(const void* data, std::size_t n) { buf_.append(static_cast<const char*>(data), n); }

  void str(std::string_view s) {
    pod<std::uint64_t>(s.size());
    buf_.append(s);
  }

  template <typename T>
  void array(const std::vector<T>& v) {
    pod<std::uint64_t>(v.size());
    bytes(v.data(), v.size() * sizeof(T));
  }

  const std::string& buffer() const noexcept { return buf_; }

  void save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot open '" + tmp + "' for writing");
      out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
      if (!out) throw Error("write failed for '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
      throw Error("cannot move '" + tmp + "' to '" + path + "'");
    }
  }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string buffer, std::string origin = "<memory>")
      : buf_(std::move(buffer)), origin_(std::move(origin)) {}

  static Reader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return Reader(ss.str(), path);
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T pod() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  std::vector<T> array() {
    const auto n = pod<std::uint64_t>();
    if (n > (buf_.size() - pos_) / sizeof(T)) truncated();
    std::vector<T> v(n);
    bytes(v.data(), n * sizeof(T));
    return v;
  }

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  const std::string& origin() const noexcept { return origin_; }

 private:
  void need(std::size_t n) const {
    if (n > buf_.size() - pos_) truncated();
  }
  [[noreturn]] void truncated() const { throw LoadError("'" + origin_ + "' is truncated"); }

  std::string buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace atom::io
