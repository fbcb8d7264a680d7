#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "stc/error.hpp"

namespace stc::io {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

// Append-only little-endian byte sink.
class Writer {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  template <class It>
  void f32_range(It first, It last) {
    for (; first != last; ++first) f32(static_cast<float>(*first));
  }

  const std::string& buffer() const { return buf_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed for " + path.string());
  }

 private:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string buf_;
};

// Bounds-checked little-endian reader; every overrun is a FormatError.
class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  static Reader load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(data));
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() { return raw<std::uint32_t>(); }
  std::uint64_t u64() { return raw<std::uint64_t>(); }
  float f32() { return raw<float>(); }
  std::string str() { return bytes(u32()); }
  std::vector<float> f32_vec(std::size_t n) {
    need(n * 4);
    std::vector<float> v(n);
    std::memcpy(v.data(), data_.data() + pos_, n * 4);
    pos_ += n * 4;
    return v;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  template <class T>
  T raw() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("unexpected end of data");
  }

  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace stc::io
