#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>

#include <fmt/core.h>

#include "fgdcc/errors.hpp"
#include "fgdcc/tensor.hpp"

namespace fgdcc::detail {

class BinaryWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    std::uint64_t bits = 0;
    if constexpr (std::is_floating_point_v<T>) {
      static_assert(sizeof(T) == 8);
      std::memcpy(&bits, &v, 8);
    } else {
      bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    buf_ += s;
  }
  void put_matrix(const Matrix& m) {
    put<std::uint64_t>(m.rows());
    put<std::uint64_t>(m.cols());
    for (double v : m.data()) put(v);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  BinaryReader(const std::string& buf, std::string source) : buf_(buf), source_(std::move(source)) {}

  template <typename T>
  T get() {
    static_assert(std::is_arithmetic_v<T>);
    need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_floating_point_v<T>) {
      double v = 0.0;
      std::memcpy(&v, &bits, 8);
      return v;
    } else {
      return static_cast<T>(bits);
    }
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Matrix get_matrix() {
    const auto r = get<std::uint64_t>();
    const auto c = get<std::uint64_t>();
    if (c != 0 && r > remaining() / 8 / c) fail("matrix payload");
    Matrix m(r, c);
    for (double& v : m.data()) v = get<double>();
    return m;
  }
  void expect_raw(const char* p, std::size_t n, const char* what) {
    need(n);
    if (buf_.compare(pos_, n, p, n) != 0) {
      throw FormatError(fmt::format("{}: bad {} at offset {}", source_, what, pos_));
    }
    pos_ += n;
  }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  std::size_t offset() const noexcept { return pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(fmt::format("{}: truncated {} at offset {}", source_, what, pos_));
  }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) fail("data");
  }

  const std::string& buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace fgdcc::detail
