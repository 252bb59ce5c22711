#pragma once

// Little-endian byte encoding shared by the checkpoint and cache formats.

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <cstring>
#include <string>

#include "cyclemap/error.hpp"

namespace cyclemap::binio {

inline bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

class Writer {
 public:
  template <class T>
  void put(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if (!host_is_little_endian()) std::reverse(b, b + sizeof(T));
    out_.append(reinterpret_cast<const char*>(b), sizeof(T));
  }
  void put_bytes(const std::string& s) { out_ += s; }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    out_ += s;
  }
  void put_tensor(const Eigen::VectorXd& v) {
    put<std::uint64_t>(static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) put<double>(v(i));
  }
  const std::string& bytes() const { return out_; }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

/// Bounds-checked reader; every overrun throws DataError("<name>: truncated
/// <kind> (while reading <what>)").
class Reader {
 public:
  Reader(const std::string& bytes, std::string name, std::string kind, std::size_t begin = 0,
         std::size_t end = std::string::npos)
      : bytes_(bytes), name_(std::move(name)), kind_(std::move(kind)), pos_(begin),
        end_(std::min(end, bytes.size())) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    unsigned char b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if (!host_is_little_endian()) std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

  std::string get_string(const char* what) {
    const auto len = get<std::uint64_t>(what);
    need(len, what);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  Eigen::VectorXd get_tensor(const char* what) {
    const auto len = get<std::uint64_t>(what);
    need_elements(len, 8, what);
    Eigen::VectorXd v(static_cast<Eigen::Index>(len));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = get<double>(what);
    return v;
  }

  /// Throws unless count * size more bytes remain (overflow-safe).
  void need_elements(std::uint64_t count, std::size_t size, const char* what) {
    if (count > remaining() / size) truncated(what);
  }
  void need_matrix(std::uint64_t rows, std::uint64_t cols, std::size_t size, const char* what) {
    if (cols != 0 && rows > remaining() / size / cols) truncated(what);
  }
  std::size_t remaining() const { return end_ - pos_; }
  bool at_end() const { return pos_ == end_; }

 private:
  void need(std::uint64_t len, const char* what) {
    if (len > remaining()) truncated(what);
  }
  [[noreturn]] void truncated(const char* what) {
    throw DataError(name_ + ": truncated " + kind_ + " (while reading " + what + ")");
  }

  const std::string& bytes_;
  std::string name_;
  std::string kind_;
  std::size_t pos_;
  std::size_t end_;
};

}  // namespace cyclemap::binio
