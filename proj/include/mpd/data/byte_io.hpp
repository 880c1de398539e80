#pragma once

// Little-endian primitives shared by the binary dataset and snapshot formats.

#include "mpd/core/tensor.hpp"
#include "mpd/data/io.hpp"

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mpd::bytes {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  put_u32(out, static_cast<std::uint32_t>(bits));
  put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

inline void put_id(std::vector<std::uint8_t>& out, const std::string& id) {
  put_u32(out, static_cast<std::uint32_t>(id.size()));
  out.insert(out.end(), id.begin(), id.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - at_; }
  std::size_t offset() const { return at_; }

  void need(std::size_t n, const char* what) const {
    if (n > remaining()) {
      throw CorruptionError("corrupt binary: " + std::string(what) + " at byte " + std::to_string(at_) +
                            " needs " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left");
    }
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[at_++];
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[at_ + i]) << (8 * i);
    at_ += 4;
    return v;
  }

  std::string id(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + at_), n);
    at_ += n;
    return s;
  }

  RowVector<double> f32s(std::size_t n, const char* what) {
    need(n * 4, what);
    RowVector<double> v(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = std::bit_cast<float>(u32(what));
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    const std::uint64_t lo = u32(what);
    const std::uint64_t hi = u32(what);
    return std::bit_cast<double>(lo | (hi << 32));
  }

  /// Count of items each at least `min_size` bytes long.
  std::uint32_t count(std::size_t min_size, const char* what) {
    const std::uint32_t n = u32(what);
    if (static_cast<std::uint64_t>(n) * min_size > remaining()) {
      throw CorruptionError("corrupt binary: " + std::string(what) + " " + std::to_string(n) + " at byte " +
                            std::to_string(at_ - 4) + " overruns the file");
    }
    return n;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t at_ = 0;
};

}  // namespace mpd::bytes
