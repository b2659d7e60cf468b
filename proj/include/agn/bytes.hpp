#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "agn/common.hpp"

namespace agn::detail {

// Little-endian byte packing for the MOTB and checkpoint formats.

inline void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& buf, float v) {
  put_u32(buf, std::bit_cast<std::uint32_t>(v));
}

// Bounds-checked little-endian reader; `what` names the format in errors.
// Throws the exception type E so each file format reports its own category.
template <typename E>
class ByteReaderT {
 public:
  ByteReaderT(const std::string& data, std::string what)
      : data_(data), what_(std::move(what)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(data_[pos_]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(data_[pos_ + 1]))
                       << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) {
      throw E(what_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
              std::to_string(pos_) + ")");
    }
  }
  const std::string& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(std::string(what) + ": cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::string& path, const std::string& data, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError(std::string(what) + ": cannot open " + path + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw InputError(std::string(what) + ": write failed for " + path);
}

// Verify a trailing little-endian CRC32 and return the payload span length.
template <typename E>
std::size_t check_trailing_crc(const std::string& data, const char* what) {
  if (data.size() < 4) throw E(std::string(what) + ": file too short");
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) {
    stored |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[data.size() - 4 + i]))
              << (8 * i);
  }
  const std::uint32_t computed = crc32(data.data(), data.size() - 4);
  if (computed != stored) throw E(std::string(what) + ": checksum mismatch");
  return data.size() - 4;
}

}  // namespace agn::detail
