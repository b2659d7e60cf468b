#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace agn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
struct ShapeError : Error {
  using Error::Error;
};

// A hyperparameter or build option violates its stated constraints.
struct ConfigError : Error {
  using Error::Error;
};

// Runtime data handed to an operation is unusable (too short, wrong arity).
struct InputError : Error {
  using Error::Error;
};

// A file could not be decoded.
struct ParseError : Error {
  using Error::Error;
};

// A checkpoint failed magic/version/checksum validation.
struct CheckpointError : Error {
  using Error::Error;
};

// An API precondition was broken by the caller.
struct ContractError : Error {
  using Error::Error;
};

using Shape = std::vector<std::int64_t>;
using Rng = std::mt19937_64;

inline std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

// Row-major strides.
inline Shape strides_of(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::int64_t i = static_cast<std::int64_t>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// CRC-32 (IEEE, reflected, zlib-compatible) over a byte range.
inline std::uint32_t crc32(const void* bytes, std::size_t n,
                           std::uint32_t seed = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
      }
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = seed ^ 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
  }
  return crc ^ 0xFFFFFFFFu;
}

}  // namespace agn
