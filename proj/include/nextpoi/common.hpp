#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nextpoi {

using PoiId = std::int64_t;
using UserId = std::int64_t;

// Numeric values double as CLI exit codes (see tools/nextpoi_cli.cpp).
enum class ErrorCode : int {
  kInternal = 1,
  kConfig = 2,
  kBackend = 3,
  kInvariant = 4,
  kIo = 5,
  kData = 6,
  kDomain = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCode::kConfig, what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCode::kIo, what) {}
};
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorCode::kData, what) {}
};
struct BackendError : Error {
  explicit BackendError(const std::string& what) : Error(ErrorCode::kBackend, what) {}
};
struct InvariantError : Error {
  explicit InvariantError(const std::string& what) : Error(ErrorCode::kInvariant, what) {}
};
// Mathematical precondition violated (e.g. a posterior ordering the bound needs).
struct DomainError : Error {
  explicit DomainError(const std::string& what) : Error(ErrorCode::kDomain, what) {}
};

/// Hex SHA-256 of arbitrary bytes. Used for config and prompt digests.
std::string sha256_hex(std::string_view bytes);

/// splitmix64 step; the seeding primitive for every derived random stream.
std::uint64_t splitmix64(std::uint64_t x);

/// Combines a base seed with stream identifiers into an independent seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
inline double unit_interval(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

void write_text_file(const std::string& path, std::string_view contents);
std::string read_text_file(const std::string& path);

}  // namespace nextpoi
