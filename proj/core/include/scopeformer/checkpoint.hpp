#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scopeformer {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct NamedArray {
  std::string name;
  DType dtype = DType::F64;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // F32 arrays hold float-representable values

  bool operator==(const NamedArray&) const = default;
};

/// Binary layout (little endian):
///   "SCPF" | u32 version | u64 config digest | u32 array count
///   per array: u16 name length | name | u8 dtype | u8 ndim | ndim x u64 dims | payload
///   u64 FNV-1a checksum over all payload bytes
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::uint64_t config_digest = 0;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
  const NamedArray& at(const std::string& name) const;

  bool operator==(const Checkpoint&) const = default;
};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, UnsupportedVersion, DigestMismatch, Truncated, ChecksumMismatch, Malformed };

  CheckpointError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);

/// When `expected_digest` is set and differs from the stored digest, throws
/// DigestMismatch unless `force`.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                             std::optional<std::uint64_t> expected_digest = std::nullopt,
                             bool force = false);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_digest = std::nullopt,
                           bool force = false);

/// u64 values stored exactly as two f64 entries (low, high 32-bit halves).
std::vector<double> encode_u64(std::uint64_t v);
std::uint64_t decode_u64(std::span<const double> halves);

}  // namespace scopeformer
