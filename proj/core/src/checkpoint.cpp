#include "scopeformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace scopeformer {

namespace {

class Sink {
 public:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
    }
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Source {
 public:
  explicit Source(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > bytes_.size() - pos_) {
      std::ostringstream os;
      os << "checkpoint truncated reading " << what << " at offset " << pos_ << " (need " << n
         << " bytes, " << bytes_.size() - pos_ << " left)";
      throw CheckpointError(CheckpointError::Kind::Truncated, os.str());
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t element_size(DType d) { return d == DType::F32 ? 4 : 8; }

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& Checkpoint::at(const std::string& name) const {
  const auto* a = find(name);
  if (!a) throw CheckpointError(CheckpointError::Kind::Malformed, "checkpoint has no array " + name);
  return *a;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t hash) {
  for (auto b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Sink s;
  s.raw("SCPF", 4);
  s.put<std::uint32_t>(ckpt.version);
  s.put<std::uint64_t>(ckpt.config_digest);
  s.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.arrays.size()));
  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  for (const auto& a : ckpt.arrays) {
    if (a.name.size() > 0xFFFF) throw std::invalid_argument("array name too long: " + a.name);
    if (a.dims.size() > 0xFF) throw std::invalid_argument("too many dims for " + a.name);
    std::uint64_t count = 1;
    for (auto d : a.dims) count *= d;
    if (count != a.values.size()) throw std::invalid_argument("dims do not match values for " + a.name);
    s.put<std::uint16_t>(static_cast<std::uint16_t>(a.name.size()));
    s.raw(a.name.data(), a.name.size());
    s.put<std::uint8_t>(static_cast<std::uint8_t>(a.dtype));
    s.put<std::uint8_t>(static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) s.put<std::uint64_t>(d);
    const std::size_t start = s.bytes.size();
    for (double v : a.values) {
      if (a.dtype == DType::F32) {
        s.put<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        s.put<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
      }
    }
    checksum = fnv1a64(std::span(s.bytes).subspan(start), checksum);
  }
  s.put<std::uint64_t>(checksum);
  return std::move(s.bytes);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                             std::optional<std::uint64_t> expected_digest, bool force) {
  Source src(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SCPF", 4) != 0) {
    throw CheckpointError(CheckpointError::Kind::BadMagic, "not a checkpoint: bad magic");
  }
  src.take(4, "magic");
  Checkpoint ckpt;
  ckpt.version = src.get<std::uint32_t>("version");
  if (ckpt.version == 0 || ckpt.version > Checkpoint::kVersion) {
    throw CheckpointError(CheckpointError::Kind::UnsupportedVersion,
                          "checkpoint version " + std::to_string(ckpt.version) +
                              " is not supported (max " + std::to_string(Checkpoint::kVersion) + ")");
  }
  ckpt.config_digest = src.get<std::uint64_t>("config digest");
  if (expected_digest && *expected_digest != ckpt.config_digest && !force) {
    std::ostringstream os;
    os << std::hex << "checkpoint config digest 0x" << ckpt.config_digest
       << " does not match model config digest 0x" << *expected_digest;
    throw CheckpointError(CheckpointError::Kind::DigestMismatch, os.str());
  }
  const auto count = src.get<std::uint32_t>("array count");
  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    const auto name_len = src.get<std::uint16_t>("name length");
    const auto name = src.take(name_len, "name");
    a.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
    const auto dtype = src.get<std::uint8_t>("dtype");
    if (dtype > 1) {
      throw CheckpointError(CheckpointError::Kind::Malformed,
                            "unknown dtype " + std::to_string(dtype) + " for " + a.name);
    }
    a.dtype = static_cast<DType>(dtype);
    const auto ndim = src.get<std::uint8_t>("ndim");
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      a.dims.push_back(src.get<std::uint64_t>("dims"));
      n *= a.dims.back();
    }
    const std::size_t esize = element_size(a.dtype);
    if (n > src.remaining() / esize) {
      throw CheckpointError(CheckpointError::Kind::Truncated,
                            "checkpoint truncated in payload of " + a.name + " at offset " +
                                std::to_string(src.offset()));
    }
    const auto payload = src.take(static_cast<std::size_t>(n) * esize, "payload");
    checksum = fnv1a64(payload, checksum);
    a.values.resize(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < esize; ++b) bits |= static_cast<std::uint64_t>(payload[i * esize + b]) << (8 * b);
      a.values[i] = a.dtype == DType::F32 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)))
                                          : std::bit_cast<double>(bits);
    }
    ckpt.arrays.push_back(std::move(a));
  }
  const auto stored = src.get<std::uint64_t>("checksum");
  if (stored != checksum) {
    throw CheckpointError(CheckpointError::Kind::ChecksumMismatch, "checkpoint payload checksum mismatch");
  }
  if (src.remaining() != 0) {
    throw CheckpointError(CheckpointError::Kind::Malformed,
                          std::to_string(src.remaining()) + " trailing bytes after checkpoint");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_digest, bool force) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, expected_digest, force);
}

std::vector<double> encode_u64(std::uint64_t v) {
  return {static_cast<double>(v & 0xFFFFFFFFULL), static_cast<double>(v >> 32)};
}

std::uint64_t decode_u64(std::span<const double> halves) {
  if (halves.size() != 2) throw CheckpointError(CheckpointError::Kind::Malformed, "expected two u32 halves");
  return static_cast<std::uint64_t>(halves[0]) | (static_cast<std::uint64_t>(halves[1]) << 32);
}

}  // namespace scopeformer
