#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scopeformer/imaging.hpp"
#include "scopeformer/tensor.hpp"

namespace scopeformer {

/// Labels: index 0 is "any", 1..5 the hemorrhage subtypes.
inline constexpr std::size_t kNumLabels = 6;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestEntry {
  std::string id;
  std::string path;  // relative paths resolve against the manifest's directory
  std::vector<int> labels;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  std::size_t size() const { return entries.size(); }
  std::filesystem::path resolve(const ManifestEntry& e) const;
};

/// JSON lines: {"id": str, "path": str, "labels": [ints]} per line.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

enum class SampleFormat { Sfi, Dicom };

struct SynthOptions {
  std::size_t count = 0;
  std::size_t size = 32;
  std::uint64_t seed = 0;
  double positive_rate = 0.3;
  SampleFormat format = SampleFormat::Sfi;
  WindowTriple windows = default_windows();
};

/// Renders one synthetic CT slice (integer HU stored with intercept -1024) and
/// its labels. Subtype l in 1..5 draws independently with `positive_rate` and,
/// when present, adds a lesion at a label-specific position and HU band.
struct SynthSlice {
  CtSlice slice;
  std::vector<int> labels;
};
SynthSlice synth_slice(std::size_t index, const SynthOptions& options);

/// Writes `count` samples plus manifest.jsonl under out_dir. Output bytes are
/// a pure function of (count, size, seed, positive_rate, format).
Manifest synth_generate(const SynthOptions& options, const std::filesystem::path& out_dir);

struct Sample {
  Tensor image;  // [H, W, 3] in [0, 1]
  std::vector<double> labels;
  std::string id;
};

struct LoadOptions {
  std::size_t image_size = 0;  // 0 keeps the stored size
  WindowTriple windows = default_windows();
  std::size_t num_labels = kNumLabels;
};

/// Reads .sfi directly; .dcm goes through windowing first.
Sample load_sample(const Manifest& manifest, std::size_t index, const LoadOptions& options);

/// Memoizes decoded samples by manifest index.
class SampleCache {
 public:
  const Sample& get(const Manifest& manifest, std::size_t index, const LoadOptions& options);
  std::size_t size() const { return samples_.size(); }

 private:
  std::map<std::size_t, Sample> samples_;
};

struct Batch {
  Tensor images;  // [B, H, W, 3]
  Tensor labels;  // [B, L]
  std::vector<std::string> ids;
};

Batch make_batch(const Manifest& manifest, std::span<const std::size_t> indices,
                 const LoadOptions& options, SampleCache* cache = nullptr);

/// Deterministic visiting order for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t shuffle_seed, std::uint64_t epoch);

/// Batches over one epoch; the last batch may be short.
class BatchIterator {
 public:
  BatchIterator(const Manifest& manifest, std::size_t batch_size, std::uint64_t shuffle_seed,
                std::uint64_t epoch, LoadOptions options = {}, SampleCache* cache = nullptr);

  std::optional<Batch> next();
  std::size_t batch_count() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const Manifest& manifest_;
  std::size_t batch_size_;
  LoadOptions options_;
  SampleCache* cache_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace scopeformer
