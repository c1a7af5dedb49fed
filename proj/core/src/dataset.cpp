#include "scopeformer/dataset.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "scopeformer/rng.hpp"

namespace scopeformer {

namespace {

constexpr double kIntercept = -1024.0;

struct Lesion {
  double cx, cy;      // center, fraction of image size
  double rx, ry;      // semi-axes, fraction of image size
  double hu_lo, hu_hi;
};

// Subtypes 1..5: one localized bright signature each.
constexpr std::array<Lesion, 5> kLesions = {{
    {0.30, 0.28, 0.11, 0.07, 60.0, 70.0},
    {0.70, 0.28, 0.07, 0.11, 72.0, 82.0},
    {0.30, 0.72, 0.10, 0.10, 85.0, 95.0},
    {0.70, 0.72, 0.12, 0.06, 100.0, 115.0},
    {0.50, 0.50, 0.08, 0.08, 120.0, 140.0},
}};

bool inside(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx;
  const double dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

const char* extension(SampleFormat f) { return f == SampleFormat::Dicom ? ".dcm" : ".sfi"; }

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu", index);
  return buf;
}

}  // namespace

std::filesystem::path Manifest::resolve(const ManifestEntry& e) const {
  const std::filesystem::path p(e.path);
  return p.is_absolute() ? p : base_dir / p;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      e.labels = j.at("labels").get<std::vector<int>>();
      m.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["path"] = e.path;
    j["labels"] = e.labels;
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

SynthSlice synth_slice(std::size_t index, const SynthOptions& options) {
  if (options.size < 16) throw std::invalid_argument("synthetic image size must be >= 16");
  Rng rng(mix64(options.seed, index));
  SynthSlice out;
  out.labels.assign(kNumLabels, 0);
  for (std::size_t l = 1; l < kNumLabels; ++l) {
    out.labels[l] = rng.bernoulli(options.positive_rate) ? 1 : 0;
    out.labels[0] |= out.labels[l];
  }
  std::array<Lesion, 5> lesions = kLesions;
  std::array<double, 5> lesion_hu{};
  for (std::size_t k = 0; k < lesions.size(); ++k) {
    lesions[k].cx += rng.uniform(-0.02, 0.02);
    lesions[k].cy += rng.uniform(-0.02, 0.02);
    lesion_hu[k] = rng.uniform(lesions[k].hu_lo, lesions[k].hu_hi);
  }

  const std::size_t S = options.size;
  CtSlice& slice = out.slice;
  slice.rows = S;
  slice.cols = S;
  slice.rescale_slope = 1.0;
  slice.rescale_intercept = kIntercept;
  slice.source_id = sample_id(index);
  slice.pixel_values.resize(S * S);
  for (std::size_t r = 0; r < S; ++r) {
    for (std::size_t c = 0; c < S; ++c) {
      const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(S);
      const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(S);
      const double noise = rng.normal(0.0, 6.0);
      double hu = -1000.0 + noise;
      if (inside(x, y, 0.5, 0.5, 0.42, 0.46)) {
        if (inside(x, y, 0.5, 0.5, 0.42 * 0.88, 0.46 * 0.88)) {
          hu = 30.0 + noise;
          for (std::size_t k = 0; k < lesions.size(); ++k) {
            const auto& les = lesions[k];
            if (out.labels[k + 1] && inside(x, y, les.cx, les.cy, les.rx, les.ry)) {
              hu = lesion_hu[k] + noise;
            }
          }
        } else {
          hu = 700.0 + 4.0 * noise;
        }
      }
      slice.pixel_values[r * S + c] = static_cast<std::int32_t>(std::lround(hu - kIntercept));
    }
  }
  return out;
}

Manifest synth_generate(const SynthOptions& options, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  Manifest manifest;
  manifest.base_dir = out_dir;
  for (std::size_t i = 0; i < options.count; ++i) {
    auto synth = synth_slice(i, options);
    ManifestEntry e;
    e.id = sample_id(i);
    e.path = "images/" + e.id + extension(options.format);
    e.labels = synth.labels;
    if (options.format == SampleFormat::Dicom) {
      save_dicom_lite(out_dir / e.path, synth.slice);
    } else {
      write_sfi(out_dir / e.path, hu_window_stack(synth.slice, options.windows));
    }
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

Sample load_sample(const Manifest& manifest, std::size_t index, const LoadOptions& options) {
  const auto& entry = manifest.entries.at(index);
  const auto path = manifest.resolve(entry);
  Sample s;
  s.id = entry.id;
  try {
    if (path.extension() == ".dcm") {
      s.image = hu_window_stack(read_dicom_lite(path), options.windows);
    } else {
      s.image = read_sfi(path);
    }
  } catch (const std::exception& ex) {
    throw DataError("sample " + entry.id + " (" + path.string() + "): " + ex.what());
  }
  if (s.image.shape()[2] != 3) {
    throw DataError("sample " + entry.id + ": expected 3 channels, got " + shape_to_string(s.image.shape()));
  }
  if (options.image_size != 0 &&
      (s.image.shape()[0] != options.image_size || s.image.shape()[1] != options.image_size)) {
    s.image = resize_bilinear(s.image, options.image_size, options.image_size);
  }
  if (entry.labels.size() != options.num_labels) {
    throw DataError("sample " + entry.id + ": expected " + std::to_string(options.num_labels) +
                    " labels, got " + std::to_string(entry.labels.size()));
  }
  for (int v : entry.labels) {
    if (v != 0 && v != 1) throw DataError("sample " + entry.id + ": labels must be 0 or 1");
    s.labels.push_back(static_cast<double>(v));
  }
  return s;
}

const Sample& SampleCache::get(const Manifest& manifest, std::size_t index, const LoadOptions& options) {
  auto it = samples_.find(index);
  if (it == samples_.end()) it = samples_.emplace(index, load_sample(manifest, index, options)).first;
  return it->second;
}

Batch make_batch(const Manifest& manifest, std::span<const std::size_t> indices,
                 const LoadOptions& options, SampleCache* cache) {
  if (indices.empty()) throw DataError("empty batch");
  Batch batch;
  std::vector<double> pixels;
  std::vector<double> labels;
  Shape image_shape;
  for (std::size_t idx : indices) {
    Sample local;
    const Sample& s = cache ? cache->get(manifest, idx, options)
                            : (local = load_sample(manifest, idx, options));
    if (image_shape.empty()) {
      image_shape = s.image.shape();
    } else if (s.image.shape() != image_shape) {
      throw DataError("sample " + s.id + " has shape " + shape_to_string(s.image.shape()) +
                      ", batch expects " + shape_to_string(image_shape));
    }
    pixels.insert(pixels.end(), s.image.data().begin(), s.image.data().end());
    labels.insert(labels.end(), s.labels.begin(), s.labels.end());
    batch.ids.push_back(s.id);
  }
  const std::size_t B = indices.size();
  batch.images = Tensor::from({B, image_shape[0], image_shape[1], image_shape[2]}, std::move(pixels));
  batch.labels = Tensor::from({B, options.num_labels}, std::move(labels));
  return batch;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t shuffle_seed, std::uint64_t epoch) {
  return permutation(n, mix64(shuffle_seed, epoch));
}

BatchIterator::BatchIterator(const Manifest& manifest, std::size_t batch_size,
                             std::uint64_t shuffle_seed, std::uint64_t epoch, LoadOptions options,
                             SampleCache* cache)
    : manifest_(manifest),
      batch_size_(batch_size),
      options_(std::move(options)),
      cache_(cache),
      order_(epoch_order(manifest.size(), shuffle_seed, epoch)) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
}

std::size_t BatchIterator::batch_count() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::span<const std::size_t> indices(order_.data() + cursor_, end - cursor_);
  cursor_ = end;
  return make_batch(manifest_, indices, options_, cache_);
}

}  // namespace scopeformer
