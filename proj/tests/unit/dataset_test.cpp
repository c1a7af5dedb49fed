#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>

#include "scopeformer/dataset.hpp"

namespace scopeformer {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Manifest, RoundTripAndRelativeResolution) {
  TempDir dir("scopeformer_manifest_test");
  Manifest m;
  m.entries = {{"a", "images/a.sfi", {1, 0, 0, 0, 0, 0}}, {"b", "/abs/b.dcm", {0, 0, 0, 0, 0, 0}}};
  write_manifest(dir.path() / "m.jsonl", m);
  const Manifest back = read_manifest(dir.path() / "m.jsonl");
  EXPECT_EQ(back.entries, m.entries);
  EXPECT_EQ(back.resolve(back.entries[0]), dir.path() / "images/a.sfi");
  EXPECT_EQ(back.resolve(back.entries[1]), fs::path("/abs/b.dcm"));
}

TEST(Manifest, BadLineNamesLineNumber) {
  TempDir dir("scopeformer_manifest_bad");
  std::ofstream(dir.path() / "m.jsonl") << R"({"id":"a","path":"x","labels":[0]})" << "\n{oops\n";
  try {
    read_manifest(dir.path() / "m.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(Synth, AnyLabelIsUnionOfSubtypes) {
  SynthOptions opts;
  opts.size = 32;
  opts.seed = 3;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto s = synth_slice(i, opts);
    ASSERT_EQ(s.labels.size(), kNumLabels);
    const bool any = std::any_of(s.labels.begin() + 1, s.labels.end(), [](int v) { return v == 1; });
    EXPECT_EQ(s.labels[0], any ? 1 : 0);
  }
}

TEST(Synth, GenerationIsByteDeterministic) {
  TempDir a("scopeformer_synth_a"), b("scopeformer_synth_b");
  SynthOptions opts;
  opts.count = 6;
  opts.size = 24;
  opts.seed = 7;
  for (auto fmt : {SampleFormat::Sfi, SampleFormat::Dicom}) {
    opts.format = fmt;
    const auto ma = synth_generate(opts, a.path());
    synth_generate(opts, b.path());
    EXPECT_EQ(slurp(a.path() / "manifest.jsonl"), slurp(b.path() / "manifest.jsonl"));
    for (const auto& e : ma.entries) EXPECT_EQ(slurp(a.path() / e.path), slurp(b.path() / e.path)) << e.path;
  }
}

TEST(Synth, DicomAndSfiLoadToSameImage) {
  TempDir dir("scopeformer_synth_fmt");
  SynthOptions opts;
  opts.count = 3;
  opts.size = 16;
  opts.seed = 1;
  opts.format = SampleFormat::Dicom;
  const auto dcm = synth_generate(opts, dir.path() / "dcm");
  opts.format = SampleFormat::Sfi;
  const auto sfi = synth_generate(opts, dir.path() / "sfi");
  for (std::size_t i = 0; i < 3; ++i) {
    const auto a = load_sample(dcm, i, {}).image.to_vector();
    const auto b = load_sample(sfi, i, {}).image.to_vector();
    ASSERT_EQ(a.size(), b.size());
    // .sfi stores f32
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(static_cast<float>(a[k]), b[k]);
  }
}

// Each subtype brightens a fixed region; a one-feature threshold on the mean
// of that region in the subdural window must separate positives from
// negatives well above chance.
TEST(Synth, LabelsAreLearnableFromPixels) {
  SynthOptions opts;
  opts.size = 32;
  opts.seed = 11;
  opts.positive_rate = 0.5;
  const WindowTriple w = default_windows();
  const double centers[5][2] = {{0.30, 0.28}, {0.70, 0.28}, {0.30, 0.72}, {0.70, 0.72}, {0.50, 0.50}};
  const std::size_t n = 200;
  for (std::size_t label = 1; label < kNumLabels; ++label) {
    std::vector<std::pair<double, int>> feats;
    for (std::size_t i = 0; i < n; ++i) {
      const auto s = synth_slice(i, opts);
      const Tensor img = hu_window_stack(s.slice, w);
      const auto cx = static_cast<std::size_t>(centers[label - 1][0] * 32);
      const auto cy = static_cast<std::size_t>(centers[label - 1][1] * 32);
      double acc = 0.0;
      for (std::size_t r = cy - 1; r <= cy + 1; ++r)
        for (std::size_t c = cx - 1; c <= cx + 1; ++c) acc += img.at({r, c, 1});
      feats.emplace_back(acc / 9.0, s.labels[label]);
    }
    double best = 0.0;
    for (const auto& [t, _] : feats) {
      std::size_t right = 0;
      for (const auto& [f, y] : feats) right += (f > t) == (y == 1);
      best = std::max(best, static_cast<double>(right) / n);
    }
    EXPECT_GT(best, 0.9) << "label " << label;
  }
}

TEST(Batching, EpochOrderIsSeededPermutation) {
  const auto a = epoch_order(10, 5, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(a, epoch_order(10, 5, 0));
  EXPECT_NE(a, epoch_order(10, 5, 1));
}

TEST(Batching, OneEpochCoversEverySampleOnce) {
  TempDir dir("scopeformer_batch_test");
  SynthOptions opts;
  opts.count = 7;
  opts.size = 16;
  const Manifest m = synth_generate(opts, dir.path());
  SampleCache cache;
  BatchIterator it(m, 3, 9, 0, {}, &cache);
  EXPECT_EQ(it.batch_count(), 3u);
  std::map<std::string, int> seen;
  std::vector<std::size_t> sizes;
  while (auto b = it.next()) {
    sizes.push_back(b->ids.size());
    EXPECT_EQ(b->images.shape(), (Shape{b->ids.size(), 16, 16, 3}));
    EXPECT_EQ(b->labels.shape(), (Shape{b->ids.size(), 6}));
    for (const auto& id : b->ids) ++seen[id];
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 3, 1}));
  EXPECT_EQ(seen.size(), 7u);
  for (const auto& [id, count] : seen) EXPECT_EQ(count, 1) << id;
  EXPECT_EQ(cache.size(), 7u);
}

TEST(Batching, LoadResizesAndValidatesLabels) {
  TempDir dir("scopeformer_load_test");
  SynthOptions opts;
  opts.count = 1;
  opts.size = 16;
  Manifest m = synth_generate(opts, dir.path());
  LoadOptions lo;
  lo.image_size = 8;
  EXPECT_EQ(load_sample(m, 0, lo).image.shape(), (Shape{8, 8, 3}));
  m.entries[0].labels = {0, 1};
  try {
    load_sample(m, 0, lo);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("sample_00000"), std::string::npos) << e.what();
  }
}

TEST(Batching, MissingFileNamesSample) {
  Manifest m;
  m.base_dir = "/nonexistent";
  m.entries = {{"ghost", "ghost.sfi", {0, 0, 0, 0, 0, 0}}};
  try {
    load_sample(m, 0, {});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

}  // namespace
}  // namespace scopeformer
