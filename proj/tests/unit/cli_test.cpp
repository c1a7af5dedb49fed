#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "scopeformer/checkpoint.hpp"

namespace scopeformer::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "scopeformer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::uint64_t directory_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, dir).string();
    h = fnv1a64({reinterpret_cast<const std::uint8_t*>(rel.data()), rel.size()}, h);
    std::ifstream in(f, std::ios::binary);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    h = fnv1a64(bytes, h);
  }
  return h;
}

TEST(Cli, MissingConfigIsValidationError) {
  const auto r = invoke({"train", "--config", "missing.json"});
  EXPECT_EQ(r.code, kValidation);
  EXPECT_NE(r.err.find("missing.json"), std::string::npos) << r.err;
}

TEST(Cli, UnknownFlagIsUsageError) {
  EXPECT_EQ(invoke({"train", "--bogus"}).code, kUsage);
  EXPECT_EQ(invoke({}).code, kUsage);
  EXPECT_EQ(invoke({"frobnicate"}).code, kUsage);
}

TEST(Cli, HelpSucceeds) { EXPECT_EQ(invoke({"--help"}).code, kOk); }

TEST(Cli, InvalidConfigReportsFieldPath) {
  const fs::path p = fs::temp_directory_path() / "scopeformer_cli_bad.json";
  std::ofstream(p) << R"({"model": {"vit": {"dim": 10, "heads": 3}}, "train": {}})";
  const auto r = invoke({"train", "--config", p.string(), "--dry-run"});
  EXPECT_EQ(r.code, kValidation);
  EXPECT_NE(r.err.find("model.vit.heads"), std::string::npos) << r.err;
  fs::remove(p);
}

TEST(Cli, GradcheckSingleOpAndUnknownOp) {
  const auto r = invoke({"gradcheck", "--op", "matmul"});
  EXPECT_EQ(r.code, kOk);
  EXPECT_NE(r.out.find("matmul"), std::string::npos);
  EXPECT_EQ(invoke({"gradcheck", "--op", "nope"}).code, kValidation);
}

TEST(Cli, BadThreadEnvIsValidationError) {
  setenv("SCOPEFORMER_THREADS", "zero", 1);
  EXPECT_EQ(invoke({"gradcheck", "--op", "add"}).code, kValidation);
  setenv("SCOPEFORMER_THREADS", "2", 1);
  EXPECT_EQ(invoke({"gradcheck", "--op", "add"}).code, kOk);
  unsetenv("SCOPEFORMER_THREADS");
}

TEST(Cli, SynthIsDeterministic) {
  const fs::path a = fs::temp_directory_path() / "scopeformer_cli_synth_a";
  const fs::path b = fs::temp_directory_path() / "scopeformer_cli_synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  ASSERT_EQ(invoke({"synth", "--out", a.string(), "--count", "8", "--size", "32", "--seed", "7"}).code, kOk);
  ASSERT_EQ(invoke({"synth", "--out", b.string(), "--count", "8", "--size", "32", "--seed", "7"}).code, kOk);
  EXPECT_EQ(directory_digest(a), directory_digest(b));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, DryRunPrintsFullSizeGeometry) {
  const auto r = invoke({"train", "--config", std::string(SCOPEFORMER_CONFIG_DIR) + "/paper_scale.json", "--dry-run"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("vit_input: 7x7x3072"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("tokens: 50 x 1456"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("parameters.total:"), std::string::npos) << r.out;
}

TEST(Cli, TrainEvalInspectEndToEnd) {
  const fs::path dir = fs::temp_directory_path() / "scopeformer_cli_e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = (dir / "run.json").string();
  std::ofstream(cfg) << R"({
    "model": {"image_size": 16, "n_backbones": 2,
      "backbone": {"stages": [{"out_channels": 4, "stride": 2, "blocks": 0}, {"out_channels": 4, "stride": 2, "blocks": 1}]},
      "vit": {"depth": 1, "dim": 8, "heads": 2}},
    "train": {"batch_size": 4, "steps": 3, "seed": 1, "ckpt_dir": ")"
                     << (dir / "ckpt").string() << R"("},
    "data": {"synth": {"dir": ")"
                     << (dir / "data").string() << R"(", "count": 8, "val_count": 4, "size": 16, "seed": 3}}
  })";
  const auto train = invoke({"train", "--config", cfg});
  ASSERT_EQ(train.code, kOk) << train.err;
  EXPECT_NE(train.out.find("final_val_loss"), std::string::npos);

  const std::string ckpt = (dir / "ckpt" / "final.scpf").string();
  const auto eval = invoke({"eval", "--config", cfg, "--ckpt", ckpt, "--data", (dir / "data" / "val" / "manifest.jsonl").string()});
  ASSERT_EQ(eval.code, kOk) << eval.err;
  EXPECT_NE(eval.out.find("samples: 4"), std::string::npos) << eval.out;

  const auto inspect = invoke({"inspect", "--ckpt", ckpt});
  ASSERT_EQ(inspect.code, kOk) << inspect.err;
  EXPECT_NE(inspect.out.find("param/vit/projection f64"), std::string::npos) << inspect.out;
  EXPECT_NE(inspect.out.find("step: 3"), std::string::npos) << inspect.out;

  EXPECT_EQ(invoke({"inspect", "--ckpt", (dir / "nope.scpf").string()}).code, kRuntime);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace scopeformer::cli
