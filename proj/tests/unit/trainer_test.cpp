#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "scopeformer/gradcheck_suite.hpp"
#include "scopeformer/trainer.hpp"

namespace scopeformer {
namespace {

namespace fs = std::filesystem;

class TrainerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "scopeformer_trainer_test";
    fs::remove_all(dir_);
    SynthOptions opts;
    opts.count = 12;
    opts.size = 16;
    opts.seed = 2;
    synth_generate(opts, dir_ / "train");
    opts.count = 6;
    opts.seed = 3;
    synth_generate(opts, dir_ / "val");
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static Manifest train_set() { return read_manifest(dir_ / "train" / "manifest.jsonl"); }
  static Manifest val_set() { return read_manifest(dir_ / "val" / "manifest.jsonl"); }

  static TrainConfig config(std::size_t steps) {
    TrainConfig c;
    c.batch_size = 5;
    c.steps = steps;
    c.seed = 9;
    c.optimizer.lr = 3e-3;
    return c;
  }

  static std::vector<double> losses(const History& h) {
    std::vector<double> out;
    for (const auto& r : h.records) out.push_back(r.train_loss);
    return out;
  }

  static fs::path dir_;
};

fs::path TrainerTest::dir_;

TEST_F(TrainerTest, ZeroLearningRateKeepsLossConstant) {
  ScopeformerModel model(tiny_model_config(1));
  auto cfg = config(6);
  cfg.optimizer.lr = 0.0;
  cfg.batch_size = 12;  // full batch, same samples each step
  Trainer t(model, cfg, train_set());
  const auto l = losses(t.run());
  for (double v : l) EXPECT_NEAR(v, l.front(), 1e-12);
}

TEST_F(TrainerTest, RunsAreDeterministic) {
  ScopeformerModel a(tiny_model_config(1)), b(tiny_model_config(1));
  Trainer ta(a, config(8), train_set());
  Trainer tb(b, config(8), train_set());
  EXPECT_EQ(losses(ta.run()), losses(tb.run()));
}

TEST_F(TrainerTest, ResumeReproducesTrajectoryBitExactly) {
  ScopeformerModel full_model(tiny_model_config(1));
  Trainer full(full_model, config(10), train_set());
  const auto reference = losses(full.run());

  const fs::path ckpt = dir_ / "mid.scpf";
  {
    ScopeformerModel m(tiny_model_config(1));
    Trainer first(m, config(4), train_set());
    first.run();
    first.save(ckpt);
  }
  ScopeformerModel m(tiny_model_config(1));
  Trainer second(m, config(10), train_set());
  second.resume(ckpt);
  EXPECT_EQ(second.step(), 4u);
  const auto tail = losses(second.run());
  ASSERT_EQ(tail.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(tail[i], reference[4 + i]) << "step " << 5 + i;
}

TEST_F(TrainerTest, CheckpointRefusesOtherArchitecture) {
  ScopeformerModel m(tiny_model_config(1));
  Trainer t(m, config(1), train_set());
  t.run();
  const Checkpoint ckpt = t.checkpoint();
  auto other_cfg = tiny_model_config(1);
  other_cfg.vit.dropout = 0.1;
  ScopeformerModel other(other_cfg);
  Trainer t2(other, config(1), train_set());
  try {
    t2.restore(ckpt);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::DigestMismatch);
  }
  EXPECT_NO_THROW(t2.restore(ckpt, true));
}

TEST_F(TrainerTest, EvaluationScheduleAndHistoryCsv) {
  ScopeformerModel m(tiny_model_config(1));
  auto cfg = config(5);
  cfg.eval_every = 2;
  cfg.history_csv = (dir_ / "hist.csv").string();
  cfg.ckpt_dir = (dir_ / "ckpt").string();
  cfg.ckpt_every = 2;
  Trainer t(m, cfg, train_set(), val_set());
  const History h = t.run();
  ASSERT_EQ(h.records.size(), 5u);
  EXPECT_FALSE(h.records[0].val_loss);
  EXPECT_TRUE(h.records[1].val_loss);
  EXPECT_TRUE(h.records[4].val_loss);  // always at the end
  std::ifstream in(cfg.history_csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,train_loss,val_loss,val_acc");
  EXPECT_TRUE(fs::exists(dir_ / "ckpt" / "step_000002.scpf"));
  EXPECT_TRUE(fs::exists(dir_ / "ckpt" / "step_000004.scpf"));
  EXPECT_TRUE(fs::exists(dir_ / "ckpt" / "final.scpf"));
}

TEST_F(TrainerTest, NonFiniteLossAbortsWithDiagnostics) {
  ScopeformerModel m(tiny_model_config(1));
  auto params = m.parameters();
  params.back().value.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer t(m, config(3), train_set());
  try {
    t.run();
    FAIL();
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.step, 0u);
    EXPECT_EQ(e.lr, 3e-3);
    EXPECT_NE(std::string(e.what()).find("grad_norm"), std::string::npos);
  }
}

TEST_F(TrainerTest, FrozenBackboneWeightsDoNotMove) {
  auto cfg_model = tiny_model_config(1);
  cfg_model.ensemble.backbones[0].trainable = false;
  ScopeformerModel m(cfg_model);
  std::vector<std::vector<double>> before;
  for (const auto& p : m.parameters()) before.push_back(p.value.to_vector());
  Trainer t(m, config(3), train_set());
  t.run();
  const auto after = m.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) {
    if (after[i].name.rfind("backbone0/", 0) == 0) {
      EXPECT_EQ(after[i].value.to_vector(), before[i]) << after[i].name;
    } else if (after[i].name.rfind("vit/", 0) == 0) {
      EXPECT_NE(after[i].value.to_vector(), before[i]) << after[i].name;
    }
  }
}

}  // namespace
}  // namespace scopeformer
