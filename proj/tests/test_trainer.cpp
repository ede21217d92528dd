#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "drex/checkpoint.hpp"
#include "drex/synthetic.hpp"
#include "drex/trainer.hpp"

using namespace drex;
namespace fs = std::filesystem;

namespace {

const FeatureDims kDims{16, {4, 8, 8, 12}};

FusionConfig small_model(std::uint64_t seed = 1) {
  FusionConfig c;
  c.dino_dim = kDims.dino_dim;
  c.resnet_dim = kDims.resnet_dim();
  c.proj_dim = 16;
  c.attn_hidden = 8;
  c.head_dims = {16, 8};
  c.seed = seed;
  return c;
}

TrainConfig small_train(std::size_t epochs = 3) {
  TrainConfig t;
  t.epochs = epochs;
  t.seed = 5;
  return t;
}

DatasetManifest data(std::size_t n, std::uint64_t split, synthetic::Target target = synthetic::Target::both) {
  synthetic::Spec s;
  s.dims = kDims;
  s.latent_dim = 4;
  s.target = target;
  s.seed = 42;
  return synthetic::generate(s, n, split, split == 0 ? "train" : "test");
}

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "drex_trainer_test";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Trainer, SameSeedsGiveIdenticalCheckpointsAndReports) {
  const auto tr = data(100, 0), va = data(40, 1);
  const auto a = train(small_model(), small_train(), tr, va);
  const auto b = train(small_model(), small_train(), tr, va);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  EXPECT_EQ(format_train_report(a.report), format_train_report(b.report));
  auto other = small_train();
  other.seed = 6;
  const auto c = train(small_model(), other, tr, va);
  EXPECT_NE(encode_checkpoint(a.checkpoint), encode_checkpoint(c.checkpoint));
}

TEST(Trainer, StepCountKeepsPartialBatchAndTraceMatchesSchedule) {
  const auto tr = data(50, 0);  // 50 / 16 -> 4 batches, the last one of 2
  auto cfg = small_train(3);
  const auto res = train(small_model(), cfg, tr, {});
  EXPECT_EQ(res.report.steps, 12u);
  const auto sched = cfg.schedule(tr.size());
  EXPECT_EQ(sched.total_steps, 12u);
  ASSERT_EQ(res.report.lr_trace.size(), 12u);
  for (std::size_t t = 0; t < 12; ++t) EXPECT_EQ(res.report.lr_trace[t], nn::onecycle_lr(sched, t)) << t;
  EXPECT_EQ(res.report.epoch_loss.size(), 3u);
  EXPECT_FALSE(res.report.validation.has_value());
}

TEST(Trainer, ZeroEmaDecayTracksWeights) {
  auto cfg = small_train(1);
  cfg.ema_decay = 0.0;
  std::size_t seen = 0;
  train(small_model(), cfg, data(40, 0), {}, [&](const StepInfo& s) {
    ++seen;
    for (std::size_t k = 0; k < s.model.params().size(); ++k)
      ASSERT_EQ(s.ema.shadow()[k].value, s.model.params()[k].value) << s.model.params()[k].name;
  });
  EXPECT_EQ(seen, 3u);
}

TEST(Trainer, CheckpointHoldsEmaShadow) {
  const auto res = train(small_model(), small_train(1), data(40, 0), {});
  ASSERT_TRUE(res.checkpoint.ema_shadow.has_value());
  const auto raw = res.checkpoint.eval_model(false);
  const auto ema = res.checkpoint.eval_model(true);
  EXPECT_NE(raw.params()[0].value, ema.params()[0].value);
}

TEST(Trainer, FixedBatchLossDecreasesWithDefaultModel) {
  synthetic::Spec s;
  s.seed = 3;
  const auto batch = to_batch(synthetic::generate(s, 16, 0));
  Matrix<float> target(16, 1);
  for (std::size_t i = 0; i < 16; ++i) target(i, 0) = batch.scores[i];
  DrexModel<float> model(FusionConfig{});
  nn::AdamW<float> opt(model.params(), {});
  const auto sched = TrainConfig{}.schedule(2000);  // default regime: 1250 steps
  double prev = 1e9;
  for (int step = 0; step < 5; ++step) {
    model.params().zero_grad();
    nn::Tape<float> tape;
    auto out = model.forward(tape, tape.input(batch.dino), tape.input(batch.resnet), false, nullptr, ZeroBranch::none, true);
    auto loss = nn::huber_loss(tape, out.prediction, tape.input(target), 1.0f);
    const double l = tape.value(loss)(0, 0);
    EXPECT_LT(l, prev) << "step " << step;
    prev = l;
    tape.backward(loss);
    opt.step(model.params(), nn::onecycle_lr(sched, static_cast<std::size_t>(step)));
  }
}

TEST(Trainer, ConstantTargetsCollapsePredictions) {
  const auto tr = data(2000, 0, synthetic::Target::constant);
  const auto va = data(200, 1, synthetic::Target::constant);
  const auto res = train(small_model(), TrainConfig{}, tr, va);
  ASSERT_TRUE(res.report.validation.has_value());
  EXPECT_TRUE(std::isnan(res.report.validation->pearson_r));
  // The 0.999 average spans most of the 1250 steps, so it trails the raw weights.
  EXPECT_LT(res.report.validation->mae, 0.05);
  EXPECT_LT(evaluate(res.checkpoint, va, false).mae, 0.01);
}

TEST(Trainer, RejectsMissingScoresEmptySetsAndWrongDims) {
  auto tr = data(20, 0);
  tr.records[3].score.reset();
  try {
    train(small_model(), small_train(), tr, {});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find(tr.records[3].id), std::string::npos);
  }
  EXPECT_THROW(train(small_model(), small_train(), DatasetManifest{}, {}), std::invalid_argument);
  EXPECT_THROW(train(FusionConfig{}, small_train(), data(20, 0), {}), FeatureDimensionError);
  auto bad = small_train();
  bad.max_lr = 0;
  EXPECT_THROW(train(small_model(), bad, data(20, 0), {}), std::invalid_argument);
}

TEST(Trainer, NonFiniteLossNamesBatch) {
  auto tr = data(40, 0);
  tr.records[0].dino[0] = std::numeric_limits<float>::infinity();
  try {
    train(small_model(), small_train(1), tr, {});
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
  }
}

TEST(Trainer, TrainingLeavesFeaturesUntouched) {
  const auto tr = data(40, 0);
  const auto copy = tr;
  train(small_model(), small_train(1), tr, {});
  EXPECT_TRUE(same_contents(tr, copy));
}

TEST(Trainer, TrainedBeatsUntrained) {
  const auto tr = data(300, 0);
  const auto res = train(small_model(), small_train(10), tr, {});
  const Checkpoint untrained{DrexModel<float>(small_model())};
  EXPECT_GT(evaluate(res.checkpoint, tr).pearson_r, evaluate(untrained, tr).pearson_r + 0.2);
}

TEST(Evaluate, MatchesExternalRescoring) {
  const auto res = train(small_model(), small_train(2), data(100, 0), {});
  const auto va = data(60, 1);
  const auto m = evaluate(res.checkpoint, va);
  const auto preds = predict_manifest(res.checkpoint.eval_model(), va);
  // Round-trip the predictions through text, as an external tool would.
  std::vector<double> reread;
  for (double p : preds.score) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", p);
    reread.push_back(std::strtod(buf, nullptr));
  }
  const auto ext = metrics::evaluate(va.scores(), reread);
  EXPECT_NEAR(m.pearson_r, ext.pearson_r, 1e-10);
  EXPECT_NEAR(m.spearman_rho, ext.spearman_rho, 1e-10);
  EXPECT_NEAR(m.rmse, ext.rmse, 1e-10);
  EXPECT_NEAR(m.mae, ext.mae, 1e-10);
  const auto raw = evaluate(res.checkpoint, va, false);
  EXPECT_NE(raw.pearson_r, m.pearson_r);
  EXPECT_THROW(evaluate(res.checkpoint, data(0, 1)), std::invalid_argument);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto mc = small_model();
  auto tc = small_train(1);
  tc.eval_with_ema = false;
  const auto res = train(mc, tc, data(40, 0), {});
  const auto p1 = temp_path("a.drxc"), p2 = temp_path("b.drxc");
  save_checkpoint(res.checkpoint, p1);
  const auto loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);
  EXPECT_EQ(slurp(p1), slurp(p2));
  EXPECT_EQ(loaded.model_config, mc);
  EXPECT_FALSE(loaded.train_config.eval_with_ema);
  EXPECT_EQ(loaded.train_config.epochs, 1u);
  for (std::size_t k = 0; k < loaded.model.params().size(); ++k) {
    EXPECT_EQ(loaded.model.params()[k].value, res.checkpoint.model.params()[k].value);
    EXPECT_EQ((*loaded.ema_shadow)[k].value, (*res.checkpoint.ema_shadow)[k].value);
  }
}

TEST(Checkpoint, LoadThenEvaluateReproducesMetrics) {
  const auto res = train(small_model(), small_train(2), data(80, 0), {});
  const auto va = data(50, 1);
  const auto p = temp_path("eval.drxc");
  save_checkpoint(res.checkpoint, p);
  const auto before = evaluate(res.checkpoint, va);
  const auto after = evaluate(load_checkpoint(p), va);
  EXPECT_EQ(before.pearson_r, after.pearson_r);
  EXPECT_EQ(before.rmse, after.rmse);
}

TEST(Checkpoint, WrongVersionAndCorruption) {
  const Checkpoint ck{DrexModel<float>(small_model())};
  auto bytes = encode_checkpoint(ck);
  auto versioned = bytes;
  versioned[4] = 9;
  EXPECT_THROW(decode_checkpoint(versioned), CheckpointVersionError);
  auto corrupt = bytes;
  corrupt[corrupt.size() / 2] ^= 0x5A;
  EXPECT_THROW(decode_checkpoint(corrupt), CheckpointCorruptError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), CheckpointError);
  auto magic = bytes;
  magic[0] = 'Z';
  EXPECT_THROW(decode_checkpoint(magic), CheckpointError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.drxc")), CheckpointError);
}
