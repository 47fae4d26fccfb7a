#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "gfca/trainer.hpp"

using namespace gfca;

namespace {

struct Small {
  SyntheticDomainPair pair;
  FewShotProtocol protocol;
};

Small small_problem(std::uint64_t seed = 1) {
  SyntheticDomainConfig sc;
  sc.class_count = 4;
  sc.feature_dim = 6;
  sc.mean_scale = 1.0;
  sc.mean_offset = 2.0;
  sc.noise_std = 0.5;
  sc.rotation_degrees = {20};
  sc.translation = {0.5, 0.5};
  sc.samples_per_class = 30;
  sc.target_samples_per_class = 20;
  sc.seed = seed;
  return {synthesize_domain_pair(sc), FewShotProtocol::make(4, {3}, 3, seed)};
}

TrainConfig small_config(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.hidden_dims = {8, 8};
  c.batch_source = c.batch_target = c.batch_fake = 16;
  c.pretrain_steps = 10;
  c.main_steps = 30;
  c.log_every = 5;
  c.eval_synthetic_per_class = 10;
  return c;
}

TrainData pack(const Small& p, const TrainConfig& cfg) {
  TrainData d;
  prepare_data(cfg, p.pair.source, p.pair.target, p.protocol, d);
  return d;
}

}  // namespace

TEST(TrainConfig, ModeContract) {
  TrainConfig c;
  c.lambda = 0.7;
  c.gamma = 0.3;
  c.mode = TrainMode::kGfca;
  EXPECT_EQ(c.resolved().gamma, 0.3);
  c.mode = TrainMode::kGfcaWoFc;
  EXPECT_EQ(c.resolved().gamma, 0.0);
  EXPECT_EQ(c.resolved().lambda, 0.7);
  c.mode = TrainMode::kMmdOnly;
  EXPECT_EQ(c.resolved().gamma, 0.0);
  c.mode = TrainMode::kSourceOnly;
  EXPECT_EQ(c.resolved().lambda, 0.0);
  EXPECT_EQ(c.resolved().gamma, 0.0);
  for (const char* m : {"gfca", "gfca-2stage", "gfca-wofc", "mmd-only", "source-only"}) EXPECT_EQ(mode_name(parse_mode(m)), m);
}

TEST(TrainConfig, ValidationNamesTheField) {
  auto field_of = [](TrainConfig c) {
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("ok");
  };
  TrainConfig c;
  EXPECT_EQ(field_of(c), "ok");
  c.lambda = -1;
  EXPECT_EQ(field_of(c), "lambda");
  c = {};
  c.hidden_dims = {};
  EXPECT_EQ(field_of(c), "hidden_dims");
  c = {};
  c.lr_g = 0;
  EXPECT_EQ(field_of(c), "lr_g");
  c = {};
  c.fake_label_policy = "most";
  EXPECT_EQ(field_of(c), "fake_label_policy");
  try {
    parse_mode("gfca-fast");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "mode");
  }
}

TEST(Trainer, InitState) {
  const auto p = small_problem();
  const auto cfg = small_config(TrainMode::kGfca);
  const auto data = pack(p, cfg);
  const auto s = init_state(cfg, data);
  EXPECT_NEAR(s.beta, data.source_train.features.rowwise().norm().mean(), 1e-12);
  EXPECT_EQ(s.gen.w_y, class_centroids(data.source_train.features, *data.source_train.labels, 4));
  EXPECT_EQ(s.gen.noise_dim(), 6);
  EXPECT_EQ(s.enc.output_dim(), 8);
  EXPECT_EQ(s.cls.w_c.rows(), 4);

  const auto mmd = init_state(small_config(TrainMode::kMmdOnly), data);
  EXPECT_EQ(mmd.gen.w_z.size(), 0);
}

TEST(Trainer, StepComputesTheModeTerms) {
  const auto p = small_problem();
  for (auto mode : {TrainMode::kGfca, TrainMode::kMmdOnly, TrainMode::kSourceOnly}) {
    const auto cfg = small_config(mode).resolved();
    const auto data = pack(p, cfg);
    auto s = init_state(cfg, data);
    const auto gen_before = s.gen.w_y;
    const auto d_before = s.disc.w_d;
    const auto out = train_step(s, cfg, data, Rng(9));
    EXPECT_EQ(out.phase, "main");
    EXPECT_EQ(s.step, 1);
    EXPECT_TRUE(std::isfinite(out.l_sr));
    EXPECT_EQ(std::isfinite(out.l_sf), mode == TrainMode::kGfca);
    EXPECT_EQ(std::isfinite(out.l_e), mode != TrainMode::kSourceOnly);
    EXPECT_EQ(std::isfinite(out.l_g), mode == TrainMode::kGfca);
    EXPECT_EQ(std::isfinite(out.l_d), mode == TrainMode::kGfca);
    EXPECT_EQ(s.bank.has_value(), mode != TrainMode::kSourceOnly);
    if (mode == TrainMode::kGfca) {
      // D starts at zero, so G only receives a gradient from the second step on
      EXPECT_EQ(s.gen.w_y, gen_before);
      train_step(s, cfg, data, Rng(10));
      EXPECT_NE(s.gen.w_y, gen_before);
      EXPECT_NE(s.disc.w_d, d_before);
      EXPECT_NEAR(out.l_ec, out.l_c + cfg.lambda * out.l_e + cfg.gamma * out.l_fc, 1e-12);
    }
  }
}

TEST(Trainer, TwoStageFreezesGeneratorAfterPool) {
  const auto p = small_problem();
  auto cfg = small_config(TrainMode::kGfca2Stage);
  cfg.main_steps = 5;
  const auto data = pack(p, cfg);
  auto s = init_state(cfg, data);
  train(s, cfg, data);
  ASSERT_TRUE(s.pool.has_value());
  EXPECT_EQ(s.gan_step, cfg.pretrain_steps + cfg.main_steps);
  EXPECT_EQ(s.pool->features.rows(), 4 * 30);  // largest training class, every class
  const auto w = s.gen.w_y;
  const auto out = train_step(s, cfg, data, Rng(3));
  EXPECT_EQ(s.gen.w_y, w);
  EXPECT_TRUE(std::isfinite(out.l_sf));
  EXPECT_FALSE(std::isfinite(out.l_g));
}

TEST(Trainer, DeterministicReports) {
  const auto p = small_problem();
  const auto cfg = small_config(TrainMode::kGfca);
  const auto a = run_experiment(cfg, p.pair.source, p.pair.target, p.protocol);
  const auto b = run_experiment(cfg, p.pair.source, p.pair.target, p.protocol);
  EXPECT_EQ(report_json_text(a.report), report_json_text(b.report));
  auto other = cfg;
  other.seed = 1;
  const auto c = run_experiment(other, p.pair.source, p.pair.target, p.protocol);
  EXPECT_NE(report_json_text(a.report), report_json_text(c.report));
}

TEST(Trainer, ObserverSeesEveryPhase) {
  const auto p = small_problem();
  const auto cfg = small_config(TrainMode::kGfca);
  std::vector<std::string> phases;
  run_experiment(cfg, p.pair.source, p.pair.target, p.protocol, [&](const StepLosses& s) { phases.push_back(s.phase); });
  EXPECT_EQ(std::count(phases.begin(), phases.end(), "pretrain"), 2);
  EXPECT_EQ(std::count(phases.begin(), phases.end(), "main"), 6);
}

TEST(Trainer, AbortsOnNonFiniteLoss) {
  const auto p = small_problem();
  auto cfg = small_config(TrainMode::kMmdOnly);
  cfg.lr_ec = 1e300;
  try {
    run_experiment(cfg, p.pair.source, p.pair.target, p.protocol);
    FAIL() << "expected abort";
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(e.losses().phase, "main");
    EXPECT_GE(e.losses().step, 1);
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(Trainer, CheckpointRoundTrip) {
  const auto p = small_problem();
  const auto cfg = small_config(TrainMode::kGfca);
  const auto res = run_experiment(cfg, p.pair.source, p.pair.target, p.protocol);
  const auto path = std::filesystem::temp_directory_path() / "gfca_test_ckpt.bin";
  save_checkpoint(res.state.checkpoint(), path);
  const TrainState back = state_from_checkpoint(load_checkpoint(path));
  std::filesystem::remove(path);
  EXPECT_EQ(predict(back.enc, back.cls, p.pair.target.features), predict(res.state.enc, res.state.cls, p.pair.target.features));
  EXPECT_EQ(back.gen.w_z, res.state.gen.w_z);
  EXPECT_EQ(back.beta, res.state.beta);
  const auto report = evaluate_state(back, cfg, res.split, p.pair.target, p.protocol, res.synthetic);
  auto expected = res.report;
  expected.max_abs_loss = 0.0;  // the loss history is not checkpointed
  EXPECT_EQ(report_json_text(report), report_json_text(expected));
}

TEST(Trainer, LossHistoryIsBounded) {
  LossHistory h(3);
  for (int i = 0; i < 5; ++i) {
    StepLosses s;
    s.step = i;
    s.l_c = i == 1 ? -9.0 : 1.0;
    h.push(s);
  }
  EXPECT_EQ(h.items().size(), 3u);
  EXPECT_EQ(h.items().front().step, 2);
  EXPECT_EQ(h.max_abs(), 9.0);
}

TEST(Trainer, RejectsMismatchedDomains) {
  const auto p = small_problem();
  DomainDataset narrow = p.pair.target;
  narrow.features = narrow.features.leftCols(5).eval();
  EXPECT_THROW(run_experiment(small_config(TrainMode::kGfca), p.pair.source, narrow, p.protocol), DataError);
}
