// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "../support/grad_suite.hpp"
#include "acwm/model/checkpoint.hpp"
#include "acwm/model/world_model.hpp"

namespace acwm::model {
namespace {

namespace fs = std::filesystem;
using TD = Tensor<double>;

ModelConfig small_config(Conditioning mode = Conditioning::adaln) {
  ModelConfig c;
  c.hidden = 16;
  c.layers = 2;
  c.heads = 2;
  c.patch = 2;
  c.latent_rows = 4;
  c.latent_cols = 4;
  c.latent_channels = 6;
  c.latent_steps = 3;
  c.temporal_factor = 4;
  c.action_dim = 2;
  c.frequency_dim = 16;
  c.conditioning = mode;
  c.seed = 17;
  return c;
}

void randomize(WorldModel<double>& m, std::uint64_t seed, const std::string& keep_prefix = "") {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& e : m.parameters().entries) {
    if (!keep_prefix.empty() && e.name.find(keep_prefix) != std::string::npos) continue;
    for (auto& v : e.values) v = n(rng);
  }
}

TD latent_for(const ModelConfig& c, std::mt19937_64& rng, std::int64_t batch = 1) {
  return testing::random_tensor({batch, c.latent_steps, c.latent_rows, c.latent_cols, c.latent_channels}, rng);
}

TD actions_for(const ModelConfig& c, std::mt19937_64& rng, std::int64_t batch = 1) {
  return testing::random_tensor({batch, c.action_frames(), c.action_dim}, rng);
}

std::vector<int> levels_for(const ModelConfig& c, std::int64_t batch = 1) {
  std::vector<int> l(static_cast<std::size_t>(batch * c.latent_steps));
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = i % static_cast<std::size_t>(c.latent_steps) == 0 ? 0 : 100 + 37 * static_cast<int>(i);
  return l;
}

std::vector<double> vals(const TD& t) { return {t.values().begin(), t.values().end()}; }

double max_abs_diff(const TD& a, const TD& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.values().size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

TEST(Config, PresetsAndValidation) {
  const auto tiny = ModelConfig::tiny();
  EXPECT_EQ(tiny.hidden, 64);
  EXPECT_EQ(tiny.layers, 2);
  EXPECT_EQ(tiny.heads, 4);
  const auto s = ModelConfig::preset("DiT-S");
  EXPECT_EQ(s.hidden, 768);
  EXPECT_EQ(s.layers, 10);
  EXPECT_EQ(s.heads, 12);
  EXPECT_THROW(ModelConfig::preset("huge"), DomainError);
  auto bad = tiny;
  bad.heads = 3;
  EXPECT_THROW(bad.validate(), DomainError);
  bad = tiny;
  bad.hidden = 24;
  bad.heads = 4;  // head dim 6 cannot split into two even RoPE axes
  EXPECT_THROW(bad.validate(), DomainError);
  EXPECT_EQ(parse_conditioning("cross"), Conditioning::cross_attention);
}

TEST(Config, DitSParameterCountInRange) {
  const auto n = parameter_count(ModelConfig::dit_s());
  EXPECT_GE(n, 130'000'000u);
  EXPECT_LE(n, 270'000'000u);
  const auto tiny = ModelConfig::tiny();
  EXPECT_EQ(parameter_count(tiny), WorldModel<float>(tiny).parameter_count());
}

TEST(Init, AlphaRowsHeadAndCrossOutStartAtZero) {
  const WorldModel<double> m(small_config(Conditioning::cross_attention));
  const auto& ps = m.parameters();
  const int d = 16;
  for (int b = 0; b < 2; ++b) {
    const auto& w = ps.at("blocks." + std::to_string(b) + ".mod.w");
    for (int r = 0; r < d; ++r)
      for (int s = 0; s < 3; ++s)
        for (int j = 0; j < d; ++j) EXPECT_EQ(w.values[static_cast<std::size_t>(r) * 9 * d + (3 * s + 2) * d + j], 0.0);
    for (double v : ps.at("blocks." + std::to_string(b) + ".cross.out.w").values) EXPECT_EQ(v, 0.0);
  }
  for (double v : ps.at("head.w").values) EXPECT_EQ(v, 0.0);
  // Same seed, same parameters.
  const WorldModel<double> again(small_config(Conditioning::cross_attention));
  EXPECT_EQ(again.parameters().at("blocks.1.mlp.fc1.w").values, ps.at("blocks.1.mlp.fc1.w").values);
}

TEST(Init, FreshModelPredictsZero) {
  for (auto mode : {Conditioning::adaln, Conditioning::cross_attention}) {
    const auto cfg = small_config(mode);
    const WorldModel<double> m(cfg);
    std::mt19937_64 rng(1);
    const auto y = m.predict(m.bind(false), latent_for(cfg, rng, 2), levels_for(cfg, 2), actions_for(cfg, rng, 2));
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Init, FreshBlockIsIdentity) {
  const auto cfg = small_config();
  const WorldModel<double> m(cfg);
  const auto p = m.bind(false);
  std::mt19937_64 rng(2);
  const auto x = testing::random_tensor({1, 3, 4, 16}, rng);
  const auto c = testing::random_tensor({1, 3, 16}, rng);
  const auto mod = m.adaln_modulation(p, c, 0);
  for (const auto& a : mod.alpha)
    for (double v : a.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(vals(m.block_forward(p, x, c, 0, TD(), 2, 2)), vals(x));
}

TEST(Modulation, ZeroConditioningGivesZero) {
  const auto cfg = small_config();
  WorldModel<double> m(cfg);
  randomize(m, 3);
  for (auto& v : m.parameters().at("blocks.0.mod.b").values) v = 0.0;
  const auto mod = m.adaln_modulation(m.bind(false), TD::zeros({2, 3, 16}), 0);
  for (int s = 0; s < 3; ++s)
    for (const auto* t : {&mod.gamma[s], &mod.beta[s], &mod.alpha[s]})
      for (double v : t->values()) EXPECT_EQ(v, 0.0);
}

TEST(Modulation, DifferentActionsGiveDifferentPerStepGamma) {
  const auto cfg = small_config();
  WorldModel<double> m(cfg);
  randomize(m, 4);
  const auto p = m.bind(false);
  std::mt19937_64 rng(5);
  const std::vector<int> same_level(3, 250);
  const auto c = m.conditioning(p, same_level, actions_for(cfg, rng));
  const auto g = m.adaln_modulation(p, c, 1).gamma[0];
  double diff = 0;
  for (int j = 0; j < 16; ++j) diff += std::abs(g.values()[16 + j] - g.values()[32 + j]);
  EXPECT_GT(diff, 1e-6);
}

TEST(ActionEmbedder, LengthLaw) {
  for (auto [tl, L] : {std::pair{37, 145}, std::pair{3, 9}}) {
    auto cfg = small_config();
    cfg.latent_steps = tl;
    WorldModel<double> m(cfg);
    randomize(m, 6);
    const auto p = m.bind(false);
    std::mt19937_64 rng(7);
    const auto a = testing::random_tensor({2, L, 2}, rng);
    const auto e = m.embed_actions(p, a);
    EXPECT_EQ(e.shape(), (Shape{2, tl, 16}));
    EXPECT_EQ(vals(m.embed_actions(p, a)), vals(e));
  }
}

TEST(ActionEmbedder, WrongLengthNamesExpected) {
  const WorldModel<double> m(small_config());
  try {
    m.embed_actions(m.bind(false), TD::zeros({1, 8, 2}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("9"), std::string::npos) << e.what();
  }
}

TEST(Timestep, SinusoidalFeatures) {
  const auto f0 = timestep_features(0, 16);
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(f0[i], 0.0);
    EXPECT_EQ(f0[8 + i], 1.0);
  }
  // w_0 = 1: the first pair is (sin l, cos l).
  const auto f5 = timestep_features(5, 16);
  EXPECT_DOUBLE_EQ(f5[0], std::sin(5.0));
  EXPECT_DOUBLE_EQ(f5[8], std::cos(5.0));
  EXPECT_NEAR(f5[1], std::sin(5.0 * std::exp(-std::log(10000.0) / 8)), 1e-15);
}

TEST(Timestep, EmbeddingsDistinctAndBounded) {
  const auto cfg = small_config();
  WorldModel<double> m(cfg);
  randomize(m, 8);
  const auto p = m.bind(false);
  const std::vector<int> a{1, 1, 1}, b{2, 2, 2};
  const auto ea = m.embed_timestep(p, a, 1), eb = m.embed_timestep(p, b, 1);
  EXPECT_EQ(ea.shape(), (Shape{1, 3, 16}));
  EXPECT_GT(max_abs_diff(ea, eb), 1e-9);
  const std::vector<int> high{0, 1, 1000}, low{-1, 0, 0};
  EXPECT_THROW(m.embed_timestep(p, high, 1), DomainError);
  EXPECT_THROW(m.embed_timestep(p, low, 1), DomainError);
}

TEST(Forward, ShapeLawAcrossConfigs) {
  for (int tl : {1, 2, 4})
    for (int f : {1, 2})
      for (int r : {1, 4})
        for (int patch : {1, 2}) {
          ModelConfig cfg = small_config();
          cfg.latent_steps = tl;
          cfg.temporal_factor = r;
          cfg.latent_rows = 8 / f;
          cfg.latent_cols = 4;
          cfg.latent_channels = 3 * f * f * r;
          cfg.patch = patch;
          cfg.layers = 1;
          WorldModel<double> m(cfg);
          randomize(m, 9);
          std::mt19937_64 rng(10);
          const auto z = latent_for(cfg, rng);
          const auto y = m.predict(m.bind(false), z, levels_for(cfg), actions_for(cfg, rng));
          EXPECT_EQ(y.shape(), z.shape()) << tl << " " << f << " " << r << " " << patch;
        }
  EXPECT_NO_THROW(WorldModel<float>(ModelConfig::tiny()));
}

TEST(Forward, SingleStepTemporalAttentionIgnoresScores) {
  // With one temporal token the softmax weight is 1 whatever q and k are.
  auto cfg = small_config();
  cfg.latent_steps = 1;
  WorldModel<double> m(cfg);
  randomize(m, 11);
  std::mt19937_64 rng(12);
  const auto z = latent_for(cfg, rng);
  const auto a = actions_for(cfg, rng);
  const std::vector<int> lv{300};
  const auto before = m.predict(m.bind(false), z, lv, a);
  for (int b = 0; b < cfg.layers; ++b) {
    auto& w = m.parameters().at("blocks." + std::to_string(b) + ".temporal.qkv.w");
    auto& bias = m.parameters().at("blocks." + std::to_string(b) + ".temporal.qkv.b");
    for (int r = 0; r < 16; ++r)
      for (int j = 0; j < 32; ++j) w.values[static_cast<std::size_t>(r) * 48 + j] = 7.0 * (r - j);
    for (int j = 0; j < 32; ++j) bias.values[j] = -3.0;
  }
  const auto after = m.predict(m.bind(false), z, lv, a);
  EXPECT_LT(max_abs_diff(before, after), 1e-12);
}

TEST(Forward, ShapeErrors) {
  const auto cfg = small_config();
  const WorldModel<double> m(cfg);
  const auto p = m.bind(false);
  std::mt19937_64 rng(13);
  EXPECT_THROW(m.predict(p, TD::zeros({1, 3, 4, 4, 5}), levels_for(cfg), actions_for(cfg, rng)), ShapeError);
  EXPECT_THROW(m.predict(p, latent_for(cfg, rng), std::vector<int>{0, 1}, actions_for(cfg, rng)), ShapeError);
  EXPECT_THROW(m.dit_forward(p, latent_for(cfg, rng), TD::zeros({1, 2, 16})), ShapeError);
}

TEST(CrossAttention, ZeroOutputProjectionMatchesTrunkWithoutCross) {
  const auto cfg = small_config(Conditioning::cross_attention);
  WorldModel<double> m(cfg);
  randomize(m, 14, "cross.out");
  const auto p = m.bind(false);
  std::mt19937_64 rng(15);
  const auto z = latent_for(cfg, rng);
  const auto c = testing::random_tensor({1, 3, 16}, rng);
  const auto tokens = testing::random_tensor({1, 3, 16}, rng);
  EXPECT_EQ(vals(m.cross_attn_forward(p, z, c, tokens)), vals(m.dit_forward(p, z, c)));
}

TEST(CrossAttention, TokenCountAndModeChecked) {
  const auto cfg = small_config(Conditioning::cross_attention);
  const WorldModel<double> m(cfg);
  const auto p = m.bind(false);
  std::mt19937_64 rng(16);
  const auto z = latent_for(cfg, rng);
  const auto c = testing::random_tensor({1, 3, 16}, rng);
  EXPECT_THROW(m.cross_attn_forward(p, z, c, testing::random_tensor({1, 2, 16}, rng)), ShapeError);
  const WorldModel<double> adaln(small_config());
  EXPECT_THROW(adaln.cross_attn_forward(adaln.bind(false), z, c, testing::random_tensor({1, 3, 16}, rng)),
               DomainError);
}

TEST(CrossAttention, PermutingTokensChangesPrediction) {
  const auto cfg = small_config(Conditioning::cross_attention);
  WorldModel<double> m(cfg);
  randomize(m, 17);
  const auto p = m.bind(false);
  std::mt19937_64 rng(18);
  const auto z = latent_for(cfg, rng);
  const auto c = testing::random_tensor({1, 3, 16}, rng);
  const auto tokens = testing::random_tensor({1, 3, 16}, rng);
  auto swapped = vals(tokens);
  std::swap_ranges(swapped.begin() + 16, swapped.begin() + 32, swapped.begin() + 32);
  const auto y0 = m.cross_attn_forward(p, z, c, tokens);
  const auto y1 = m.cross_attn_forward(p, z, c, TD::constant({1, 3, 16}, swapped));
  EXPECT_GT(max_abs_diff(y0, y1), 1e-6);
}

TEST(Forward, ActionsInfluencePredictionByFiniteDifference) {
  for (auto mode : {Conditioning::adaln, Conditioning::cross_attention}) {
    const auto cfg = small_config(mode);
    WorldModel<double> m(cfg);
    randomize(m, 19);
    const auto p = m.bind(false);
    std::mt19937_64 rng(20);
    const auto z = latent_for(cfg, rng);
    auto a = actions_for(cfg, rng);
    const auto y0 = m.predict(p, z, levels_for(cfg), a);
    auto bumped = vals(a);
    bumped[5 * 2] += 1e-4;
    const auto y1 = m.predict(p, z, levels_for(cfg), TD::constant(a.shape(), bumped));
    EXPECT_GT(max_abs_diff(y0, y1) / 1e-4, 1e-4) << to_string(mode);
  }
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const auto dir = fs::temp_directory_path() / ("acwm_ckpt_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto cfg = small_config(Conditioning::cross_attention);
  WorldModel<float> m(cfg);
  CheckpointMeta meta;
  meta.env = "push_rope";
  meta.step = 42;
  meta.final_loss = 0.125;
  meta.normalizer.mean = {0.1, 0.2, 0.3};
  save_checkpoint(dir / "a.ckpt", cfg, m.parameters(), meta);
  save_checkpoint(dir / "b.ckpt", cfg, m.parameters(), meta);
  const auto ck = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(ck.config, cfg);
  EXPECT_EQ(ck.meta.env, "push_rope");
  EXPECT_EQ(ck.meta.step, 42);
  EXPECT_EQ(ck.meta.final_loss, 0.125);
  EXPECT_EQ(ck.meta.normalizer.mean, meta.normalizer.mean);
  ASSERT_EQ(ck.parameters.entries.size(), m.parameters().entries.size());
  for (std::size_t i = 0; i < ck.parameters.entries.size(); ++i) {
    EXPECT_EQ(ck.parameters.entries[i].name, m.parameters().entries[i].name);
    EXPECT_EQ(ck.parameters.entries[i].shape, m.parameters().entries[i].shape);
    EXPECT_EQ(ck.parameters.entries[i].values, m.parameters().entries[i].values);
  }
  EXPECT_EQ(ck.id, load_checkpoint(dir / "b.ckpt").id);
  EXPECT_EQ(config_from_json(config_to_json(cfg)), cfg);

  std::string bytes;
  {
    std::ifstream in(dir / "a.ckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(dir / "c.ckpt", std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  write(bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(load_checkpoint(dir / "c.ckpt"), IoError);
  auto bad = bytes;
  bad[0] = 'Z';
  write(bad);
  EXPECT_THROW(load_checkpoint(dir / "c.ckpt"), IoError);
  bad = bytes;
  bad[bytes.size() - 2] ^= 0x40;
  write(bad);
  EXPECT_THROW(load_checkpoint(dir / "c.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
  fs::remove_all(dir);
}

TEST(Parameters, AdoptRejectsWrongLayout) {
  const auto cfg = small_config();
  WorldModel<double> m(cfg);
  auto ps = m.parameters();
  ps.entries.pop_back();
  EXPECT_THROW(WorldModel<double>(cfg, ps), ShapeError);
}

}  // namespace
}  // namespace acwm::model
