// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "../support/grad_suite.hpp"
#include "acwm/flow/flow.hpp"
#include "acwm/flow/trainer.hpp"
#include "json.hpp"

namespace acwm::flow {
namespace {

using TD = Tensor<double>;

TEST(Schedule, PathCoefficientsAndDefaults) {
  const FlowSchedule s;
  EXPECT_EQ(s.levels, 1000);
  EXPECT_EQ(s.shift, 5.0);
  EXPECT_EQ(s.inference_steps, 50);
  EXPECT_EQ(FlowSchedule::alpha(0), 1.0);
  EXPECT_EQ(FlowSchedule::beta(0), 0.0);
  EXPECT_EQ(FlowSchedule::alpha(1), 0.0);
  EXPECT_EQ(FlowSchedule::beta(1), 1.0);
  EXPECT_EQ(s.level_of(0.0), 999);
  EXPECT_EQ(s.level_of(1.0), 0);
  FlowSchedule bad;
  bad.shift = 0;
  EXPECT_THROW(bad.validate(), DomainError);
}

TEST(ShiftTime, Examples) {
  EXPECT_EQ(shift_time(0.0, 5.0), 0.0);
  EXPECT_EQ(shift_time(1.0, 5.0), 1.0);
  EXPECT_NEAR(shift_time(0.5, 5.0), 2.5 / 3.0, 1e-15);
  for (double u : {0.0, 0.1, 0.37, 0.9, 1.0}) EXPECT_DOUBLE_EQ(shift_time(u, 1.0), u);
  EXPECT_THROW(shift_time(-0.01, 5.0), DomainError);
  EXPECT_THROW(shift_time(1.01, 5.0), DomainError);
  EXPECT_THROW(shift_time(0.5, 0.0), DomainError);
}

TEST(FlowTime, MirrorsShiftTowardNoise) {
  EXPECT_EQ(flow_time(0.0, 5.0), 0.0);
  EXPECT_EQ(flow_time(1.0, 5.0), 1.0);
  for (double u : {0.1, 0.5, 0.9}) {
    EXPECT_NEAR(flow_time(u, 5.0), shift_time(u, 0.2), 1e-15);
    EXPECT_LT(flow_time(u, 5.0), u);
  }
  // s = 5: half the draws land below tau = 1/6.
  EXPECT_NEAR(flow_time(0.5, 5.0), 1.0 / 6.0, 1e-15);
}

TEST(ShiftTime, StrictlyIncreasingOnGrid) {
  for (double s : {0.2, 1.0, 3.0, 5.0, 20.0}) {
    double prev = -1.0;
    for (int i = 0; i <= 1000; ++i) {
      const double t = shift_time(i / 1000.0, s);
      EXPECT_GT(t, prev) << "s=" << s << " i=" << i;
      prev = t;
    }
  }
}

TEST(Interpolate, Examples) {
  const std::vector<double> z0{0.0, 1.0, -2.0}, z1{4.0, 1.0, 6.0};
  auto r = interpolate<double>(z0, z1, 0.25);
  EXPECT_EQ(r.z_tau[0], 1.0);
  EXPECT_EQ(r.target[0], 4.0);
  EXPECT_EQ(interpolate<double>(z0, z1, 0.0).z_tau, z0);
  EXPECT_EQ(interpolate<double>(z0, z1, 1.0).z_tau, z1);
  // The target does not depend on tau.
  for (double tau : {0.0, 0.3, 0.99}) EXPECT_EQ(interpolate<double>(z0, z1, tau).target, (std::vector<double>{4, 0, 8}));
  EXPECT_THROW(interpolate<double>(z0, std::vector<double>{1.0}, 0.5), ShapeError);
}

TEST(LossWeight, Envelope) {
  const FlowSchedule s;
  EXPECT_EQ(loss_weight(500, s), 1.0);
  EXPECT_NEAR(loss_weight(0, s), std::exp(-2.0), 1e-15);
  EXPECT_NEAR(loss_weight(0, s), 0.1353, 1e-4);
  for (int k = 0; k <= 500; ++k) EXPECT_EQ(loss_weight(500 - k, s), loss_weight(500 + k, s));
  for (int l = 0; l < 1000; ++l) EXPECT_GT(loss_weight(l, s), 0.13);
}

// A predictor whose output is a free tensor; gradients land on it directly.
struct FreeOutput {
  TD out;
  Predictor<double> fn() {
    return [this](const TD&, std::span<const int>, const TD&) { return out; };
  }
};

LossBatch<double> toy_batch(std::mt19937_64& rng, int batch = 3, int steps = 3) {
  LossBatch<double> b;
  b.shape = LatentShape{batch, steps, 2, 2, 3};
  std::normal_distribution<double> n;
  b.data.resize(b.shape.total());
  for (auto& v : b.data) v = n(rng);
  b.action_shape = {batch, 1, 1};
  b.actions.assign(static_cast<std::size_t>(batch), 0.0);
  return b;
}

TEST(TrainingLoss, ExactPredictorGivesZero) {
  std::mt19937_64 data_rng(1);
  const auto batch = toy_batch(data_rng);
  // First pass records the draw; the second pass returns exactly v* off context.
  std::mt19937_64 rng(7);
  LossDraw<double> draw;
  FreeOutput probe{TD::zeros(batch.shape.shape())};
  training_loss<double>(probe.fn(), batch, FlowSchedule{}, rng, 1, &draw);
  std::vector<double> exact(batch.shape.total());
  for (std::size_t i = 0; i < exact.size(); ++i) exact[i] = batch.data[i] - draw.noise[i];
  FreeOutput oracle{TD::constant(batch.shape.shape(), exact)};
  std::mt19937_64 rng2(7);
  EXPECT_EQ(training_loss<double>(oracle.fn(), batch, FlowSchedule{}, rng2, 1).item(), 0.0);
}

TEST(TrainingLoss, NonNegativeAndMatchesFormula) {
  std::mt19937_64 data_rng(2);
  const auto batch = toy_batch(data_rng);
  std::mt19937_64 out_rng(3);
  FreeOutput f{testing::random_tensor(batch.shape.shape(), out_rng)};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    LossDraw<double> d;
    const double loss = training_loss<double>(f.fn(), batch, FlowSchedule{}, rng, 1, &d).item();
    EXPECT_GE(loss, 0.0);
    // Oracle: mean over samples of w_b * mean over non-context entries of residual^2.
    const std::size_t per = batch.shape.sample_size(), ctx = batch.shape.step_size();
    double ref = 0.0;
    for (int b = 0; b < batch.shape.batch; ++b) {
      double s = 0.0;
      for (std::size_t i = ctx; i < per; ++i) {
        const std::size_t k = b * per + i;
        const double r = f.out.values()[k] - (batch.data[k] - d.noise[k]);
        s += r * r;
      }
      ref += d.weights[b] * s / static_cast<double>(per - ctx);
      EXPECT_EQ(d.weights[b], loss_weight(d.levels[b * 3 + 1], FlowSchedule{}));
      EXPECT_EQ(d.levels[b * 3], 0);
      EXPECT_EQ(d.levels[b * 3 + 1], FlowSchedule{}.level_of(d.tau[b]));
    }
    EXPECT_NEAR(loss, ref / batch.shape.batch, 1e-12);
  }
}

TEST(TrainingLoss, ContextTargetsDoNotMatter) {
  std::mt19937_64 data_rng(4);
  auto batch = toy_batch(data_rng);
  std::mt19937_64 out_rng(5);
  FreeOutput f{testing::random_tensor(batch.shape.shape(), out_rng)};
  std::mt19937_64 r1(9), r2(9);
  const double a = training_loss<double>(f.fn(), batch, FlowSchedule{}, r1).item();
  for (int b = 0; b < batch.shape.batch; ++b)
    for (std::size_t i = 0; i < batch.shape.step_size(); ++i) batch.data[b * batch.shape.sample_size() + i] += 3.0;
  EXPECT_EQ(training_loss<double>(f.fn(), batch, FlowSchedule{}, r2).item(), a);
}

TEST(TrainingLoss, ContextGradientIsExactlyZero) {
  std::mt19937_64 data_rng(6);
  const auto batch = toy_batch(data_rng);
  std::mt19937_64 out_rng(7);
  auto init = testing::random_tensor(batch.shape.shape(), out_rng);
  FreeOutput f{TD::parameter(batch.shape.shape(), std::vector<double>(init.values().begin(), init.values().end()))};
  std::mt19937_64 rng(1);
  training_loss<double>(f.fn(), batch, FlowSchedule{}, rng).backward();
  const auto& g = f.out.grad();
  const std::size_t per = batch.shape.sample_size(), ctx = batch.shape.step_size();
  double off_context = 0.0;
  for (int b = 0; b < batch.shape.batch; ++b) {
    for (std::size_t i = 0; i < ctx; ++i) EXPECT_EQ(g[b * per + i], 0.0);
    for (std::size_t i = ctx; i < per; ++i) off_context += std::abs(g[b * per + i]);
  }
  EXPECT_GT(off_context, 0.0);
}

TEST(TrainingLoss, RealModelContextGradientIsZero) {
  const auto m = testing::random_block_model(3, model::Conditioning::adaln);
  const auto p = m.bind(false);
  std::mt19937_64 rng(2);
  LossBatch<double> b;
  b.shape = LatentShape{2, 2, 1, 3, 2};
  b.data.resize(b.shape.total());
  std::normal_distribution<double> n;
  for (auto& v : b.data) v = n(rng);
  b.action_shape = {2, 3, 2};
  for (int i = 0; i < 12; ++i) b.actions.push_back(n(rng));
  TD captured;
  Predictor<double> pred = [&](const TD& z, std::span<const int> levels, const TD& a) {
    captured = m.predict(p, z, levels, a);
    return captured;
  };
  // Gradient of the loss with respect to the prediction, through a leaf spliced in after the model.
  TD leaf;
  Predictor<double> spliced = [&](const TD& z, std::span<const int> levels, const TD& a) {
    const auto y = pred(z, levels, a);
    leaf = TD::parameter(y.shape(), std::vector<double>(y.values().begin(), y.values().end()));
    return leaf;
  };
  training_loss<double>(spliced, b, FlowSchedule{}, rng).backward();
  for (int s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < b.shape.step_size(); ++i) EXPECT_EQ(leaf.grad()[s * b.shape.sample_size() + i], 0.0);
}

TEST(TrainingLoss, Errors) {
  std::mt19937_64 data_rng(8);
  auto batch = toy_batch(data_rng);
  FreeOutput f{TD::zeros(batch.shape.shape())};
  std::mt19937_64 rng(0);
  EXPECT_THROW(training_loss<double>(f.fn(), batch, FlowSchedule{}, rng, 3), DomainError);
  FreeOutput inf{TD::constant(batch.shape.shape(), std::vector<double>(batch.shape.total(), INFINITY))};
  EXPECT_THROW(training_loss<double>(inf.fn(), batch, FlowSchedule{}, rng), NumericError);
  FreeOutput wrong{TD::zeros({1, 2})};
  EXPECT_THROW(training_loss<double>(wrong.fn(), batch, FlowSchedule{}, rng), ShapeError);
}

TEST(TrainingLoss, SamplingDensityMode) {
  std::mt19937_64 data_rng(9);
  const auto batch = toy_batch(data_rng, 64, 2);
  FreeOutput f{TD::zeros(batch.shape.shape())};
  FlowSchedule s;
  s.envelope_mode = EnvelopeMode::sampling_density;
  std::mt19937_64 rng(1);
  LossDraw<double> d;
  training_loss<double>(f.fn(), batch, s, rng, 1, &d);
  double mean = 0;
  for (int b = 0; b < 64; ++b) {
    EXPECT_EQ(d.weights[b], 1.0);
    const int l = d.levels[b * 2 + 1];
    EXPECT_GE(l, 0);
    EXPECT_LT(l, 1000);
    mean += l / 64.0;
  }
  EXPECT_NEAR(mean, 500.0, 120.0);
}

// v(z) = a z + b on a one-entry target step, fixed (z0, z1), plain gradient
// descent. The loss Hessian is at most 2 (1 + z^2) < 8, so step 0.2 is stable.
TEST(TrainingLoss, TwoParameterModelConverges) {
  LossBatch<double> batch;
  batch.shape = LatentShape{1, 2, 1, 1, 1};
  batch.data = {0.0, 1.7};
  batch.action_shape = {1, 1, 1};
  batch.actions = {0.0};
  const std::vector<double> noise{0.0, -0.4};
  double a0 = 0.8, b0 = -0.5;
  std::mt19937_64 rng(11);
  double loss = 1.0;
  for (int step = 0; step < 500; ++step) {
    auto a = TD::parameter({1}, {a0});
    auto b = TD::parameter({1}, {b0});
    Predictor<double> pred = [&](const TD& z, std::span<const int>, const TD&) { return add(mul(z, a), b); };
    auto l = training_loss<double>(pred, batch, FlowSchedule{}, rng, 1, nullptr, &noise);
    loss = l.item();
    l.backward();
    a0 -= 0.2 * a.grad()[0];
    b0 -= 0.2 * b.grad()[0];
  }
  EXPECT_LT(loss, 1e-6);
  EXPECT_NEAR(a0, 0.0, 1e-2);
  EXPECT_NEAR(b0, 2.1, 1e-2);
}

TEST(Euler, OracleConstantFieldRecoversTarget) {
  const LatentShape shape{2, 3, 1, 2, 2};
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::vector<double> z0(shape.total()), target(shape.total());
  for (auto& v : z0) v = n(rng);
  for (auto& v : target) v = n(rng);
  VelocityField<double> field = [&](const std::vector<double>&, double, std::span<const int>) {
    std::vector<double> v(z0.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = target[i] - z0[i];
    return v;
  };
  for (int steps : {1, 2, 7, 50}) {
    const auto z = euler_sample<double>(field, shape, z0, {}, 0, steps, FlowSchedule{});
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], target[i], 1e-12) << steps;
  }
}

TEST(Euler, SingleStepIsOneEulerUpdate) {
  const LatentShape shape{1, 2, 1, 1, 3};
  const std::vector<double> z0{0.5, -1, 2, 0.25, 3, -4};
  std::vector<double> seen_tau;
  VelocityField<double> field = [&](const std::vector<double>& z, double tau, std::span<const int> levels) {
    seen_tau.push_back(tau);
    EXPECT_EQ(levels[0], 999);
    std::vector<double> v(z.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 2 * z[i] + 1;
    return v;
  };
  const auto z = euler_sample<double>(field, shape, z0, {}, 0, 1, FlowSchedule{});
  ASSERT_EQ(seen_tau, std::vector<double>{0.0});
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], z0[i] + (2 * z0[i] + 1));
}

TEST(Euler, ContextIsClampedBitExact) {
  const LatentShape shape{2, 3, 2, 1, 2};
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n;
  std::vector<float> z0(shape.total()), clean(shape.total());
  for (auto& v : z0) v = n(rng);
  for (auto& v : clean) v = n(rng);
  VelocityField<float> field = [&](const std::vector<float>& z, double tau, std::span<const int> levels) {
    // Context enters every evaluation clean and at level 0.
    for (int b = 0; b < 2; ++b) {
      EXPECT_EQ(levels[b * 3], 0);
      for (std::size_t i = 0; i < shape.step_size(); ++i) EXPECT_EQ(z[b * shape.sample_size() + i], clean[b * shape.sample_size() + i]);
    }
    std::vector<float> v(z.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(static_cast<float>(i) + static_cast<float>(tau)) * 3.0f;
    return v;
  };
  const auto z = euler_sample<float>(field, shape, z0, clean, 1, 13, FlowSchedule{});
  for (int b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < shape.step_size(); ++i) EXPECT_EQ(z[b * shape.sample_size() + i], clean[b * shape.sample_size() + i]);
  EXPECT_THROW(euler_sample<float>(field, shape, z0, clean, 1, 0, FlowSchedule{}), DomainError);
}

model::ModelConfig video_config() {
  model::ModelConfig c;
  c.hidden = 16;
  c.layers = 1;
  c.heads = 2;
  c.patch = 2;
  c.latent_rows = 4;
  c.latent_cols = 4;
  c.latent_channels = 48;
  c.latent_steps = 3;
  c.temporal_factor = 4;
  c.action_dim = 2;
  c.frequency_dim = 16;
  return c;
}

model::WorldModel<float> random_video_model() {
  model::WorldModel<float> m(video_config());
  std::mt19937_64 rng(21);
  std::normal_distribution<float> n(0.0f, 0.2f);
  for (auto& e : m.parameters().entries)
    for (auto& v : e.values) v = n(rng);
  return m;
}

VideoSpec video_spec() {
  VideoSpec v;
  v.height = 8;
  v.width = 8;
  v.spatial_factor = 2;
  return v;
}

std::vector<float> random_frames(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

TEST(PredictWindow, ShapeRangeAndExactContext) {
  const auto m = random_video_model();
  std::mt19937_64 rng(1);
  const auto first = random_frames(rng, 8 * 8 * 3);
  auto actions = random_frames(rng, 9 * 2);
  std::fill_n(actions.begin(), 2, 0.0f);
  FlowSchedule s;
  const auto out = predict_window(m, video_spec(), first, actions, 4, s, 3);
  ASSERT_EQ(out.size(), 9u * 8 * 8 * 3);
  EXPECT_TRUE(std::equal(first.begin(), first.end(), out.begin()));
  for (float v : out) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(predict_window(m, video_spec(), first, actions, 4, s, 3), out);
  EXPECT_NE(predict_window(m, video_spec(), first, actions, 4, s, 4), out);
}

TEST(Rollout, OneWindowEqualsPredictWindow) {
  const auto m = random_video_model();
  std::mt19937_64 rng(2);
  const auto first = random_frames(rng, 8 * 8 * 3);
  auto actions = random_frames(rng, 9 * 2);
  const auto roll = rollout_autoregressive(m, video_spec(), first, actions, 1, 3, FlowSchedule{}, 10);
  std::fill_n(actions.begin(), 2, 0.0f);
  EXPECT_EQ(roll, predict_window(m, video_spec(), first, actions, 3, FlowSchedule{}, 10));
}

TEST(Rollout, TwoWindowsDeduplicateJunction) {
  const auto m = random_video_model();
  std::mt19937_64 rng(3);
  const std::size_t fs = 8 * 8 * 3;
  const auto first = random_frames(rng, fs);
  const auto actions = random_frames(rng, 17 * 2);
  const auto roll = rollout_autoregressive(m, video_spec(), first, actions, 2, 3, FlowSchedule{}, 20);
  ASSERT_EQ(roll.size(), 17 * fs);
  // Oracle: rebuild each window by hand.
  std::vector<float> a1(actions.begin(), actions.begin() + 18);
  std::fill_n(a1.begin(), 2, 0.0f);
  const auto w1 = predict_window(m, video_spec(), first, a1, 3, FlowSchedule{}, 20);
  const std::vector<float> junction(w1.end() - fs, w1.end());
  std::vector<float> a2(actions.begin() + 16, actions.begin() + 34);
  std::fill_n(a2.begin(), 2, 0.0f);
  const auto w2 = predict_window(m, video_spec(), junction, a2, 3, FlowSchedule{}, 21);
  std::vector<float> expect(w1);
  expect.insert(expect.end(), w2.begin() + fs, w2.end());
  EXPECT_EQ(roll, expect);
  // The junction frame occurs once, at index 8.
  EXPECT_TRUE(std::equal(junction.begin(), junction.end(), roll.begin() + 8 * fs));
}

TEST(Rollout, InsufficientActions) {
  const auto m = random_video_model();
  std::mt19937_64 rng(4);
  const auto first = random_frames(rng, 8 * 8 * 3);
  const auto actions = random_frames(rng, 16 * 2);
  EXPECT_THROW(rollout_autoregressive(m, video_spec(), first, actions, 2, 2, FlowSchedule{}, 0), DomainError);
  EXPECT_THROW(rollout_autoregressive(m, video_spec(), first, actions, 0, 2, FlowSchedule{}, 0), DomainError);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  AdamWConfig cfg;
  cfg.lr = 0.1;
  AdamW<double> opt(cfg, {3});
  std::vector<double> p{1.0, -2.0, 0.5};
  // Norm 10 > clip 1: direction survives, magnitude is lr per coordinate.
  const double norm = opt.step({std::span<double>(p)}, {{6.0, -8.0, 0.0}});
  EXPECT_DOUBLE_EQ(norm, 10.0);
  EXPECT_NEAR(p[0], 0.9, 1e-7);
  EXPECT_NEAR(p[1], -1.9, 1e-7);
  EXPECT_EQ(p[2], 0.5);
  EXPECT_EQ(opt.steps_taken(), 1);
}

TEST(AdamW, WarmupAndDecoupledDecay) {
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.warmup_steps = 4;
  cfg.weight_decay = 0.5;
  AdamW<double> opt(cfg, {1});
  std::vector<double> p{2.0};
  opt.step({std::span<double>(p)}, {{0.0}});
  // Zero gradient: only decay acts, at lr / 4.
  EXPECT_DOUBLE_EQ(p[0], 2.0 - 0.025 * 0.5 * 2.0);
  std::vector<double> q{1.0};
  EXPECT_THROW(opt.step({std::span<double>(q)}, {{NAN}}), NumericError);
  EXPECT_THROW(AdamW<double>(AdamWConfig{0.0}, {1}), DomainError);
}

flow::TrainingSet toy_set(const model::ModelConfig& cfg, int n) {
  TrainingSet set;
  set.sample_shape = LatentShape{1, cfg.latent_steps, cfg.latent_rows, cfg.latent_cols, cfg.latent_channels};
  set.action_shape = {1, cfg.action_frames(), cfg.action_dim};
  std::mt19937_64 rng(5);
  std::normal_distribution<float> nd;
  for (int i = 0; i < n; ++i) {
    std::vector<float> z(set.sample_shape.total()), a(static_cast<std::size_t>(cfg.action_frames() * cfg.action_dim));
    for (auto& v : z) v = nd(rng);
    for (auto& v : a) v = nd(rng);
    set.latents.push_back(z);
    set.actions.push_back(a);
  }
  return set;
}

TEST(Train, LogsJsonLinesAndIsDeterministic) {
  const auto cfg = video_config();
  const auto data = toy_set(cfg, 5);
  TrainConfig tc;
  tc.steps = 12;
  tc.batch = 2;
  tc.log_every = 5;
  tc.optim.lr = 1e-3;
  model::WorldModel<float> a(cfg), b(cfg);
  std::ostringstream log;
  int calls = 0;
  const auto entries = train(a, data, tc, &log, [&](const TrainLogEntry&) { ++calls; });
  train(b, data, tc);
  EXPECT_EQ(calls, 12);
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_EQ(entries.back().step, 12);
  std::istringstream lines(log.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("step") && j.contains("loss") && j.contains("wall_time") && j.contains("grad_norm"));
    EXPECT_TRUE(std::isfinite(j["loss"].get<double>()));
    ++count;
  }
  EXPECT_EQ(count, 3);
  for (std::size_t i = 0; i < a.parameters().entries.size(); ++i)
    EXPECT_EQ(a.parameters().entries[i].values, b.parameters().entries[i].values);
  EXPECT_NE(a.parameters().at("head.w").values, model::WorldModel<float>(cfg).parameters().at("head.w").values);
}

TEST(Train, MakeBatchConcatenates) {
  const auto cfg = video_config();
  const auto data = toy_set(cfg, 3);
  const std::vector<std::size_t> idx{2, 0};
  const auto b = make_batch(data, idx);
  EXPECT_EQ(b.shape.batch, 2);
  EXPECT_EQ(b.action_shape[0], 2);
  EXPECT_TRUE(std::equal(data.latents[2].begin(), data.latents[2].end(), b.data.begin()));
  EXPECT_TRUE(std::equal(data.actions[0].begin(), data.actions[0].end(), b.actions.begin() + data.actions[0].size()));
}

}  // namespace
}  // namespace acwm::flow
