// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "acwm/metrics/evaluate.hpp"
#include "acwm/flow/trainer.hpp"
#include "acwm/metrics/metrics.hpp"
#include "json.hpp"

namespace acwm::metrics {
namespace {

namespace fs = std::filesystem;

std::vector<float> random_video(std::mt19937_64& rng, int frames, int h, int w) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(frames) * h * w * 3);
  for (auto& x : v) x = u(rng);
  return v;
}

VideoRef ref(const std::vector<float>& v, int frames, int h, int w) { return VideoRef{v, frames, h, w}; }

TEST(Mse, Examples) {
  std::mt19937_64 rng(1);
  auto gt = random_video(rng, 3, 4, 5);
  for (auto& x : gt) x = 0.2f + 0.6f * x;
  EXPECT_EQ(compute_mse(ref(gt, 3, 4, 5), ref(gt, 3, 4, 5)), 0.0);
  auto off = gt;
  for (auto& x : off) x += 0.1f;
  EXPECT_NEAR(compute_mse(ref(gt, 3, 4, 5), ref(off, 3, 4, 5)), 0.01, 1e-7);
  auto other = random_video(rng, 3, 4, 5);
  EXPECT_EQ(compute_mse(ref(gt, 3, 4, 5), ref(other, 3, 4, 5)), compute_mse(ref(other, 3, 4, 5), ref(gt, 3, 4, 5)));
  EXPECT_THROW(compute_mse(ref(gt, 3, 4, 5), ref(gt, 3, 5, 4)), ShapeError);
  EXPECT_THROW(compute_mse(ref(gt, 3, 4, 5), ref(gt, 3, 4, 5), 3), DomainError);
}

TEST(Mse, FirstFrameSkipsContext) {
  std::vector<float> gt(2 * 3, 0.0f), pred(2 * 3, 0.0f);
  pred[0] = 1.0f;  // error only in frame 0
  pred[3] = 0.5f;
  EXPECT_NEAR(compute_mse(ref(gt, 2, 1, 1), ref(pred, 2, 1, 1), 1), 0.25 / 3, 1e-12);
}

TEST(Psnr, Examples) {
  EXPECT_NEAR(psnr_from_mse(0.01), 20.0, 1e-12);
  EXPECT_NEAR(psnr_from_mse(1.0), 0.0, 1e-12);
  EXPECT_EQ(psnr_from_mse(0.0), 120.0);
  EXPECT_EQ(psnr_from_mse(9e-13), 120.0);
  EXPECT_NEAR(psnr_from_mse(0.04, 2.0), 20.0, 1e-12);
  std::vector<float> v(12, 0.3f);
  EXPECT_EQ(compute_psnr(ref(v, 1, 2, 2), ref(v, 1, 2, 2)), 120.0);
}

TEST(Psnr, StrictlyDecreasingInMse) {
  double prev = INFINITY;
  for (int i = 1; i <= 100; ++i) {
    const double p = psnr_from_mse(i * 1e-3);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

std::vector<double> gray(const std::vector<float>& rgb) {
  std::vector<double> g(rgb.size() / 3);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (double(rgb[3 * i]) + rgb[3 * i + 1] + rgb[3 * i + 2]) / 3.0;
  return g;
}

TEST(Ssim, IdentityOnRandomFrames) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto f = gray(random_video(rng, 1, 16, 16));
    EXPECT_NEAR(ssim_gray(f, f, 16, 16), 1.0, 1e-12);
  }
}

TEST(Ssim, ConstantImagesClosedForm) {
  const double c1 = 0.01 * 0.01;
  for (auto [m1, m2] : {std::pair{0.2, 0.7}, std::pair{0.5, 0.5}, std::pair{0.0, 1.0}}) {
    const std::vector<double> a(12 * 13, m1), b(12 * 13, m2);
    EXPECT_NEAR(ssim_gray(a, b, 12, 13), (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1), 1e-12);
  }
}

TEST(Ssim, AntiCorrelatedIsNegative) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.3);
  // Point-antisymmetric about the center, so the Gaussian-weighted mean is 0.
  std::vector<double> x(11 * 11, 0.0), y(11 * 11);
  for (std::size_t i = 0; i < 60; ++i) {
    x[i] = n(rng);
    x[120 - i] = -x[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
  EXPECT_LT(ssim_gray(x, y, 11, 11), 0.0);
}

TEST(Ssim, SymmetricAndBounded) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto a = gray(random_video(rng, 1, 14, 20)), b = gray(random_video(rng, 1, 14, 20));
    const double s = ssim_gray(a, b, 14, 20);
    EXPECT_NEAR(s, ssim_gray(b, a, 14, 20), 1e-12);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
  const std::vector<double> small(10 * 20);
  EXPECT_THROW(ssim_gray(small, small, 10, 20), ShapeError);
}

TEST(Ssim, VideoAveragesFrames) {
  std::mt19937_64 rng(5);
  const auto a = random_video(rng, 3, 12, 12), b = random_video(rng, 3, 12, 12);
  double s = 0;
  const std::size_t fs = 12 * 12 * 3;
  for (int t = 1; t < 3; ++t) {
    const std::vector<float> fa(a.begin() + t * fs, a.begin() + (t + 1) * fs), fb(b.begin() + t * fs, b.begin() + (t + 1) * fs);
    s += ssim_gray(gray(fa), gray(fb), 12, 12);
  }
  EXPECT_NEAR(compute_ssim(ref(a, 3, 12, 12), ref(b, 3, 12, 12), 1.0, 1), s / 2, 1e-12);
}

// Independent double-loop M-MSE over (t >= first, h, w, c).
double naive_mmse(const std::vector<float>& gt, const std::vector<float>& pred, int T, int H, int W, int first) {
  auto at = [&](const std::vector<float>& v, int t, int h, int w, int c) {
    return static_cast<double>(v[((static_cast<std::size_t>(t) * H + h) * W + w) * 3 + c]);
  };
  double num = 0, den = 0;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      double m = 0;
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < 3; ++c) m = std::max(m, std::abs(at(gt, t, h, w, c) - at(gt, 0, h, w, c)));
      const double wt = 0.01 + m;
      for (int t = first; t < T; ++t)
        for (int c = 0; c < 3; ++c) {
          const double e = at(pred, t, h, w, c) - at(gt, t, h, w, c);
          num += wt * e * e;
          den += wt;
        }
    }
  return num / den;
}

TEST(Mmse, TwoPixelOracle) {
  // Pixel A moves by 1 and is predicted exactly; pixel B is static and off by 1.
  std::vector<float> gt{0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0};
  std::vector<float> pred{0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  const double v = compute_mmse(ref(gt, 2, 1, 2), ref(pred, 2, 1, 2));
  EXPECT_NEAR(v, 0.01 / 1.02, 1e-12);
  EXPECT_NEAR(v, 0.009804, 1e-6);
  const auto m = motion_weights(ref(gt, 2, 1, 2));
  EXPECT_EQ(m.motion, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(m.weight, (std::vector<double>{1.01, 0.01}));
}

TEST(Mmse, IdentityAndFrameCount) {
  std::mt19937_64 rng(6);
  const auto gt = random_video(rng, 3, 4, 4);
  EXPECT_EQ(compute_mmse(ref(gt, 3, 4, 4), ref(gt, 3, 4, 4)), 0.0);
  EXPECT_THROW(compute_mmse(ref(gt, 1, 4, 4), ref(gt, 1, 4, 4)), DomainError);
  EXPECT_THROW(motion_weights(ref(gt, 1, 4, 4)), DomainError);
}

TEST(Mmse, UniformMotionReducesToMse) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto gt = random_video(rng, 4, 5, 6);
    const std::size_t fs = 5 * 6 * 3;
    // Every pixel moves by the same 0.3 in frame 2 only.
    for (std::size_t i = 0; i < fs; ++i) {
      gt[i] = 0.5f;
      gt[fs + i] = 0.5f;
      gt[2 * fs + i] = 0.8f;
      gt[3 * fs + i] = 0.5f;
    }
    const auto pred = random_video(rng, 4, 5, 6);
    EXPECT_NEAR(compute_mmse(ref(gt, 4, 5, 6), ref(pred, 4, 5, 6)), compute_mse(ref(gt, 4, 5, 6), ref(pred, 4, 5, 6)), 1e-9);
    EXPECT_NEAR(compute_mmse(ref(gt, 4, 5, 6), ref(pred, 4, 5, 6), 1),
                compute_mse(ref(gt, 4, 5, 6), ref(pred, 4, 5, 6), 1), 1e-9);
  }
}

TEST(Mmse, StaticErrorIsDownWeighted) {
  // Pixel 0 moves by 0.8, pixel 1 is static; the same squared error goes on one or the other.
  std::vector<float> gt{0.1f, 0.1f, 0.1f, 0.5f, 0.5f, 0.5f, 0.9f, 0.9f, 0.9f, 0.5f, 0.5f, 0.5f};
  auto on_moving = gt, on_static = gt;
  for (int c = 0; c < 3; ++c) {
    on_moving[6 + c] -= 0.2f;
    on_static[9 + c] -= 0.2f;
  }
  EXPECT_LT(compute_mmse(ref(gt, 2, 1, 2), ref(on_static, 2, 1, 2)),
            compute_mmse(ref(gt, 2, 1, 2), ref(on_moving, 2, 1, 2)));
}

TEST(Mmse, MatchesNaiveOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto gt = random_video(rng, 5, 3, 7), pred = random_video(rng, 5, 3, 7);
    for (int first : {0, 1, 3})
      EXPECT_NEAR(compute_mmse(ref(gt, 5, 3, 7), ref(pred, 5, 3, 7), first), naive_mmse(gt, pred, 5, 3, 7, first),
                  1e-10);
  }
}

TEST(Shuffle, KeepsNullActionAndPermutesRows) {
  std::vector<float> a(9 * 2);
  for (int t = 0; t < 9; ++t) {
    a[2 * t] = static_cast<float>(t);
    a[2 * t + 1] = static_cast<float>(-t);
  }
  const auto s = shuffle_actions(a, 9, 2, 4);
  EXPECT_EQ(s[0], 0.0f);
  std::vector<float> rows;
  for (int t = 0; t < 9; ++t) {
    EXPECT_EQ(s[2 * t + 1], -s[2 * t]);
    rows.push_back(s[2 * t]);
  }
  std::sort(rows.begin(), rows.end());
  for (int t = 0; t < 9; ++t) EXPECT_EQ(rows[t], static_cast<float>(t));
  EXPECT_NE(s, a);
  EXPECT_EQ(shuffle_actions(a, 9, 2, 4), s);
  EXPECT_THROW(shuffle_actions(a, 8, 2, 4), ShapeError);
}

class EvaluateTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fs::temp_directory_path() / ("acwm_eval_test_" + std::to_string(::getpid())));
    auto spec = dataset::default_split(envs::EnvKind::reacher, dataset::Split::ind_test, 3);
    spec.latent_steps = 3;
    spec.height = 16;
    spec.width = 16;
    manifest_ = new dataset::Manifest(dataset::generate_split(spec, *dir_));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete manifest_;
    delete dir_;
  }

  static model::ModelConfig config() {
    model::ModelConfig c;
    c.hidden = 16;
    c.layers = 1;
    c.heads = 2;
    c.latent_rows = 8;
    c.latent_cols = 8;
    c.latent_channels = 48;
    c.latent_steps = 3;
    c.frequency_dim = 16;
    return c;
  }

  static model::WorldModel<float> random_model() {
    model::WorldModel<float> m(config());
    std::mt19937_64 rng(3);
    std::normal_distribution<float> n(0.0f, 0.2f);
    for (auto& e : m.parameters().entries)
      for (auto& v : e.values) v = n(rng);
    return m;
  }

  static flow::VideoSpec video() {
    flow::VideoSpec v;
    v.height = 16;
    v.width = 16;
    v.normalizer = flow::normalizer_from(manifest_->stats);
    return v;
  }

  static fs::path* dir_;
  static dataset::Manifest* manifest_;
};

fs::path* EvaluateTest::dir_ = nullptr;
dataset::Manifest* EvaluateTest::manifest_ = nullptr;

TEST_F(EvaluateTest, DeterministicAndCountsEpisodes) {
  const auto m = random_model();
  EvalOptions opts;
  opts.n_steps = 3;
  opts.seed = 5;
  const auto a = evaluate_model(m, video(), *manifest_, opts, "abc");
  const auto b = evaluate_model(m, video(), *manifest_, opts, "abc");
  ASSERT_EQ(a.episodes.size(), manifest_->entries.size());
  EXPECT_EQ(a.checkpoint_id, "abc");
  EXPECT_EQ(a.sampler_steps, 3);
  EXPECT_EQ(a.split, "ind_test");
  double mean = 0;
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    EXPECT_EQ(a.episodes[i].mse, b.episodes[i].mse);
    EXPECT_EQ(a.episodes[i].ssim, b.episodes[i].ssim);
    EXPECT_EQ(a.episodes[i].psnr, psnr_from_mse(a.episodes[i].mse));
    mean += a.episodes[i].mmse / 3.0;
  }
  EXPECT_NEAR(a.mean.mmse, mean, 1e-15);
  opts.threads = 3;
  const auto c = evaluate_model(m, video(), *manifest_, opts, "abc");
  for (std::size_t i = 0; i < a.episodes.size(); ++i) EXPECT_EQ(a.episodes[i].mse, c.episodes[i].mse);
  opts.max_episodes = 2;
  EXPECT_EQ(evaluate_model(m, video(), *manifest_, opts).episodes.size(), 2u);
}

TEST_F(EvaluateTest, PerEpisodeMmseMatchesNaiveOracle) {
  const auto m = random_model();
  EvalOptions opts;
  opts.n_steps = 2;
  opts.seed = 11;
  const auto r = evaluate_model(m, video(), *manifest_, opts);
  for (std::size_t i = 0; i < r.episodes.size(); ++i) {
    const auto ep = dataset::read_episode(manifest_->episode_path(i));
    const auto pred = flow::predict_window(m, video(), ep.frame(0), ep.actions, 2, opts.schedule, opts.seed + i);
    EXPECT_NEAR(r.episodes[i].mmse, naive_mmse(ep.frames, pred, ep.frame_count, 16, 16, 1), 1e-10);
  }
}

TEST_F(EvaluateTest, ShuffledModeIsReported) {
  const auto m = random_model();
  EvalOptions opts;
  opts.n_steps = 2;
  opts.actions = ActionMode::shuffled;
  const auto r = evaluate_model(m, video(), *manifest_, opts);
  EXPECT_EQ(r.action_mode, "shuffled");
  EXPECT_EQ(r.episodes.size(), 3u);
}

TEST_F(EvaluateTest, MismatchedModelRejected) {
  auto cfg = config();
  cfg.latent_steps = 4;
  const model::WorldModel<float> m(cfg);
  try {
    evaluate_model(m, video(), *manifest_, EvalOptions{});
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("mismatch"), std::string::npos);
  }
}

TEST_F(EvaluateTest, ReportFiles) {
  const auto m = random_model();
  EvalOptions opts;
  opts.n_steps = 1;
  const auto r = evaluate_model(m, video(), *manifest_, opts, "id1");
  write_report_csv(r, *dir_ / "r.csv");
  write_report_json(r, *dir_ / "r.json");
  std::ifstream csv(*dir_ / "r.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "episode,mse,mse_x1e3,mmse,mmse_x1e3,ssim,psnr");
  int rows = 0;
  std::string last;
  while (std::getline(csv, line)) {
    ++rows;
    last = line;
  }
  EXPECT_EQ(rows, 4);
  EXPECT_EQ(last.rfind("mean,", 0), 0u);
  std::ifstream js(*dir_ / "r.json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j["checkpoint"], "id1");
  EXPECT_EQ(j["episodes"], 3);
  EXPECT_NEAR(j["mean"]["mse_x1e3"].get<double>(), r.mean.mse * 1e3, 1e-12);
}

}  // namespace
}  // namespace acwm::metrics
