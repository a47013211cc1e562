// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "acwm/cli/cli.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "acwm/core/error.hpp"
#include "acwm/dataset/dataset.hpp"
#include "acwm/flow/flow.hpp"
#include "acwm/flow/trainer.hpp"
#include "acwm/metrics/evaluate.hpp"
#include "acwm/metrics/metrics.hpp"
#include "acwm/model/checkpoint.hpp"

namespace acwm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

#define ACWM_RUN_CONFIG_FIELDS(X)                                                                                    \
  X(subcommand) X(env) X(split) X(episodes) X(data_fraction) X(data_seed) X(height) X(width) X(latent_steps)         \
  X(spatial_factor) X(temporal_factor) X(preset) X(hidden) X(layers) X(heads) X(patch) X(conditioning) X(seed)       \
  X(train_steps) X(batch) X(lr) X(clip_norm) X(warmup_steps) X(log_every) X(save_every) X(sampler_steps)             \
  X(sweep_steps) X(shift) X(actions) X(max_episodes) X(threads) X(episode_index) X(windows) X(data_dir)              \
  X(checkpoint) X(sweep_dir) X(train_dir) X(output_dir)

json to_json(const RunConfig& c) {
  json j;
#define X(f) j[#f] = c.f;
  ACWM_RUN_CONFIG_FIELDS(X)
#undef X
  return j;
}

RunConfig from_json(const json& j, RunConfig base) {
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    try {
#define X(f)              \
  if (key == #f) {        \
    value.get_to(base.f); \
    known = true;         \
  }
      ACWM_RUN_CONFIG_FIELDS(X)
#undef X
    } catch (const json::exception& e) {
      throw UsageError("config key '" + key + "' has the wrong type: " + e.what());
    }
    if (!known) throw UsageError("unknown config key '" + key + "'");
  }
  return base;
}

#undef ACWM_RUN_CONFIG_FIELDS

fs::path output_root() {
  const char* root = std::getenv(kOutputRootEnv);
  return (root && *root) ? fs::path(root) : fs::path("runs");
}

void write_ppm(const fs::path& path, const std::vector<float>& rgb, int height, int width) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3) throw ShapeError("PPM buffer does not match its size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image '" + path.string() + "'");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  std::vector<unsigned char> bytes(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(rgb[i], 0.0f, 1.0f) * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

namespace {

std::string escape_xml(const std::string& s) {
  std::string r;
  for (char c : s) {
    switch (c) {
      case '&': r += "&amp;"; break;
      case '<': r += "&lt;"; break;
      case '>': r += "&gt;"; break;
      case '"': r += "&quot;"; break;
      default: r += c;
    }
  }
  return r;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

void write_line_chart(const fs::path& path, const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<Series>& series, bool log_x) {
  constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  auto tx = [&](double x) { return log_x ? std::log10(x) : x; };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("series '" + s.name + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (log_x && !(s.x[i] > 0)) throw DomainError("log-scaled x needs positive values");
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) {
    const double pad = std::max(1e-12, std::abs(y0) * 0.05);
    y0 -= pad, y1 += pad;
  }
  const double ypad = 0.05 * (y1 - y0);
  y0 -= ypad, y1 += ypad;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (tx(x) - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW
      << ' ' << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title)
      << "</text>\n";
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0, yy = py(yv);
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << yy << "\" x2=\"" << kLeft + pw << "\" y2=\"" << yy
        << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << yy + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
    const double xt = x0 + (x1 - x0) * k / 4.0, xx = kLeft + pw * k / 4.0;
    svg << "<text x=\"" << xx << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">"
        << fmt(log_x ? std::pow(10.0, xt) : xt) << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">" << escape_xml(x_label)
      << (log_x ? " (log scale)" : "") << "</text>\n";
  svg << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << kTop + ph / 2 << ")\">" << escape_xml(y_label) << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kColors[si % 5];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) svg << (i ? " " : "") << px(s.x[i]) << ',' << py(s.y[i]);
    svg << "\"/>\n";
    if (s.x.size() <= 64) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        svg << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    if (series.size() > 1) {
      const double ly = kTop + 14 + 16 * static_cast<double>(si);
      svg << "<text x=\"" << kLeft + pw - 8 << "\" y=\"" << ly << "\" text-anchor=\"end\" fill=\"" << color << "\">"
          << escape_xml(s.name) << "</text>\n";
    }
  }
  svg << "</svg>\n";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write chart '" + path.string() + "'");
  out << svg.str();
}

namespace {

/// Advisory lock on an output directory, held for the life of the command.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".acwm.lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot create lock file '" + path_.string() + "'");
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw IoError("output directory '" + dir.string() + "' is locked by another acwm process");
    }
  }
  ~DirLock() {
    ::unlink(path_.c_str());
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

/// Wraps library validation failures on user-supplied settings as usage errors.
template <class F>
auto as_usage(F&& f) {
  try {
    return f();
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
}

struct Context {
  RunConfig c;
  std::set<std::string> given;  // keys set by a flag or the config file
  std::ostream& out;
};

fs::path prepare_output(RunConfig& c, const fs::path& fallback) {
  const fs::path dir = c.output_dir.empty() ? fallback : fs::path(c.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  c.output_dir = dir.string();
  return dir;
}

void write_config(const fs::path& dir, const RunConfig& c) {
  std::ofstream out(dir / "config.json");
  if (!out) throw IoError("cannot write '" + (dir / "config.json").string() + "'");
  out << to_json(c).dump(2) << '\n';
}

void validate(const RunConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError(what);
  };
  as_usage([&] { return envs::parse_env_kind(c.env); });
  as_usage([&] { return dataset::parse_split(c.split); });
  need(c.episodes >= 1, "--episodes must be at least 1");
  need(c.data_fraction > 0.0 && c.data_fraction <= 1.0, "--data-fraction must lie in (0, 1]");
  need(c.height >= 1 && c.width >= 1, "--height and --width must be positive");
  need(c.latent_steps >= 1 && c.temporal_factor >= 1 && c.spatial_factor >= 1,
       "--latent-steps, --temporal-factor and --spatial-factor must be positive");
  need(c.train_steps >= 1 && c.batch >= 1, "--steps and --batch must be positive");
  need(c.lr > 0.0, "--lr must be positive");
  need(c.sampler_steps >= 1, "--sampler-steps must be positive");
  need(!c.sweep_steps.empty(), "--steps needs at least one sampler step count");
  for (int n : c.sweep_steps) need(n >= 1, "sweep step counts must be positive, got " + std::to_string(n));
  need(c.shift > 0.0, "--shift must be positive");
  need(c.actions == "true" || c.actions == "shuffled", "--actions must be 'true' or 'shuffled', got '" + c.actions + "'");
  need(c.threads >= 1 && c.max_episodes >= 0, "--threads must be positive and --max-episodes non-negative");
  need(c.windows >= 1 && c.episode_index >= 0, "--windows must be positive and --episode non-negative");
  need(c.log_every >= 0 && c.save_every >= 0 && c.warmup_steps >= 0, "logging and warmup intervals must be >= 0");
}

/// Reads the input dataset and pins env/split to it.
dataset::Manifest open_dataset(Context& ctx) {
  RunConfig& c = ctx.c;
  const fs::path dir = c.data_dir.empty() ? output_root() / "data" / c.env / c.split : fs::path(c.data_dir);
  if (!fs::exists(dir / dataset::kManifestName)) {
    throw UsageError("no dataset manifest in '" + dir.string() + "' (run gen first or pass --data)");
  }
  auto m = dataset::read_manifest(dir / dataset::kManifestName);
  const std::string env(envs::to_string(m.env)), split(dataset::to_string(m.split));
  if (ctx.given.count("env") && c.env != env) {
    throw UsageError("--env " + c.env + " contradicts the dataset in '" + dir.string() + "' (" + env + ")");
  }
  if (ctx.given.count("split") && c.split != split) {
    throw UsageError("--split " + c.split + " contradicts the dataset in '" + dir.string() + "' (" + split + ")");
  }
  c.env = env;
  c.split = split;
  c.data_dir = dir.string();
  c.height = m.height;
  c.width = m.width;
  c.latent_steps = m.latent_steps;
  c.temporal_factor = m.temporal_factor;
  return m;
}

struct LoadedModel {
  model::Checkpoint checkpoint;
  model::WorldModel<float> net;
  flow::VideoSpec video;
};

LoadedModel open_checkpoint(RunConfig& c, const dataset::Manifest& m) {
  const fs::path path =
      c.checkpoint.empty() ? output_root() / "train" / c.env / "checkpoint.acwm" : fs::path(c.checkpoint);
  if (!fs::exists(path)) throw UsageError("no checkpoint at '" + path.string() + "' (run train first or pass --checkpoint)");
  c.checkpoint = path.string();
  auto ck = model::load_checkpoint(path);
  if (ck.meta.env != c.env) {
    throw DomainError("checkpoint was trained on " + ck.meta.env + " but the dataset is " + c.env);
  }
  if (ck.meta.frame_height != m.height || ck.meta.frame_width != m.width) {
    throw DomainError("checkpoint frames are " + std::to_string(ck.meta.frame_height) + "x" +
                      std::to_string(ck.meta.frame_width) + " but the dataset has " + std::to_string(m.height) + "x" +
                      std::to_string(m.width));
  }
  c.spatial_factor = ck.meta.spatial_factor;
  flow::VideoSpec video{m.height, m.width, ck.meta.spatial_factor, ck.meta.normalizer};
  model::WorldModel<float> net(ck.config, ck.parameters);
  return LoadedModel{std::move(ck), std::move(net), video};
}

metrics::EvalOptions eval_options(const RunConfig& c) {
  metrics::EvalOptions o;
  o.n_steps = c.sampler_steps;
  o.seed = c.seed;
  o.actions = c.actions == "shuffled" ? metrics::ActionMode::shuffled : metrics::ActionMode::true_actions;
  o.max_episodes = c.max_episodes;
  o.threads = c.threads;
  o.schedule.shift = c.shift;
  return o;
}

std::string summary(const metrics::EpisodeMetrics& m) {
  std::ostringstream s;
  s << std::setprecision(6) << "mse_x1e3=" << m.mse * 1e3 << " mmse_x1e3=" << m.mmse * 1e3 << " ssim=" << m.ssim
    << " psnr=" << m.psnr;
  return s.str();
}

int cmd_gen(Context& ctx) {
  RunConfig& c = ctx.c;
  const auto kind = envs::parse_env_kind(c.env);
  auto spec = dataset::default_split(kind, dataset::parse_split(c.split), c.episodes);
  if (c.data_seed >= 0) spec.base_seed = static_cast<std::uint64_t>(c.data_seed);
  c.data_seed = static_cast<std::int64_t>(spec.base_seed);
  spec.data_fraction = c.data_fraction;
  spec.latent_steps = c.latent_steps;
  spec.temporal_factor = c.temporal_factor;
  spec.height = c.height;
  spec.width = c.width;
  const fs::path dir = prepare_output(c, output_root() / "data" / c.env / c.split);
  c.data_dir = dir.string();
  DirLock lock(dir);
  write_config(dir, c);
  const auto m = dataset::generate_split(spec, dir);
  ctx.out << "gen: " << m.entries.size() << " " << c.env << "/" << c.split << " episodes in " << dir.string() << '\n';
  return kExitOk;
}

int cmd_train(Context& ctx) {
  RunConfig& c = ctx.c;
  const auto m = open_dataset(ctx);
  if (m.split != dataset::Split::train) throw UsageError("train needs a train split, got " + c.split);
  if (m.height % c.spatial_factor || m.width % c.spatial_factor) {
    throw UsageError("frame size " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                     " is not divisible by the spatial factor " + std::to_string(c.spatial_factor));
  }
  const auto mc = as_usage([&] {
    auto mc = model::ModelConfig::preset(c.preset);
    if (c.hidden > 0) mc.hidden = c.hidden;
    if (c.layers >= 0) mc.layers = c.layers;
    if (c.heads > 0) mc.heads = c.heads;
    if (c.patch > 0) mc.patch = c.patch;
    if (!c.conditioning.empty()) mc.conditioning = model::parse_conditioning(c.conditioning);
    mc.latent_steps = m.latent_steps;
    mc.temporal_factor = m.temporal_factor;
    mc.latent_rows = m.height / c.spatial_factor;
    mc.latent_cols = m.width / c.spatial_factor;
    mc.latent_channels = 3 * c.spatial_factor * c.spatial_factor * m.temporal_factor;
    mc.action_dim = m.action_dim;
    mc.seed = c.seed;
    mc.validate();
    return mc;
  });
  c.hidden = mc.hidden;
  c.layers = mc.layers;
  c.heads = mc.heads;
  c.patch = mc.patch;
  c.conditioning = std::string(model::to_string(mc.conditioning));

  const auto norm = flow::normalizer_from(m.stats);
  const auto data = flow::load_training_set(m, c.spatial_factor, norm);
  model::WorldModel<float> net(mc);

  flow::TrainConfig tc;
  tc.steps = c.train_steps;
  tc.batch = c.batch;
  tc.seed = c.seed;
  tc.log_every = c.log_every;
  tc.optim.lr = c.lr;
  tc.optim.clip_norm = c.clip_norm;
  tc.optim.warmup_steps = c.warmup_steps;
  tc.schedule.shift = c.shift;

  const fs::path dir = prepare_output(c, output_root() / "train" / c.env);
  c.train_dir = dir.string();
  DirLock lock(dir);
  write_config(dir, c);
  model::CheckpointMeta meta;
  meta.env = c.env;
  meta.frame_height = m.height;
  meta.frame_width = m.width;
  meta.spatial_factor = c.spatial_factor;
  meta.normalizer = norm;

  std::ofstream log(dir / "loss.jsonl");
  if (!log) throw IoError("cannot write '" + (dir / "loss.jsonl").string() + "'");
  const auto entries = flow::train(net, data, tc, &log, [&](const flow::TrainLogEntry& e) {
    if (c.save_every > 0 && e.step % c.save_every == 0 && e.step < c.train_steps) {
      meta.step = e.step;
      meta.final_loss = e.loss;
      model::save_checkpoint(dir / ("checkpoint_" + std::to_string(e.step) + ".acwm"), mc, net.parameters(), meta);
    }
  });
  meta.step = c.train_steps;
  meta.final_loss = entries.empty() ? 0.0 : entries.back().loss;
  model::save_checkpoint(dir / "checkpoint.acwm", mc, net.parameters(), meta);
  ctx.out << "train: " << c.train_steps << " steps on " << data.size() << " episodes, final loss " << meta.final_loss
          << ", checkpoint " << (dir / "checkpoint.acwm").string() << '\n';
  return kExitOk;
}

int cmd_eval(Context& ctx) {
  RunConfig& c = ctx.c;
  const auto m = open_dataset(ctx);
  auto lm = open_checkpoint(c, m);
  const auto report = metrics::evaluate_model(lm.net, lm.video, m, eval_options(c), lm.checkpoint.id);
  const std::string leaf = c.actions == "shuffled" ? c.split + "_shuffled" : c.split;
  const fs::path dir = prepare_output(c, output_root() / "eval" / c.env / leaf);
  DirLock lock(dir);
  write_config(dir, c);
  metrics::write_report_csv(report, dir / "report.csv");
  metrics::write_report_json(report, dir / "report.json");
  ctx.out << "eval: " << report.episodes.size() << " episodes, " << c.sampler_steps << " steps, actions=" << c.actions
          << ": " << summary(report.mean) << '\n';
  return kExitOk;
}

int cmd_sweep(Context& ctx) {
  RunConfig& c = ctx.c;
  const auto m = open_dataset(ctx);
  auto lm = open_checkpoint(c, m);
  const fs::path dir = prepare_output(c, output_root() / "sweep" / c.env / c.split);
  c.sweep_dir = dir.string();
  DirLock lock(dir);
  write_config(dir, c);
  std::ofstream table(dir / "sweep.csv");
  if (!table) throw IoError("cannot write '" + (dir / "sweep.csv").string() + "'");
  table << "steps,mse,mse_x1e3,mmse,mmse_x1e3,ssim,psnr\n" << std::setprecision(10);
  auto opts = eval_options(c);
  std::optional<metrics::EpisodeMetrics> prev;
  for (int n : c.sweep_steps) {
    opts.n_steps = n;
    const auto r = metrics::evaluate_model(lm.net, lm.video, m, opts, lm.checkpoint.id);
    const std::string stem = "report_steps_" + std::to_string(n);
    metrics::write_report_csv(r, dir / (stem + ".csv"));
    metrics::write_report_json(r, dir / (stem + ".json"));
    const auto& a = r.mean;
    table << n << ',' << a.mse << ',' << a.mse * 1e3 << ',' << a.mmse << ',' << a.mmse * 1e3 << ',' << a.ssim << ','
          << a.psnr << '\n';
    ctx.out << "sweep: steps=" << n << ' ' << summary(a);
    if (prev) {
      ctx.out << std::setprecision(4) << " delta_psnr=" << a.psnr - prev->psnr
              << " delta_mse_x1e3=" << (a.mse - prev->mse) * 1e3;
    }
    ctx.out << '\n';
    prev = a;
  }
  return kExitOk;
}

int cmd_rollout(Context& ctx) {
  RunConfig& c = ctx.c;
  const auto m = open_dataset(ctx);
  auto lm = open_checkpoint(c, m);
  if (static_cast<std::size_t>(c.episode_index) >= m.entries.size()) {
    throw UsageError("--episode " + std::to_string(c.episode_index) + " is out of range (dataset has " +
                     std::to_string(m.entries.size()) + " episodes)");
  }
  dataset::Episode ep;
  if (c.windows == 1) {
    ep = dataset::read_episode(m.episode_path(static_cast<std::size_t>(c.episode_index)));
  } else {
    // Longer ground truth comes from re-simulating the same seed.
    auto spec = dataset::default_split(m.env, m.split, static_cast<int>(m.entries.size()));
    spec.base_seed = m.base_seed;
    spec.height = m.height;
    spec.width = m.width;
    spec.temporal_factor = m.temporal_factor;
    spec.latent_steps = c.windows * (m.latent_steps - 1) + 1;
    ep = dataset::make_episode(spec, c.episode_index);
  }
  const auto pred = flow::rollout_autoregressive(lm.net, lm.video, ep.frame(0), ep.actions, c.windows, c.sampler_steps,
                                                 eval_options(c).schedule, c.seed);
  const int frames = ep.frame_count, h = m.height, w = m.width;
  const fs::path dir = prepare_output(c, output_root() / "rollout" / c.env / c.split);
  DirLock lock(dir);
  write_config(dir, c);

  // Two rows separated by a white line: ground truth above, prediction below.
  const int gw = frames * w + (frames - 1), gh = 2 * h + 1;
  std::vector<float> grid(static_cast<std::size_t>(gh) * gw * 3, 1.0f);
  for (int row = 0; row < 2; ++row) {
    const auto& src = row == 0 ? ep.frames : pred;
    for (int t = 0; t < frames; ++t)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int ch = 0; ch < 3; ++ch) {
            const std::size_t dst = ((static_cast<std::size_t>(row * (h + 1) + y) * gw) + t * (w + 1) + x) * 3 + ch;
            grid[dst] = src[((static_cast<std::size_t>(t) * h + y) * w + x) * 3 + ch];
          }
  }
  const std::string stem = "rollout_ep" + std::to_string(c.episode_index);
  write_ppm(dir / (stem + ".ppm"), grid, gh, gw);

  const metrics::VideoRef gt{ep.frames, frames, h, w}, pr{pred, frames, h, w};
  const double mse = metrics::compute_mse(gt, pr, 1);
  json j{{"episode", c.episode_index}, {"windows", c.windows},       {"frames", frames},
         {"mse", mse},                 {"psnr", metrics::psnr_from_mse(mse)}, {"checkpoint", lm.checkpoint.id}};
  std::ofstream(dir / (stem + ".json")) << j.dump(2) << '\n';
  ctx.out << "rollout: " << frames << " frames (" << c.windows << " windows), psnr=" << metrics::psnr_from_mse(mse)
          << ", grid " << (dir / (stem + ".ppm")).string() << '\n';
  return kExitOk;
}

std::vector<std::vector<double>> read_numeric_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream s(line);
    std::string cell;
    while (std::getline(s, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_plot(Context& ctx) {
  RunConfig& c = ctx.c;
  if (c.sweep_dir.empty()) c.sweep_dir = (output_root() / "sweep" / c.env / c.split).string();
  if (c.train_dir.empty()) c.train_dir = (output_root() / "train" / c.env).string();
  const fs::path sweep = fs::path(c.sweep_dir) / "sweep.csv", loss = fs::path(c.train_dir) / "loss.jsonl";
  const bool have_sweep = fs::exists(sweep), have_loss = fs::exists(loss);
  if (!have_sweep && !have_loss) {
    throw UsageError("nothing to plot: neither '" + sweep.string() + "' nor '" + loss.string() + "' exists");
  }
  const fs::path dir = prepare_output(c, output_root() / "plot" / c.env);
  DirLock lock(dir);
  write_config(dir, c);
  int charts = 0;
  if (have_sweep) {
    const auto rows = read_numeric_csv(sweep);
    std::ofstream csv(dir / "metrics_vs_steps.csv");
    csv << "steps,mse_x1e3,mmse_x1e3,ssim,psnr\n" << std::setprecision(10);
    Series mse{"MSE x1e3", {}, {}}, mmse{"M-MSE x1e3", {}, {}}, ssim{"SSIM", {}, {}}, psnr{"PSNR", {}, {}};
    for (const auto& r : rows) {
      if (r.size() != 7) throw IoError("malformed row in '" + sweep.string() + "'");
      csv << r[0] << ',' << r[2] << ',' << r[4] << ',' << r[5] << ',' << r[6] << '\n';
      for (auto* s : {&mse, &mmse, &ssim, &psnr}) s->x.push_back(r[0]);
      mse.y.push_back(r[2]);
      mmse.y.push_back(r[4]);
      ssim.y.push_back(r[5]);
      psnr.y.push_back(r[6]);
    }
    write_line_chart(dir / "mse_vs_steps.svg", "MSE vs sampler steps", "sampler steps", "MSE x1e3", {mse}, true);
    write_line_chart(dir / "mmse_vs_steps.svg", "M-MSE vs sampler steps", "sampler steps", "M-MSE x1e3", {mmse}, true);
    write_line_chart(dir / "ssim_vs_steps.svg", "SSIM vs sampler steps", "sampler steps", "SSIM", {ssim}, true);
    write_line_chart(dir / "psnr_vs_steps.svg", "PSNR vs sampler steps", "sampler steps", "PSNR (dB)", {psnr}, true);
    charts += 4;
  }
  if (have_loss) {
    std::ifstream in(loss);
    std::ofstream csv(dir / "loss_vs_step.csv");
    csv << "step,loss,grad_norm\n" << std::setprecision(10);
    Series s{"loss", {}, {}};
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line);
      const double step = j.at("step").get<double>(), l = j.at("loss").get<double>();
      csv << j.at("step").get<std::int64_t>() << ',' << l << ',' << j.at("grad_norm").get<double>() << '\n';
      s.x.push_back(step);
      s.y.push_back(l);
    }
    write_line_chart(dir / "loss_vs_step.svg", "Training loss", "step", "loss", {s});
    charts += 1;
  }
  ctx.out << "plot: " << charts << " charts in " << dir.string() << '\n';
  return kExitOk;
}

std::string find_config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file argument");
      return args[i + 1];
    }
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return "";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{RunConfig{}, {}, out};
  RunConfig& c = ctx.c;
  std::string config_subcommand;
  try {
    const std::string config_path = find_config_path(args);
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw UsageError("cannot read config file '" + config_path + "'");
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw UsageError("config file '" + config_path + "' is not valid JSON: " + e.what());
      }
      c = from_json(j, c);
      for (const auto& [key, value] : j.items()) {
        // Derived settings recorded by an earlier run do not count as user intent.
        if (key != "subcommand") ctx.given.insert(key);
      }
      config_subcommand = c.subcommand;
    }
  } catch (const UsageError& e) {
    err << "acwm: error: " << e.what() << '\n';
    return kExitUsage;
  }

  CLI::App app{"Action-conditioned world model lab: datasets, training, evaluation and rollouts."};
  app.name("acwm");
  app.require_subcommand(1);
  std::string config_file;
  std::vector<std::pair<CLI::Option*, std::string>> bound;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "JSON config file; flags override its values");
    bound.emplace_back(sub->add_option("--out", c.output_dir, "Output directory"), "output_dir");
  };
  auto opt = [&](CLI::App* sub, const std::string& flag, const std::string& key, auto& var, const std::string& help) {
    auto* o = sub->add_option(flag, var, help)->capture_default_str();
    bound.emplace_back(o, key);
    return o;
  };
  auto data_opts = [&](CLI::App* sub) {
    opt(sub, "--env", "env", c.env, "Environment: push_cube, push_rope, push_sand or reacher");
    opt(sub, "--split", "split", c.split, "Split: train, ind_test or ood_test");
    opt(sub, "--data", "data_dir", c.data_dir, "Dataset directory (default: <root>/data/<env>/<split>)");
  };
  auto eval_opts = [&](CLI::App* sub) {
    opt(sub, "--checkpoint", "checkpoint", c.checkpoint, "Checkpoint file (default: <root>/train/<env>/checkpoint.acwm)");
    opt(sub, "--shift", "shift", c.shift, "Timestep shift s");
    opt(sub, "--seed", "seed", c.seed, "Sampler seed");
    opt(sub, "--max-episodes", "max_episodes", c.max_episodes, "Evaluate only the first N episodes (0: all)");
    opt(sub, "--threads", "threads", c.threads, "Worker threads");
  };

  auto* gen = app.add_subcommand("gen", "Generate a dataset split");
  common(gen);
  opt(gen, "--env", "env", c.env, "Environment: push_cube, push_rope, push_sand or reacher");
  opt(gen, "--split", "split", c.split, "Split: train, ind_test or ood_test");
  opt(gen, "-n,--episodes", "episodes", c.episodes, "Episode count");
  opt(gen, "--data-fraction", "data_fraction", c.data_fraction, "Generate the first ceil(fraction * n) seeds");
  opt(gen, "--data-seed", "data_seed", c.data_seed, "Base seed (negative: the split default)");
  opt(gen, "--height", "height", c.height, "Frame height");
  opt(gen, "--width", "width", c.width, "Frame width");
  opt(gen, "--latent-steps", "latent_steps", c.latent_steps, "Latent steps T_l per episode");
  opt(gen, "--temporal-factor", "temporal_factor", c.temporal_factor, "Pixel frames per latent step r");

  auto* train = app.add_subcommand("train", "Train a world model on a train split");
  common(train);
  data_opts(train);
  opt(train, "--preset", "preset", c.preset, "Model preset: tiny or dit-s");
  opt(train, "--hidden", "hidden", c.hidden, "Override the hidden width (0: preset)");
  opt(train, "--layers", "layers", c.layers, "Override the block count (-1: preset)");
  opt(train, "--heads", "heads", c.heads, "Override the head count (0: preset)");
  opt(train, "--patch", "patch", c.patch, "Override the spatial patch size (0: preset)");
  opt(train, "--conditioning", "conditioning", c.conditioning, "Override the conditioning: adaln or cross_attention");
  opt(train, "--spatial-factor", "spatial_factor", c.spatial_factor, "Codec spatial factor f");
  opt(train, "--seed", "seed", c.seed, "Initialization and batch seed");
  opt(train, "--steps", "train_steps", c.train_steps, "Optimizer steps");
  opt(train, "--batch", "batch", c.batch, "Batch size");
  opt(train, "--lr", "lr", c.lr, "Learning rate");
  opt(train, "--clip-norm", "clip_norm", c.clip_norm, "Global gradient-norm clip (<= 0 disables)");
  opt(train, "--warmup", "warmup_steps", c.warmup_steps, "Linear learning-rate warmup steps");
  opt(train, "--shift", "shift", c.shift, "Timestep shift s");
  opt(train, "--log-every", "log_every", c.log_every, "Loss log interval");
  opt(train, "--save-every", "save_every", c.save_every, "Intermediate checkpoint interval (0: final only)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  common(eval);
  data_opts(eval);
  eval_opts(eval);
  opt(eval, "--sampler-steps", "sampler_steps", c.sampler_steps, "Euler sampler steps");
  opt(eval, "--actions", "actions", c.actions, "Action conditioning: true or shuffled");

  auto* rollout = app.add_subcommand("rollout", "Roll out one episode and write a GT/Pred frame grid");
  common(rollout);
  data_opts(rollout);
  opt(rollout, "--checkpoint", "checkpoint", c.checkpoint, "Checkpoint file");
  opt(rollout, "--episode", "episode_index", c.episode_index, "Episode index in the manifest");
  opt(rollout, "--windows", "windows", c.windows, "Autoregressive windows");
  opt(rollout, "--sampler-steps", "sampler_steps", c.sampler_steps, "Euler sampler steps");
  opt(rollout, "--shift", "shift", c.shift, "Timestep shift s");
  opt(rollout, "--seed", "seed", c.seed, "Sampler seed");

  auto* sweep = app.add_subcommand("sweep", "Evaluate a checkpoint across sampler step counts");
  common(sweep);
  data_opts(sweep);
  eval_opts(sweep);
  opt(sweep, "--steps", "sweep_steps", c.sweep_steps, "Comma-separated sampler step counts")->delimiter(',');
  opt(sweep, "--actions", "actions", c.actions, "Action conditioning: true or shuffled");

  auto* plot = app.add_subcommand("plot", "Write CSV and SVG charts of a sweep and a loss log");
  common(plot);
  opt(plot, "--env", "env", c.env, "Environment used for default input directories");
  opt(plot, "--split", "split", c.split, "Split used for the default sweep directory");
  opt(plot, "--sweep-dir", "sweep_dir", c.sweep_dir, "Directory holding sweep.csv");
  opt(plot, "--train-dir", "train_dir", c.train_dir, "Directory holding loss.jsonl");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    err << "acwm: error: " << e.what() << '\n';
    return kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  for (const auto& [o, key] : bound) {
    if (o->count() > 0) ctx.given.insert(key);
  }
  try {
    if (!config_subcommand.empty() && config_subcommand != name) {
      throw UsageError("config file is for '" + config_subcommand + "', not '" + name + "'");
    }
    c.subcommand = name;
    if (c.split.empty()) c.split = (name == "gen" || name == "train") ? "train" : "ind_test";
    validate(c);
    if (name == "gen") return cmd_gen(ctx);
    if (name == "train") return cmd_train(ctx);
    if (name == "eval") return cmd_eval(ctx);
    if (name == "rollout") return cmd_rollout(ctx);
    if (name == "sweep") return cmd_sweep(ctx);
    return cmd_plot(ctx);
  } catch (const UsageError& e) {
    err << "acwm: error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "acwm: error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace acwm::cli
