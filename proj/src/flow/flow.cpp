// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "acwm/flow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "acwm/core/error.hpp"
#include "acwm/core/ops.hpp"

namespace acwm::flow {

int FlowSchedule::level_of(double tau) const {
  const double l = std::round((1.0 - tau) * (levels - 1));
  return std::clamp(static_cast<int>(l), 0, levels - 1);
}

void FlowSchedule::validate() const {
  if (levels < 2) throw DomainError("flow schedule needs at least 2 levels");
  if (!(shift > 0.0)) throw DomainError("flow shift must be positive, got " + std::to_string(shift));
  if (!(envelope_width > 0.0)) throw DomainError("loss envelope width must be positive");
  if (inference_steps < 1) throw DomainError("inference step count must be at least 1");
}

double shift_time(double u, double s) {
  if (!(u >= 0.0 && u <= 1.0)) throw DomainError("shift_time: u = " + std::to_string(u) + " outside [0, 1]");
  if (!(s > 0.0)) throw DomainError("shift_time: shift must be positive, got " + std::to_string(s));
  return s * u / (1.0 + (s - 1.0) * u);
}

double flow_time(double u, double s) { return 1.0 - shift_time(1.0 - u, s); }

double loss_weight(int level, const FlowSchedule& schedule) {
  const double d = level - schedule.envelope_center;
  return std::exp(-d * d / (2.0 * schedule.envelope_width * schedule.envelope_width));
}

template <class T>
Interpolation<T> interpolate(std::span<const T> z0, std::span<const T> z1, double tau) {
  if (z0.size() != z1.size()) {
    throw ShapeError("interpolate: noise has " + std::to_string(z0.size()) + " values, data has " +
                     std::to_string(z1.size()));
  }
  Interpolation<T> out;
  out.z_tau.resize(z0.size());
  out.target.resize(z0.size());
  const T a = static_cast<T>(FlowSchedule::alpha(tau)), b = static_cast<T>(FlowSchedule::beta(tau));
  for (std::size_t i = 0; i < z0.size(); ++i) {
    out.z_tau[i] = a * z0[i] + b * z1[i];
    out.target[i] = z1[i] - z0[i];
  }
  return out;
}

template <class T>
Predictor<T> model_predictor(const model::WorldModel<T>& model, const model::Binding<T>& binding) {
  return [&model, &binding](const Tensor<T>& z, std::span<const int> levels, const Tensor<T>& actions) {
    return model.predict(binding, z, levels, actions);
  };
}

namespace {

void check_context(int context_steps, int steps) {
  if (context_steps < 0 || context_steps > steps) {
    throw DomainError("context steps " + std::to_string(context_steps) + " outside [0, " + std::to_string(steps) + "]");
  }
}

// Draws (tau, level, weight) for one sample.
void draw_time(const FlowSchedule& s, std::mt19937_64& rng, double& tau, int& level, double& weight) {
  if (s.envelope_mode == EnvelopeMode::loss_weight) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    tau = flow_time(uniform(rng), s.shift);
    level = s.level_of(tau);
    weight = loss_weight(level, s);
    return;
  }
  std::normal_distribution<double> normal(s.envelope_center, s.envelope_width);
  do {
    level = static_cast<int>(std::lround(normal(rng)));
  } while (level < 0 || level >= s.levels);
  tau = 1.0 - static_cast<double>(level) / (s.levels - 1);
  weight = 1.0;
}

}  // namespace

template <class T>
Tensor<T> training_loss(const Predictor<T>& predictor, const LossBatch<T>& batch, const FlowSchedule& schedule,
                        std::mt19937_64& rng, int context_steps, LossDraw<T>* draw, const std::vector<T>* noise) {
  schedule.validate();
  const LatentShape& sh = batch.shape;
  check_context(context_steps, sh.steps);
  if (context_steps == sh.steps) throw DomainError("training_loss: every step is context, nothing to predict");
  if (batch.data.size() != sh.total()) {
    throw ShapeError("training_loss: " + std::to_string(batch.data.size()) + " data values for latent " +
                     shape_str(sh.shape()));
  }
  if (noise && noise->size() != sh.total()) throw ShapeError("training_loss: fixed noise has the wrong size");

  const std::size_t step = sh.step_size(), per = sh.sample_size();
  const std::size_t ctx = step * static_cast<std::size_t>(context_steps);
  std::vector<T> z_tau(sh.total()), target(sh.total(), T(0)), mask(sh.total(), T(0));
  std::vector<int> levels(static_cast<std::size_t>(sh.batch) * sh.steps, 0);
  LossDraw<T> local;
  LossDraw<T>& d = draw ? *draw : local;
  d.tau.assign(static_cast<std::size_t>(sh.batch), 0.0);
  d.weights.assign(static_cast<std::size_t>(sh.batch), 0.0);
  d.noise.assign(sh.total(), T(0));

  for (int b = 0; b < sh.batch; ++b) {
    std::mt19937_64 sub(rng());
    double tau = 0.0, weight = 0.0;
    int level = 0;
    draw_time(schedule, sub, tau, level, weight);
    d.tau[static_cast<std::size_t>(b)] = tau;
    d.weights[static_cast<std::size_t>(b)] = weight;
    std::normal_distribution<double> normal(0.0, 1.0);
    const T m = static_cast<T>(weight / (static_cast<double>(sh.batch) * static_cast<double>(per - ctx)));
    const std::size_t base = static_cast<std::size_t>(b) * per;
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t k = base + i;
      const T z1 = batch.data[k];
      if (i < ctx) {
        z_tau[k] = z1;
        continue;
      }
      const T z0 = noise ? (*noise)[k] : static_cast<T>(normal(sub));
      d.noise[k] = z0;
      z_tau[k] = static_cast<T>(FlowSchedule::alpha(tau)) * z0 + static_cast<T>(FlowSchedule::beta(tau)) * z1;
      target[k] = z1 - z0;
      mask[k] = m;
    }
    for (int t = context_steps; t < sh.steps; ++t) levels[static_cast<std::size_t>(b) * sh.steps + t] = level;
  }
  d.levels = levels;

  auto z = Tensor<T>::constant(sh.shape(), std::move(z_tau));
  auto actions = Tensor<T>::constant(batch.action_shape, batch.actions);
  auto pred = predictor(z, levels, actions);
  if (pred.shape() != sh.shape()) {
    throw ShapeError("training_loss: prediction " + shape_str(pred.shape()) + " does not match latent " +
                     shape_str(sh.shape()));
  }
  auto diff = sub(pred, Tensor<T>::constant(sh.shape(), std::move(target)));
  auto loss = sum(mul(square(diff), Tensor<T>::constant(sh.shape(), std::move(mask))));
  if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("training loss is not finite");
  return loss;
}

template <class T>
std::vector<T> euler_sample(const VelocityField<T>& field, const LatentShape& shape, std::vector<T> z,
                            std::span<const T> clean, int context_steps, int n_steps, const FlowSchedule& schedule) {
  schedule.validate();
  check_context(context_steps, shape.steps);
  if (n_steps < 1) throw DomainError("sampler needs at least one step, got " + std::to_string(n_steps));
  if (z.size() != shape.total()) throw ShapeError("euler_sample: initial state has the wrong size");
  if (context_steps > 0 && clean.size() != shape.total()) throw ShapeError("euler_sample: clean latent has the wrong size");
  const std::size_t per = shape.sample_size(), ctx = shape.step_size() * static_cast<std::size_t>(context_steps);
  auto clamp_context = [&] {
    for (int b = 0; b < shape.batch; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * per;
      std::copy_n(clean.data() + base, ctx, z.data() + base);
    }
  };
  std::vector<int> levels(static_cast<std::size_t>(shape.batch) * shape.steps, 0);
  clamp_context();
  for (int k = 0; k < n_steps; ++k) {
    const double t0 = flow_time(static_cast<double>(k) / n_steps, schedule.shift);
    const double t1 = flow_time(static_cast<double>(k + 1) / n_steps, schedule.shift);
    const int level = schedule.level_of(t0);
    for (int b = 0; b < shape.batch; ++b)
      for (int t = 0; t < shape.steps; ++t) levels[static_cast<std::size_t>(b) * shape.steps + t] = t < context_steps ? 0 : level;
    const std::vector<T> v = field(z, t0, levels);
    if (v.size() != z.size()) throw ShapeError("euler_sample: velocity field returned the wrong size");
    const T dt = static_cast<T>(t1 - t0);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += dt * v[i];
    clamp_context();
  }
  return z;
}

template <class T>
std::vector<T> sample(const model::WorldModel<T>& model, const LatentShape& shape, std::span<const T> clean,
                      std::span<const T> actions, int n_steps, const FlowSchedule& schedule, std::uint64_t seed,
                      int context_steps) {
  const auto& cfg = model.config();
  const std::int64_t L = cfg.action_frames();
  if (actions.size() != static_cast<std::size_t>(shape.batch * L * cfg.action_dim)) {
    throw ShapeError("sample: expected " + std::to_string(shape.batch * L * cfg.action_dim) + " action values, got " +
                     std::to_string(actions.size()));
  }
  std::vector<T> z(shape.total());
  std::mt19937_64 seeds(seed);
  for (int b = 0; b < shape.batch; ++b) {
    std::mt19937_64 rng(seeds());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < shape.sample_size(); ++i) z[b * shape.sample_size() + i] = static_cast<T>(normal(rng));
  }
  const auto binding = model.bind(false);
  const auto a = Tensor<T>::constant({shape.batch, L, cfg.action_dim}, std::vector<T>(actions.begin(), actions.end()));
  VelocityField<T> field = [&](const std::vector<T>& zt, double, std::span<const int> levels) {
    auto v = model.predict(binding, Tensor<T>::constant(shape.shape(), zt), levels, a);
    return std::vector<T>(v.values().begin(), v.values().end());
  };
  return euler_sample<T>(field, shape, std::move(z), clean, context_steps, n_steps, schedule);
}

std::vector<float> predict_window(const model::WorldModel<float>& model, const VideoSpec& video,
                                  std::span<const float> first_frame, std::span<const float> actions, int n_steps,
                                  const FlowSchedule& schedule, std::uint64_t seed) {
  const auto& cfg = model.config();
  const int frames = cfg.action_frames();
  const std::size_t fsize = static_cast<std::size_t>(video.height) * video.width * 3;
  if (first_frame.size() != fsize) throw ShapeError("predict_window: context frame does not match the video size");
  std::vector<float> pixels(fsize * frames, 0.0f);
  std::copy(first_frame.begin(), first_frame.end(), pixels.begin());
  auto z = codec::encode(pixels, frames, video.height, video.width, video.spatial_factor, cfg.temporal_factor);
  if (z.rows != cfg.latent_rows || z.cols != cfg.latent_cols || z.channels != cfg.latent_channels ||
      z.steps != cfg.latent_steps) {
    throw ShapeError("predict_window: codec output (" + std::to_string(z.steps) + ", " + std::to_string(z.rows) + ", " +
                     std::to_string(z.cols) + ", " + std::to_string(z.channels) + ") does not match the model config");
  }
  video.normalizer.normalize(z);
  const LatentShape shape{1, z.steps, z.rows, z.cols, z.channels};
  z.tokens = sample<float>(model, shape, z.tokens, actions, n_steps, schedule, seed);
  video.normalizer.denormalize(z);
  auto out = codec::decode(z);
  for (auto& v : out) v = std::clamp(v, 0.0f, 1.0f);
  std::copy(first_frame.begin(), first_frame.end(), out.begin());
  return out;
}

std::vector<float> rollout_autoregressive(const model::WorldModel<float>& model, const VideoSpec& video,
                                          std::span<const float> first_frame, std::span<const float> actions,
                                          int windows, int n_steps, const FlowSchedule& schedule, std::uint64_t seed) {
  if (windows < 1) throw DomainError("rollout needs at least one window");
  const auto& cfg = model.config();
  const int frames = cfg.action_frames();
  const std::size_t da = static_cast<std::size_t>(cfg.action_dim);
  const std::size_t need = static_cast<std::size_t>(windows) * (frames - 1) + 1;
  if (actions.size() < need * da) {
    throw DomainError("rollout of " + std::to_string(windows) + " windows needs " + std::to_string(need) +
                      " actions, got " + std::to_string(actions.size() / da));
  }
  const std::size_t fsize = static_cast<std::size_t>(video.height) * video.width * 3;
  std::vector<float> out;
  out.reserve(need * fsize);
  std::vector<float> context(first_frame.begin(), first_frame.end());
  for (int w = 0; w < windows; ++w) {
    const std::size_t start = static_cast<std::size_t>(w) * (frames - 1) * da;
    std::vector<float> a(actions.begin() + static_cast<std::ptrdiff_t>(start),
                         actions.begin() + static_cast<std::ptrdiff_t>(start + frames * da));
    std::fill_n(a.begin(), da, 0.0f);
    const auto win = predict_window(model, video, context, a, n_steps, schedule, seed + static_cast<std::uint64_t>(w));
    out.insert(out.end(), win.begin() + (w == 0 ? 0 : static_cast<std::ptrdiff_t>(fsize)), win.end());
    context.assign(win.end() - static_cast<std::ptrdiff_t>(fsize), win.end());
  }
  return out;
}

template Interpolation<float> interpolate<float>(std::span<const float>, std::span<const float>, double);
template Interpolation<double> interpolate<double>(std::span<const double>, std::span<const double>, double);
template Predictor<float> model_predictor<float>(const model::WorldModel<float>&, const model::Binding<float>&);
template Predictor<double> model_predictor<double>(const model::WorldModel<double>&, const model::Binding<double>&);
template Tensor<float> training_loss<float>(const Predictor<float>&, const LossBatch<float>&, const FlowSchedule&,
                                            std::mt19937_64&, int, LossDraw<float>*, const std::vector<float>*);
template Tensor<double> training_loss<double>(const Predictor<double>&, const LossBatch<double>&, const FlowSchedule&,
                                              std::mt19937_64&, int, LossDraw<double>*, const std::vector<double>*);
template std::vector<float> euler_sample<float>(const VelocityField<float>&, const LatentShape&, std::vector<float>,
                                                std::span<const float>, int, int, const FlowSchedule&);
template std::vector<double> euler_sample<double>(const VelocityField<double>&, const LatentShape&, std::vector<double>,
                                                  std::span<const double>, int, int, const FlowSchedule&);
template std::vector<float> sample<float>(const model::WorldModel<float>&, const LatentShape&, std::span<const float>,
                                          std::span<const float>, int, const FlowSchedule&, std::uint64_t, int);
template std::vector<double> sample<double>(const model::WorldModel<double>&, const LatentShape&,
                                            std::span<const double>, std::span<const double>, int,
                                            const FlowSchedule&, std::uint64_t, int);

}  // namespace acwm::flow
