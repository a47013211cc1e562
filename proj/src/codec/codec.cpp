// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "acwm/codec/codec.hpp"

#include <string>

namespace acwm::codec {

namespace {

void check_factors(int f, int r) {
  if (f < 1 || r < 1) {
    throw DomainError("codec factors must be positive, got f=" + std::to_string(f) + " r=" + std::to_string(r));
  }
}

// Frame index held by (step, slot), or -1 for an empty slot of step 0.
int frame_of(int step, int slot, int r) {
  if (step == 0) return slot == 0 ? 0 : -1;
  return 1 + r * (step - 1) + slot;
}

}  // namespace

int latent_steps_for(int frames, int temporal_factor) {
  check_factors(1, temporal_factor);
  if (frames < 1 || (frames - 1) % temporal_factor != 0) {
    throw ShapeError("frame count " + std::to_string(frames) + " is not of the form 1 + " +
                     std::to_string(temporal_factor) + " (T_l - 1)");
  }
  return 1 + (frames - 1) / temporal_factor;
}

LatentVideo encode(std::span<const float> frames, int frame_count, int height, int width, int f, int r) {
  check_factors(f, r);
  if (height % f != 0 || width % f != 0) {
    throw ShapeError("frame size " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by spatial factor " + std::to_string(f));
  }
  const std::size_t fsize = static_cast<std::size_t>(height) * width * 3;
  if (frames.size() != fsize * frame_count) throw ShapeError("encode: frame buffer does not match the declared shape");
  LatentVideo z;
  z.steps = latent_steps_for(frame_count, r);
  z.rows = height / f;
  z.cols = width / f;
  z.channels = 3 * f * f * r;
  z.spatial_factor = f;
  z.temporal_factor = r;
  z.tokens.assign(z.step_size() * z.steps, 0.0f);
  z.sigma.assign(static_cast<std::size_t>(z.steps), 0.0f);
  for (int t = 0; t < z.steps; ++t)
    for (int slot = 0; slot < r; ++slot) {
      const int src = frame_of(t, slot, r);
      if (src < 0) continue;
      const float* frame = frames.data() + fsize * src;
      for (int i = 0; i < z.rows; ++i)
        for (int j = 0; j < z.cols; ++j) {
          float* tok = z.tokens.data() + ((static_cast<std::size_t>(t) * z.rows + i) * z.cols + j) * z.channels;
          for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx) {
              const float* px = frame + (static_cast<std::size_t>(i * f + dy) * width + (j * f + dx)) * 3;
              float* ch = tok + ((slot * f + dy) * f + dx) * 3;
              ch[0] = px[0];
              ch[1] = px[1];
              ch[2] = px[2];
            }
        }
    }
  return z;
}

std::vector<float> decode(const LatentVideo& z) {
  const int f = z.spatial_factor, r = z.temporal_factor;
  check_factors(f, r);
  if (z.channels != 3 * f * f * r) {
    throw ShapeError("latent has " + std::to_string(z.channels) + " channels, expected 3*f*f*r = " +
                     std::to_string(3 * f * f * r));
  }
  if (z.tokens.size() != z.step_size() * z.steps) throw ShapeError("decode: token buffer does not match its shape");
  const int height = z.rows * f, width = z.cols * f;
  const int frames = 1 + r * (z.steps - 1);
  const std::size_t fsize = static_cast<std::size_t>(height) * width * 3;
  std::vector<float> out(fsize * frames, 0.0f);
  for (int t = 0; t < z.steps; ++t)
    for (int slot = 0; slot < r; ++slot) {
      const int dst = frame_of(t, slot, r);
      if (dst < 0) continue;
      float* frame = out.data() + fsize * dst;
      for (int i = 0; i < z.rows; ++i)
        for (int j = 0; j < z.cols; ++j) {
          const float* tok = z.tokens.data() + ((static_cast<std::size_t>(t) * z.rows + i) * z.cols + j) * z.channels;
          for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx) {
              float* px = frame + (static_cast<std::size_t>(i * f + dy) * width + (j * f + dx)) * 3;
              const float* ch = tok + ((slot * f + dy) * f + dx) * 3;
              px[0] = ch[0];
              px[1] = ch[1];
              px[2] = ch[2];
            }
        }
    }
  return out;
}

namespace {

template <class Fn>
void for_each_used(LatentVideo& z, Fn&& fn) {
  const int block = 3 * z.spatial_factor * z.spatial_factor;  // channels per temporal slot
  const std::size_t sites = static_cast<std::size_t>(z.rows) * z.cols;
  for (int t = 0; t < z.steps; ++t) {
    float* base = z.tokens.data() + t * z.step_size();
    const int used = t == 0 ? block : z.channels;
    for (std::size_t s = 0; s < sites; ++s)
      for (int c = 0; c < used; ++c) fn(base[s * z.channels + c], c % 3);
  }
}

}  // namespace

void Normalizer::normalize(LatentVideo& z) const {
  for_each_used(z, [&](float& v, int rgb) { v = static_cast<float>((v - mean[rgb]) / stddev[rgb]); });
}

void Normalizer::denormalize(LatentVideo& z) const {
  for_each_used(z, [&](float& v, int rgb) { v = static_cast<float>(v * stddev[rgb] + mean[rgb]); });
}

}  // namespace acwm::codec
