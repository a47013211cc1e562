// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "acwm/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "acwm/core/error.hpp"

namespace acwm::metrics {

namespace {

void check_pair(const VideoRef& gt, const VideoRef& pred, int first_frame) {
  if (gt.frames != pred.frames || gt.height != pred.height || gt.width != pred.width) {
    throw ShapeError("metric inputs differ in shape: (" + std::to_string(gt.frames) + ", " + std::to_string(gt.height) +
                     ", " + std::to_string(gt.width) + ") vs (" + std::to_string(pred.frames) + ", " +
                     std::to_string(pred.height) + ", " + std::to_string(pred.width) + ")");
  }
  if (gt.data.size() != gt.frame_size() * gt.frames || pred.data.size() != pred.frame_size() * pred.frames) {
    throw ShapeError("metric input buffer does not match its declared shape");
  }
  if (first_frame < 0 || first_frame >= gt.frames) {
    throw DomainError("first scored frame " + std::to_string(first_frame) + " outside a " +
                      std::to_string(gt.frames) + "-frame video");
  }
}

std::vector<double> gaussian_window() {
  std::vector<double> g(kSsimWindow);
  const int half = kSsimWindow / 2;
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    g[i] = std::exp(-static_cast<double>((i - half) * (i - half)) / (2.0 * kSsimSigma * kSsimSigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Valid-region separable filtering: (H, W) -> (H - 10, W - 10).
std::vector<double> filter_valid(const std::vector<double>& x, int height, int width, const std::vector<double>& g) {
  const int k = kSsimWindow, oh = height - k + 1, ow = width - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(height) * ow);
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += g[t] * x[static_cast<std::size_t>(i) * width + j + t];
      rows[static_cast<std::size_t>(i) * ow + j] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += g[t] * rows[static_cast<std::size_t>(i + t) * ow + j];
      out[static_cast<std::size_t>(i) * ow + j] = s;
    }
  return out;
}

std::vector<double> grayscale(const VideoRef& v, int t) {
  const std::size_t n = static_cast<std::size_t>(v.height) * v.width;
  std::vector<double> g(n);
  const float* f = v.data.data() + v.frame_size() * t;
  for (std::size_t i = 0; i < n; ++i) g[i] = (static_cast<double>(f[3 * i]) + f[3 * i + 1] + f[3 * i + 2]) / 3.0;
  return g;
}

}  // namespace

double compute_mse(const VideoRef& gt, const VideoRef& pred, int first_frame) {
  check_pair(gt, pred, first_frame);
  const std::size_t begin = gt.frame_size() * first_frame;
  double s = 0.0;
  for (std::size_t i = begin; i < gt.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - gt.data[i];
    s += d * d;
  }
  return s / static_cast<double>(gt.data.size() - begin);
}

double psnr_from_mse(double mse, double max_value) {
  if (mse < kPsnrCapMse) return kPsnrCap;
  return 10.0 * std::log10(max_value * max_value / mse);
}

double compute_psnr(const VideoRef& gt, const VideoRef& pred, double max_value, int first_frame) {
  return psnr_from_mse(compute_mse(gt, pred, first_frame), max_value);
}

double ssim_gray(std::span<const double> a, std::span<const double> b, int height, int width, double max_value) {
  if (height < kSsimWindow || width < kSsimWindow) {
    throw ShapeError("SSIM needs frames of at least " + std::to_string(kSsimWindow) + "x" +
                     std::to_string(kSsimWindow) + ", got " + std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (a.size() != n || b.size() != n) throw ShapeError("SSIM frame buffers do not match the frame size");
  static const std::vector<double> g = gaussian_window();
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end()), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, height, width, g), my = filter_valid(y, height, width, g);
  const auto sxx = filter_valid(xx, height, width, g), syy = filter_valid(yy, height, width, g);
  const auto sxy = filter_valid(xy, height, width, g);
  const double c1 = (0.01 * max_value) * (0.01 * max_value), c2 = (0.03 * max_value) * (0.03 * max_value);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

double compute_ssim(const VideoRef& gt, const VideoRef& pred, double max_value, int first_frame) {
  check_pair(gt, pred, first_frame);
  double total = 0.0;
  for (int t = first_frame; t < gt.frames; ++t) {
    total += ssim_gray(grayscale(gt, t), grayscale(pred, t), gt.height, gt.width, max_value);
  }
  return total / (gt.frames - first_frame);
}

MotionWeightMap motion_weights(const VideoRef& gt) {
  if (gt.frames < 2) throw DomainError("motion map needs at least 2 frames, got " + std::to_string(gt.frames));
  if (gt.data.size() != gt.frame_size() * gt.frames) throw ShapeError("video buffer does not match its declared shape");
  MotionWeightMap m;
  m.height = gt.height;
  m.width = gt.width;
  const std::size_t n = static_cast<std::size_t>(gt.height) * gt.width;
  m.motion.assign(n, 0.0);
  const float* first = gt.data.data();
  for (int t = 1; t < gt.frames; ++t) {
    const float* f = gt.data.data() + gt.frame_size() * t;
    for (std::size_t p = 0; p < n; ++p)
      for (int c = 0; c < 3; ++c) {
        m.motion[p] = std::max(m.motion[p], std::abs(static_cast<double>(f[3 * p + c]) - first[3 * p + c]));
      }
  }
  m.weight.resize(n);
  for (std::size_t p = 0; p < n; ++p) m.weight[p] = 0.01 + m.motion[p];
  return m;
}

double compute_mmse(const VideoRef& gt, const VideoRef& pred, int first_frame) {
  if (gt.frames < 2) throw DomainError("M-MSE needs at least 2 frames (motion is undefined for one)");
  check_pair(gt, pred, first_frame);
  const auto m = motion_weights(gt);
  const std::size_t n = m.weight.size();
  double num = 0.0, den = 0.0;
  for (int t = first_frame; t < gt.frames; ++t) {
    const float* g = gt.data.data() + gt.frame_size() * t;
    const float* p = pred.data.data() + pred.frame_size() * t;
    for (std::size_t i = 0; i < n; ++i) {
      double e = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(p[3 * i + c]) - g[3 * i + c];
        e += d * d;
      }
      num += m.weight[i] * e;
      den += 3.0 * m.weight[i];
    }
  }
  return num / den;
}

}  // namespace acwm::metrics
