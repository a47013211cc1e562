// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "acwm/core/error.hpp"

namespace acwm {

/// Integer token coordinates for rotary embedding: `axes` values per token.
struct RopePositions {
  int axes = 1;
  std::vector<int> coords;  // count() * axes, row-major

  int count() const { return axes == 0 ? 0 : static_cast<int>(coords.size()) / axes; }
  const int* at(int token) const { return coords.data() + static_cast<std::size_t>(token) * axes; }

  static RopePositions linear(int n) {
    RopePositions p{1, {}};
    p.coords.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p.coords[static_cast<std::size_t>(i)] = i;
    return p;
  }
  static RopePositions grid(int rows, int cols) {
    RopePositions p{2, {}};
    p.coords.reserve(static_cast<std::size_t>(rows) * cols * 2);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        p.coords.push_back(r);
        p.coords.push_back(c);
      }
    return p;
  }
};

/// Precomputed rotary tables. With one axis the whole head dimension rotates
/// by the 1D position; with two axes the first half follows the row index and
/// the second half the column index. Adjacent dimension pairs (2j, 2j+1)
/// rotate together with frequency base^(-2j / axis_dim).
class RopeTable {
 public:
  RopeTable(int head_dim, int axes, int max_positions, double base = 10000.0)
      : head_dim_(head_dim), axes_(axes), max_positions_(max_positions), base_(base) {
    if (axes != 1 && axes != 2) throw DomainError("rope supports 1 or 2 axes, got " + std::to_string(axes));
    if (head_dim <= 0 || head_dim % (2 * axes) != 0) {
      throw DomainError("rope head dim " + std::to_string(head_dim) + " must be divisible by " +
                        std::to_string(2 * axes) + " for " + std::to_string(axes) + " axes");
    }
    axis_dim_ = head_dim / axes;
    const int pairs = axis_dim_ / 2;
    cos_.resize(static_cast<std::size_t>(max_positions) * pairs);
    sin_.resize(cos_.size());
    for (int p = 0; p < max_positions; ++p) {
      for (int j = 0; j < pairs; ++j) {
        const double freq = std::pow(base, -2.0 * j / axis_dim_);
        cos_[static_cast<std::size_t>(p) * pairs + j] = std::cos(p * freq);
        sin_[static_cast<std::size_t>(p) * pairs + j] = std::sin(p * freq);
      }
    }
  }

  int head_dim() const { return head_dim_; }
  int axes() const { return axes_; }
  int max_positions() const { return max_positions_; }
  double base() const { return base_; }

  /// Rotates one head vector in place; `inverse` applies the transpose.
  template <class T>
  void apply(std::span<T> vec, const int* pos, bool inverse = false) const {
    const int pairs = axis_dim_ / 2;
    for (int a = 0; a < axes_; ++a) {
      const int p = pos[a];
      if (p < 0 || p >= max_positions_) {
        throw DomainError("rope position " + std::to_string(p) + " outside table of " +
                          std::to_string(max_positions_));
      }
      const double* c = cos_.data() + static_cast<std::size_t>(p) * pairs;
      const double* s = sin_.data() + static_cast<std::size_t>(p) * pairs;
      T* v = vec.data() + a * axis_dim_;
      for (int j = 0; j < pairs; ++j) {
        const T cj = static_cast<T>(c[j]);
        const T sj = inverse ? static_cast<T>(-s[j]) : static_cast<T>(s[j]);
        const T x0 = v[2 * j];
        const T x1 = v[2 * j + 1];
        v[2 * j] = x0 * cj - x1 * sj;
        v[2 * j + 1] = x0 * sj + x1 * cj;
      }
    }
  }

 private:
  int head_dim_;
  int axes_;
  int max_positions_;
  double base_;
  int axis_dim_ = 0;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

}  // namespace acwm
