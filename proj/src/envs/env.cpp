// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "acwm/envs/env.hpp"

#include <algorithm>
#include <array>
#include <numbers>
#include <string>
#include <unordered_map>

#include "acwm/core/error.hpp"

namespace acwm::envs {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Vec2 unit(double angle) { return {std::cos(angle), std::sin(angle)}; }

void check_finite(const EnvState& s) {
  auto bad = [](const std::vector<Vec2>& v) {
    return std::any_of(v.begin(), v.end(), [](Vec2 p) { return !std::isfinite(p.x) || !std::isfinite(p.y); });
  };
  const bool scalars_ok = std::isfinite(s.q1) && std::isfinite(s.q2) && std::isfinite(s.dq1) &&
                          std::isfinite(s.dq2) && std::isfinite(s.pole.x) && std::isfinite(s.pole.y) &&
                          std::isfinite(s.board.x) && std::isfinite(s.board.y) && std::isfinite(s.board_angle);
  if (!scalars_ok || bad(s.pushers) || bad(s.pusher_velocities) || bad(s.cubes) || bad(s.rope) ||
      bad(s.rope_velocities) || bad(s.sand)) {
    throw NumericError(std::string("simulation diverged in ") + std::string(to_string(s.kind)));
  }
}

void check_action(const EnvState& s, std::span<const double> action) {
  const auto bounds = action_bounds(s.kind, s.params);
  if (action.size() != bounds.dim()) {
    throw DomainError(std::string(to_string(s.kind)) + " expects " + std::to_string(bounds.dim()) +
                      "-D actions, got " + std::to_string(action.size()));
  }
  if (!bounds.contains(action)) throw DomainError(std::string(to_string(s.kind)) + ": action outside bounds");
}

// Pushes an axis-aligned square (center c, half side h) out of a disc.
void separate_square_from_disc(Vec2& c, double h, Vec2 disc, double radius) {
  const Vec2 closest{std::clamp(disc.x, c.x - h, c.x + h), std::clamp(disc.y, c.y - h, c.y + h)};
  const Vec2 d = disc - closest;
  const double dist = d.norm();
  if (dist > 0.0) {
    if (dist < radius) c -= d * ((radius - dist) / dist);
    return;
  }
  // Disc center inside the square: exit through the nearest face.
  const double left = disc.x - (c.x - h), right = (c.x + h) - disc.x;
  const double down = disc.y - (c.y - h), up = (c.y + h) - disc.y;
  const double m = std::min({left, right, down, up});
  if (m == left) c.x += left + radius;
  else if (m == right) c.x -= right + radius;
  else if (m == down) c.y += down + radius;
  else c.y -= up + radius;
}

void separate_squares(Vec2& a, Vec2& b, double h) {
  const Vec2 d = b - a;
  const double ox = 2 * h - std::abs(d.x);
  const double oy = 2 * h - std::abs(d.y);
  if (ox <= 0 || oy <= 0) return;
  if (ox < oy) {
    const double s = (d.x >= 0 ? 0.5 : -0.5) * ox;
    a.x -= s;
    b.x += s;
  } else {
    const double s = (d.y >= 0 ? 0.5 : -0.5) * oy;
    a.y -= s;
    b.y += s;
  }
}

// Closest point on segment [a, b] to p.
Vec2 closest_on_segment(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return a + ab * t;
}

void board_endpoints(const EnvState& s, Vec2& a, Vec2& b) {
  const Vec2 dir = unit(s.board_angle);
  a = s.board - dir * Physics::kBoardHalfLength;
  b = s.board + dir * Physics::kBoardHalfLength;
}

void push_out_of_board(const EnvState& s, std::vector<Vec2>& sand, double radius) {
  Vec2 a, b;
  board_endpoints(s, a, b);
  const double reach = radius + Physics::kBoardHalfThickness;
  const Vec2 normal = unit(s.board_angle + kPi / 2);
  for (auto& p : sand) {
    const Vec2 c = closest_on_segment(p, a, b);
    const Vec2 d = p - c;
    const double dist = d.norm();
    if (dist >= reach) continue;
    if (dist > 1e-12) {
      p += d * ((reach - dist) / dist);
    } else {
      p += normal * reach;
    }
  }
}

// Pairwise disc separation through a uniform hash grid of cell size 2r.
void separate_particles(std::vector<Vec2>& sand, double radius) {
  const double cell = 2 * radius;
  const double min_d = 2 * radius;
  auto key = [](long long i, long long j) { return (i << 32) ^ (j & 0xffffffffLL); };
  std::unordered_map<long long, std::vector<int>> grid;
  grid.reserve(sand.size());
  std::vector<std::pair<long long, long long>> cells(sand.size());
  for (std::size_t n = 0; n < sand.size(); ++n) {
    const long long i = static_cast<long long>(std::floor(sand[n].x / cell));
    const long long j = static_cast<long long>(std::floor(sand[n].y / cell));
    cells[n] = {i, j};
    grid[key(i, j)].push_back(static_cast<int>(n));
  }
  for (std::size_t n = 0; n < sand.size(); ++n) {
    const auto [ci, cj] = cells[n];
    for (long long di = -1; di <= 1; ++di)
      for (long long dj = -1; dj <= 1; ++dj) {
        auto it = grid.find(key(ci + di, cj + dj));
        if (it == grid.end()) continue;
        for (int m : it->second) {
          if (m <= static_cast<int>(n)) continue;
          Vec2 d = sand[static_cast<std::size_t>(m)] - sand[n];
          const double dist = d.norm();
          if (dist >= min_d) continue;
          if (dist < 1e-12) d = {1.0, 0.0};
          const Vec2 dir = dist < 1e-12 ? d : d * (1.0 / dist);
          const double push = 0.5 * (min_d - dist);
          sand[n] -= dir * push;
          sand[static_cast<std::size_t>(m)] += dir * push;
        }
      }
  }
}

}  // namespace

std::string_view to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::push_cube: return "push_cube";
    case EnvKind::push_rope: return "push_rope";
    case EnvKind::push_sand: return "push_sand";
    case EnvKind::reacher: return "reacher";
  }
  return "unknown";
}

EnvKind parse_env_kind(std::string_view name) {
  for (auto k : {EnvKind::push_cube, EnvKind::push_rope, EnvKind::push_sand, EnvKind::reacher}) {
    if (to_string(k) == name) return k;
  }
  throw DomainError("unknown environment '" + std::string(name) + "'");
}

double default_workspace(EnvKind kind) { return kind == EnvKind::push_rope ? 2.0 : 1.0; }

double wrap_angle(double a) {
  if (a > -kPi && a <= kPi) return a;
  a = std::fmod(a + kPi, 2 * kPi);
  if (a <= 0) a += 2 * kPi;
  return a - kPi;
}

bool ActionBounds::contains(std::span<const double> a, double tol) const {
  if (a.size() != lo.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || a[i] < lo[i] - tol || a[i] > hi[i] + tol) return false;
  }
  return true;
}

std::vector<double> ActionBounds::clamp(std::vector<double> a) const {
  for (std::size_t i = 0; i < a.size() && i < lo.size(); ++i) a[i] = std::clamp(a[i], lo[i], hi[i]);
  return a;
}

int action_dim(EnvKind kind, const EnvParams& params) {
  switch (kind) {
    case EnvKind::push_cube: return 2 * params.pusher_count;
    case EnvKind::push_rope: return 2;
    case EnvKind::push_sand: return 3;
    case EnvKind::reacher: return 2;
  }
  return 0;
}

ActionBounds action_bounds(EnvKind kind, const EnvParams& params) {
  const std::size_t n = static_cast<std::size_t>(action_dim(kind, params));
  ActionBounds b;
  switch (kind) {
    case EnvKind::push_cube:
      b.lo.assign(n, -0.9 * params.workspace);
      b.hi.assign(n, 0.9 * params.workspace);
      break;
    case EnvKind::push_rope:
      b.lo.assign(n, -0.12);
      b.hi.assign(n, 0.12);
      break;
    case EnvKind::push_sand:
      b.lo = {-0.06, -0.06, -0.15};
      b.hi = {0.06, 0.06, 0.15};
      break;
    case EnvKind::reacher:
      b.lo.assign(n, params.torque_min);
      b.hi.assign(n, params.torque_max);
      break;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Dynamics

EnvState step_push_cube(const EnvState& state, std::span<const double> action) {
  check_action(state, action);
  EnvState s = state;
  const double dt = Physics::kDt;
  const double h = Physics::kCubeHalfSide;
  const double r = Physics::kPusherRadius;
  for (int sub = 0; sub < Physics::kSubsteps; ++sub) {
    for (std::size_t p = 0; p < s.pushers.size(); ++p) {
      const Vec2 target{action[2 * p], action[2 * p + 1]};
      const Vec2 acc = (target - s.pushers[p]) * Physics::kPusherKp - s.pusher_velocities[p] * Physics::kPusherKd;
      s.pusher_velocities[p] += acc * dt;
      s.pushers[p] += s.pusher_velocities[p] * dt;
    }
    for (int iter = 0; iter < 4; ++iter) {
      for (auto& c : s.cubes)
        for (const auto& p : s.pushers) separate_square_from_disc(c, h, p, r);
      for (std::size_t i = 0; i < s.cubes.size(); ++i)
        for (std::size_t j = i + 1; j < s.cubes.size(); ++j) separate_squares(s.cubes[i], s.cubes[j], h);
    }
    // Pushers win: no cube may overlap a pusher at the end of a substep.
    for (auto& c : s.cubes)
      for (const auto& p : s.pushers) separate_square_from_disc(c, h, p, r);
  }
  ++s.time_index;
  check_finite(s);
  return s;
}

EnvState step_push_rope(const EnvState& state, std::span<const double> action) {
  check_action(state, action);
  EnvState s = state;
  const double dt = Physics::kDt;
  const double rest = s.params.rope_rest_length();
  const double limit = 0.9 * s.params.workspace;
  const Vec2 delta{action[0] / Physics::kSubsteps, action[1] / Physics::kSubsteps};
  const double reach = Physics::kPoleRadius + Physics::kRopeNodeRadius;
  const std::size_t n = s.rope.size();
  std::vector<Vec2> force(n);
  for (int sub = 0; sub < Physics::kSubsteps; ++sub) {
    s.pole = {std::clamp(s.pole.x + delta.x, -limit, limit), std::clamp(s.pole.y + delta.y, -limit, limit)};
    std::fill(force.begin(), force.end(), Vec2{});
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const Vec2 d = s.rope[i + 1] - s.rope[i];
      const double len = d.norm();
      if (len < 1e-12) continue;
      const double mag = Physics::kRopeStiffness * (len - rest);
      if (std::abs(mag) > Physics::kRopeBlowupForce) {
        throw NumericError("push_rope: spring force " + std::to_string(mag) + " exceeds blow-up threshold");
      }
      const Vec2 f = d * (mag / len);
      force[i] += f;
      force[i + 1] -= f;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 acc = (force[i] - s.rope_velocities[i] * Physics::kRopeDamping) * (1.0 / Physics::kRopeNodeMass);
      s.rope_velocities[i] += acc * dt;
      s.rope[i] += s.rope_velocities[i] * dt;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 d = s.rope[i] - s.pole;
      const double dist = d.norm();
      if (dist >= reach) continue;
      const Vec2 nrm = dist > 1e-12 ? d * (1.0 / dist) : Vec2{1.0, 0.0};
      s.rope[i] = s.pole + nrm * reach;
      const double vn = s.rope_velocities[i].dot(nrm);
      if (vn < 0) s.rope_velocities[i] -= nrm * vn;
    }
  }
  ++s.time_index;
  check_finite(s);
  return s;
}

EnvState step_push_sand(const EnvState& state, std::span<const double> action) {
  check_action(state, action);
  EnvState s = state;
  const double radius = s.params.sand_radius();
  const double limit = 0.95 * s.params.workspace;
  for (int sub = 0; sub < Physics::kSubsteps; ++sub) {
    s.board.x = std::clamp(s.board.x + action[0] / Physics::kSubsteps, -limit, limit);
    s.board.y = std::clamp(s.board.y + action[1] / Physics::kSubsteps, -limit, limit);
    s.board_angle = wrap_angle(s.board_angle + action[2] / Physics::kSubsteps);
    push_out_of_board(s, s.sand, radius);
    for (int iter = 0; iter < 2; ++iter) separate_particles(s.sand, radius);
    push_out_of_board(s, s.sand, radius);
  }
  ++s.time_index;
  check_finite(s);
  return s;
}

EnvState step_reacher(const EnvState& state, std::span<const double> action) {
  check_action(state, action);
  EnvState s = state;
  const double dt = Physics::kDt;
  for (int sub = 0; sub < Physics::kSubsteps; ++sub) {
    const double a1 = (action[0] - Physics::kReacherDamping * s.dq1) / Physics::kReacherInertia;
    const double a2 = (action[1] - Physics::kReacherDamping * s.dq2) / Physics::kReacherInertia;
    s.dq1 += a1 * dt;
    s.dq2 += a2 * dt;
    s.q1 = wrap_angle(s.q1 + s.dq1 * dt);
    s.q2 = wrap_angle(s.q2 + s.dq2 * dt);
  }
  ++s.time_index;
  check_finite(s);
  return s;
}

EnvState step(const EnvState& state, std::span<const double> action) {
  switch (state.kind) {
    case EnvKind::push_cube: return step_push_cube(state, action);
    case EnvKind::push_rope: return step_push_rope(state, action);
    case EnvKind::push_sand: return step_push_sand(state, action);
    case EnvKind::reacher: return step_reacher(state, action);
  }
  throw DomainError("unknown environment kind");
}

double rope_spring_energy(const EnvState& s) {
  const double rest = s.params.rope_rest_length();
  double e = 0.0;
  for (std::size_t i = 0; i + 1 < s.rope.size(); ++i) {
    const double ext = (s.rope[i + 1] - s.rope[i]).norm() - rest;
    e += 0.5 * Physics::kRopeStiffness * ext * ext;
  }
  return e;
}

double rope_kinetic_energy(const EnvState& s) {
  double e = 0.0;
  for (const auto& v : s.rope_velocities) e += 0.5 * Physics::kRopeNodeMass * v.dot(v);
  return e;
}

Vec2 reacher_elbow(const EnvState& s) { return unit(s.q1) * s.params.link1; }

Vec2 reacher_fingertip(const EnvState& s) { return reacher_elbow(s) + unit(s.q1 + s.q2) * s.params.link2; }

// ---------------------------------------------------------------------------
// Rendering

namespace {

using Color = std::array<float, 3>;

constexpr std::array<Color, 5> kCubePalette{{{0.2f, 0.4f, 0.9f},
                                             {0.2f, 0.8f, 0.3f},
                                             {0.95f, 0.8f, 0.2f},
                                             {0.7f, 0.3f, 0.8f},
                                             {0.1f, 0.8f, 0.8f}}};
constexpr std::array<Color, 2> kPusherPalette{{{0.9f, 0.2f, 0.2f}, {0.95f, 0.5f, 0.1f}}};
constexpr Color kRopeColor{0.95f, 0.6f, 0.1f};
constexpr Color kPoleColor{0.1f, 0.1f, 0.1f};
constexpr Color kSandColor{0.9f, 0.8f, 0.45f};
constexpr Color kBoardColor{0.2f, 0.2f, 0.8f};
constexpr Color kBaseColor{0.1f, 0.1f, 0.1f};
constexpr Color kLink1Color{0.9f, 0.3f, 0.2f};
constexpr Color kLink2Color{0.2f, 0.5f, 0.9f};

class Canvas {
 public:
  Canvas(int h, int w, double extent) : frame_{h, w, std::vector<float>(static_cast<std::size_t>(h) * w * 3, kBackground)}, extent_(extent) {}

  Vec2 center(int row, int col) const {
    const double px = 2.0 * extent_ / frame_.width;
    const double py = 2.0 * extent_ / frame_.height;
    return {-extent_ + (col + 0.5) * px, extent_ - (row + 0.5) * py};
  }

  // Fills every pixel whose center satisfies inside(p) within the bbox.
  template <class Inside>
  void fill(Vec2 lo, Vec2 hi, Color c, Inside inside) {
    const int c0 = std::max(0, col_of(lo.x) - 1), c1 = std::min(frame_.width - 1, col_of(hi.x) + 1);
    const int r0 = std::max(0, row_of(hi.y) - 1), r1 = std::min(frame_.height - 1, row_of(lo.y) + 1);
    for (int r = r0; r <= r1; ++r)
      for (int col = c0; col <= c1; ++col)
        if (inside(center(r, col))) set(r, col, c);
  }

  void disc(Vec2 p, double radius, Color c) {
    fill(p - Vec2{radius, radius}, p + Vec2{radius, radius}, c,
         [&](Vec2 q) { return (q - p).dot(q - p) <= radius * radius; });
  }

  // Marks the pixel containing p; keeps sub-pixel bodies visible.
  void dot(Vec2 p, Color c) {
    const int r = row_of(p.y), col = col_of(p.x);
    if (r >= 0 && r < frame_.height && col >= 0 && col < frame_.width) set(r, col, c);
  }

  void square(Vec2 p, double h, Color c) {
    fill(p - Vec2{h, h}, p + Vec2{h, h}, c, [&](Vec2 q) { return std::abs(q.x - p.x) <= h && std::abs(q.y - p.y) <= h; });
  }

  void capsule(Vec2 a, Vec2 b, double half_width, Color c) {
    const Vec2 lo{std::min(a.x, b.x) - half_width, std::min(a.y, b.y) - half_width};
    const Vec2 hi{std::max(a.x, b.x) + half_width, std::max(a.y, b.y) + half_width};
    fill(lo, hi, c, [&](Vec2 q) {
      const Vec2 d = q - closest_on_segment(q, a, b);
      return d.dot(d) <= half_width * half_width;
    });
  }

  Frame take() { return std::move(frame_); }

 private:
  int col_of(double x) const { return static_cast<int>(std::floor((x + extent_) / (2 * extent_) * frame_.width)); }
  int row_of(double y) const { return static_cast<int>(std::floor((extent_ - y) / (2 * extent_) * frame_.height)); }
  void set(int r, int col, Color c) {
    float* px = frame_.rgb.data() + (static_cast<std::size_t>(r) * frame_.width + col) * 3;
    px[0] = c[0];
    px[1] = c[1];
    px[2] = c[2];
  }

  Frame frame_;
  double extent_;
};

}  // namespace

Frame render(const EnvState& s, int height, int width) {
  if (height < 8 || width < 8) {
    throw DomainError("render resolution must be at least 8x8, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  Canvas canvas(height, width, s.params.workspace);
  switch (s.kind) {
    case EnvKind::push_cube:
      for (std::size_t i = 0; i < s.cubes.size(); ++i)
        canvas.square(s.cubes[i], Physics::kCubeHalfSide, kCubePalette[i % kCubePalette.size()]);
      for (std::size_t i = 0; i < s.pushers.size(); ++i)
        canvas.disc(s.pushers[i], Physics::kPusherRadius, kPusherPalette[i % kPusherPalette.size()]);
      break;
    case EnvKind::push_rope:
      for (std::size_t i = 0; i + 1 < s.rope.size(); ++i)
        canvas.capsule(s.rope[i], s.rope[i + 1], Physics::kRopeNodeRadius, kRopeColor);
      canvas.disc(s.pole, Physics::kPoleRadius, kPoleColor);
      break;
    case EnvKind::push_sand: {
      const double radius = s.params.sand_radius();
      for (const auto& p : s.sand) {
        canvas.disc(p, radius, kSandColor);
        canvas.dot(p, kSandColor);
      }
      Vec2 a, b;
      board_endpoints(s, a, b);
      canvas.capsule(a, b, Physics::kBoardHalfThickness, kBoardColor);
      break;
    }
    case EnvKind::reacher: {
      const Vec2 elbow = reacher_elbow(s);
      const Vec2 tip = reacher_fingertip(s);
      canvas.capsule({0, 0}, elbow, 0.06, kLink1Color);
      canvas.capsule(elbow, tip, 0.05, kLink2Color);
      canvas.disc({0, 0}, 0.07, kBaseColor);
      break;
    }
  }
  return canvas.take();
}

// ---------------------------------------------------------------------------
// Scenarios

bool in_corner_sector(double angle) {
  const double half = kCornerSectorWidthDeg / 2 * kPi / 180.0;
  for (int k = 0; k < 4; ++k) {
    const double center = kPi / 4 + k * kPi / 2;
    if (std::abs(wrap_angle(angle - center)) <= half) return true;
  }
  return false;
}

double sample_goal_angle(GoalRegion region, std::mt19937_64& rng) {
  if (region == GoalRegion::inside_corners) {
    const double half = kCornerSectorWidthDeg / 2 * kPi / 180.0;
    const int k = uniform_int(rng, 0, 3);
    return wrap_angle(kPi / 4 + k * kPi / 2 + uniform(rng, -half, half));
  }
  for (;;) {
    const double a = uniform(rng, -kPi, kPi);
    if (!in_corner_sector(a)) return a;
  }
}

EnvParams sample_params(const ScenarioSpec& spec, std::mt19937_64& rng) {
  EnvParams p;
  p.workspace = default_workspace(spec.kind);
  p.pusher_count = spec.pusher_count;
  p.torque_min = spec.torque_min;
  p.torque_max = spec.torque_max;
  switch (spec.kind) {
    case EnvKind::push_cube:
      if (spec.cube_counts.empty()) throw DomainError("push_cube scenario needs at least one cube count");
      p.cube_count = spec.cube_counts[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<int>(spec.cube_counts.size()) - 1))];
      break;
    case EnvKind::push_rope:
      p.rope_length = spec.rope_length_min == spec.rope_length_max
                          ? spec.rope_length_min
                          : uniform(rng, spec.rope_length_min, spec.rope_length_max);
      break;
    case EnvKind::push_sand:
      if (spec.sand_dims.empty()) throw DomainError("push_sand scenario needs at least one pile size");
      p.sand_dim = spec.sand_dims[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<int>(spec.sand_dims.size()) - 1))];
      break;
    case EnvKind::reacher:
      break;
  }
  return p;
}

EnvState initial_state(EnvKind kind, const EnvParams& params, std::mt19937_64& rng) {
  EnvState s;
  s.kind = kind;
  s.params = params;
  switch (kind) {
    case EnvKind::push_cube: {
      const double h = Physics::kCubeHalfSide;
      const double region = 0.55 * params.workspace;
      for (int i = 0; i < params.cube_count; ++i) {
        for (int attempt = 0;; ++attempt) {
          const Vec2 c{uniform(rng, -region, region), uniform(rng, -region, region)};
          const bool clear = std::all_of(s.cubes.begin(), s.cubes.end(), [&](Vec2 o) {
            return std::max(std::abs(o.x - c.x), std::abs(o.y - c.y)) > 2 * h + 0.05;
          });
          if (clear || attempt > 1000) {
            s.cubes.push_back(c);
            break;
          }
        }
      }
      const double clearance = h * std::numbers::sqrt2 + Physics::kPusherRadius + 0.02;
      for (int i = 0; i < params.pusher_count; ++i) {
        for (int attempt = 0;; ++attempt) {
          const double lim = 0.8 * params.workspace;
          const Vec2 p{uniform(rng, -lim, lim), uniform(rng, -lim, lim)};
          const bool clear = std::all_of(s.cubes.begin(), s.cubes.end(), [&](Vec2 c) { return (p - c).norm() > clearance; });
          if (clear || attempt > 1000) {
            s.pushers.push_back(p);
            break;
          }
        }
      }
      s.pusher_velocities.assign(s.pushers.size(), Vec2{});
      break;
    }
    case EnvKind::push_rope: {
      const Vec2 center{uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3)};
      const double heading = uniform(rng, -kPi, kPi);
      const double bend = uniform(rng, -0.06, 0.06);  // turn per segment
      const double rest = params.rope_rest_length();
      std::vector<Vec2> nodes{{0, 0}};
      for (int i = 1; i < params.rope_nodes; ++i) {
        const double a = heading + bend * (i - 0.5 * params.rope_nodes);
        nodes.push_back(nodes.back() + unit(a) * rest);
      }
      Vec2 mid{};
      for (const auto& n : nodes) mid += n;
      mid = mid * (1.0 / nodes.size());
      for (auto& n : nodes) n += center - mid;
      s.rope = nodes;
      s.rope_velocities.assign(nodes.size(), Vec2{});
      const Vec2 m = nodes[nodes.size() / 2];
      const Vec2 tangent = nodes[nodes.size() / 2 + 1] - nodes[nodes.size() / 2 - 1];
      const Vec2 normal = unit(std::atan2(tangent.y, tangent.x) + kPi / 2);
      const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
      s.pole = m + normal * (side * uniform(rng, 0.5, 0.8)) + unit(std::atan2(tangent.y, tangent.x)) * uniform(rng, -0.4, 0.4);
      break;
    }
    case EnvKind::push_sand: {
      const double r = params.sand_radius();
      const double spacing = 2.2 * r;
      const double jitter = 0.09 * r;
      const Vec2 center{uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2)};
      const double half = 0.5 * spacing * (params.sand_dim - 1);
      for (int i = 0; i < params.sand_dim; ++i)
        for (int j = 0; j < params.sand_dim; ++j)
          s.sand.push_back(center + Vec2{-half + i * spacing + uniform(rng, -jitter, jitter),
                                         -half + j * spacing + uniform(rng, -jitter, jitter)});
      const double approach = uniform(rng, -kPi, kPi);
      s.board = center - unit(approach) * (half * std::numbers::sqrt2 + 0.15);
      s.board_angle = wrap_angle(approach + kPi / 2);
      break;
    }
    case EnvKind::reacher:
      s.q1 = uniform(rng, -kPi, kPi);
      s.q2 = uniform(rng, -2.5, 2.5);
      break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Scripted policies

ScriptedPolicy::ScriptedPolicy(const ScenarioSpec& spec, const EnvState& initial, std::uint64_t seed)
    : spec_(spec), bounds_(action_bounds(spec.kind, initial.params)), rng_(seed) {}

std::vector<double> ScriptedPolicy::act(const EnvState& state) {
  std::vector<double> a;
  switch (spec_.kind) {
    case EnvKind::push_cube: a = act_cube(state); break;
    case EnvKind::push_rope: a = act_rope(state); break;
    case EnvKind::push_sand: a = act_sand(state); break;
    case EnvKind::reacher: a = act_reacher(state); break;
  }
  ++frame_;
  return bounds_.clamp(std::move(a));
}

std::vector<double> ScriptedPolicy::act_cube(const EnvState& s) {
  // Alternates an approach phase (phase_ 1: go behind a cube) and a push
  // phase (phase_ 0: drive through it), one target pair per pusher.
  if (phase_frames_left_ == 0) {
    if (phase_ == 0 || targets_.empty()) {
      targets_.clear();
      for (std::size_t p = 0; p < s.pushers.size(); ++p) {
        if (s.cubes.empty()) {
          targets_.push_back({uniform(rng_, -0.8, 0.8), uniform(rng_, -0.8, 0.8)});
          targets_.push_back(targets_.back());
          continue;
        }
        const Vec2 c = s.cubes[static_cast<std::size_t>(uniform_int(rng_, 0, static_cast<int>(s.cubes.size()) - 1))];
        const double dir = std::atan2(-c.y, -c.x) + uniform(rng_, -1.0, 1.0);
        targets_.push_back(c - unit(dir) * (Physics::kCubeHalfSide + Physics::kPusherRadius + 0.12));
        targets_.push_back(c + unit(dir) * uniform(rng_, 0.25, 0.4));
      }
      phase_ = 1;
      phase_frames_left_ = 6;
    } else {
      phase_ = 0;
      phase_frames_left_ = 8;
    }
  }
  --phase_frames_left_;
  std::vector<double> a;
  for (std::size_t p = 0; p < targets_.size() / 2; ++p) {
    const Vec2 t = targets_[2 * p + (phase_ == 1 ? 0 : 1)];
    a.push_back(t.x);
    a.push_back(t.y);
  }
  return a;
}

std::vector<double> ScriptedPolicy::act_rope(const EnvState& s) {
  // Sweeps the pole through the rope near a random node, then picks another.
  const bool arrived = !targets_.empty() && (targets_[0] - s.pole).norm() < 0.05;
  if (targets_.empty() || phase_frames_left_ == 0 || arrived) {
    const std::size_t n = s.rope.size();
    const std::size_t i = static_cast<std::size_t>(uniform_int(rng_, 3, static_cast<int>(n) - 4));
    const Vec2 m = s.rope[i];
    const Vec2 tangent = s.rope[i + 1] - s.rope[i - 1];
    const Vec2 normal = unit(std::atan2(tangent.y, tangent.x) + kPi / 2);
    const double side = (s.pole - m).dot(normal) >= 0 ? 1.0 : -1.0;
    const double lim = 0.85 * s.params.workspace;
    Vec2 t = m - normal * (side * uniform(rng_, 0.3, 0.6));
    t = {std::clamp(t.x, -lim, lim), std::clamp(t.y, -lim, lim)};
    targets_.assign(1, t);
    phase_frames_left_ = 12;
  }
  --phase_frames_left_;
  const Vec2 d = targets_[0] - s.pole;
  return {d.x, d.y};
}

std::vector<double> ScriptedPolicy::act_sand(const EnvState& s) {
  // Drives the board across the pile with its face perpendicular to motion.
  const bool arrived = !targets_.empty() && (targets_[0] - s.board).norm() < 0.04;
  if (targets_.empty() || phase_frames_left_ == 0 || arrived) {
    Vec2 c{};
    for (const auto& p : s.sand) c += p;
    if (!s.sand.empty()) c = c * (1.0 / s.sand.size());
    const Vec2 to = c - s.board;
    const double heading = std::atan2(to.y, to.x) + uniform(rng_, -0.4, 0.4);
    const double lim = 0.85 * s.params.workspace;
    Vec2 t = c + unit(heading) * uniform(rng_, 0.15, 0.35);
    t = {std::clamp(t.x, -lim, lim), std::clamp(t.y, -lim, lim)};
    targets_.assign(1, t);
    target_angle_ = heading + kPi / 2;
    phase_frames_left_ = 12;
  }
  --phase_frames_left_;
  const Vec2 d = targets_[0] - s.board;
  // The board is symmetric under a half turn; rotate by the shorter way.
  double dtheta = wrap_angle(target_angle_ - s.board_angle);
  if (dtheta > kPi / 2) dtheta -= kPi;
  if (dtheta < -kPi / 2) dtheta += kPi;
  return {d.x, d.y, dtheta};
}

std::vector<double> ScriptedPolicy::act_reacher(const EnvState& s) {
  // Two goals per episode; proportional-derivative torques toward the
  // inverse-kinematics joint configuration of the current goal.
  if (frame_ == 0 || phase_frames_left_ == 0) {
    const double l1 = s.params.link1, l2 = s.params.link2;
    const double angle = sample_goal_angle(spec_.goals, rng_);
    const double radius = uniform(rng_, 0.35, 0.95) * (l1 + l2 - 0.05);
    const double r = std::max(radius, std::abs(l1 - l2) + 0.05);
    const Vec2 goal = unit(angle) * r;
    const double c2 = std::clamp((r * r - l1 * l1 - l2 * l2) / (2 * l1 * l2), -1.0, 1.0);
    const double q2 = (uniform(rng_, 0.0, 1.0) < 0.5 ? 1.0 : -1.0) * std::acos(c2);
    goal_q2_ = q2;
    goal_q1_ = wrap_angle(angle - std::atan2(l2 * std::sin(q2), l1 + l2 * std::cos(q2)));
    goals_.push_back(goal);
    phase_frames_left_ = 16;
  }
  --phase_frames_left_;
  constexpr double kp = 10.0, kd = 3.0;
  return {kp * wrap_angle(goal_q1_ - s.q1) - kd * s.dq1, kp * wrap_angle(goal_q2_ - s.q2) - kd * s.dq2};
}

Trajectory run_scripted(const ScenarioSpec& spec, std::uint64_t seed, int frames) {
  if (frames < 1) throw DomainError("episode needs at least one frame");
  std::mt19937_64 rng(seed);
  Trajectory tr;
  tr.params = sample_params(spec, rng);
  tr.states.push_back(initial_state(spec.kind, tr.params, rng));
  ScriptedPolicy policy(spec, tr.states.front(), seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
  tr.actions.emplace_back(static_cast<std::size_t>(action_dim(spec.kind, tr.params)), 0.0);
  for (int t = 1; t < frames; ++t) {
    auto a = policy.act(tr.states.back());
    tr.states.push_back(step(tr.states.back(), a));
    tr.actions.push_back(std::move(a));
  }
  tr.goals = policy.goals();
  return tr;
}

std::vector<std::vector<double>> scripted_policy(const ScenarioSpec& spec, std::uint64_t seed, int frames) {
  return run_scripted(spec, seed, frames).actions;
}

}  // namespace acwm::envs
