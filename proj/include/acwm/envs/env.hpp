// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Four seeded 2D physics environments (rigid pushing, rope, granular sand,
// two-link reacher), their scripted data-collection policies, and a flat
// rasterizer.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace acwm::envs {

enum class EnvKind { push_cube, push_rope, push_sand, reacher };

std::string_view to_string(EnvKind kind);
EnvKind parse_env_kind(std::string_view name);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
  Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  bool operator==(const Vec2&) const = default;
};

/// Simulation constants shared by every environment.
struct Physics {
  static constexpr double kDt = 1.0 / 60.0;
  static constexpr int kSubsteps = 4;  // per rendered frame

  static constexpr double kPusherKp = 40.0;
  static constexpr double kPusherKd = 8.0;
  static constexpr double kPusherRadius = 0.07;
  static constexpr double kCubeHalfSide = 0.1;

  static constexpr int kRopeNodes = 20;
  static constexpr double kRopeStiffness = 800.0;
  static constexpr double kRopeDamping = 4.0;
  static constexpr double kRopeNodeMass = 1.0;
  static constexpr double kRopeNodeRadius = 0.04;
  static constexpr double kPoleRadius = 0.1;
  static constexpr double kRopeBlowupForce = 1e6;

  static constexpr double kSandRadiusFraction = 0.01;  // of the workspace width
  static constexpr double kBoardHalfLength = 0.25;
  static constexpr double kBoardHalfThickness = 0.03;

  static constexpr double kReacherInertia = 1.0;
  static constexpr double kReacherDamping = 0.5;
  static constexpr double kReacherLink1 = 0.45;
  static constexpr double kReacherLink2 = 0.4;
};

/// Per-episode physical parameters.
struct EnvParams {
  double workspace = 1.0;  // half-extent of the square workspace, world units
  int cube_count = 3;
  int pusher_count = 1;
  double rope_length = 2.4;
  int rope_nodes = Physics::kRopeNodes;
  int sand_dim = 12;  // L: the pile starts as an L x L patch
  double link1 = Physics::kReacherLink1;
  double link2 = Physics::kReacherLink2;
  double torque_min = -3.3;
  double torque_max = 3.5;

  double sand_radius() const { return Physics::kSandRadiusFraction * 2.0 * workspace; }
  double rope_rest_length() const { return rope_length / (rope_nodes - 1); }
  bool operator==(const EnvParams&) const = default;
};

/// Default workspace half-extent per environment (the rope needs room for 3.1 m).
double default_workspace(EnvKind kind);

struct EnvState {
  EnvKind kind = EnvKind::push_cube;
  EnvParams params;
  int time_index = 0;

  // push_cube
  std::vector<Vec2> pushers;
  std::vector<Vec2> pusher_velocities;
  std::vector<Vec2> cubes;  // centers of axis-aligned squares

  // push_rope
  std::vector<Vec2> rope;
  std::vector<Vec2> rope_velocities;
  Vec2 pole;

  // push_sand
  std::vector<Vec2> sand;
  Vec2 board;
  double board_angle = 0.0;  // segment direction

  // reacher
  double q1 = 0.0, q2 = 0.0;  // joint angles, q2 relative to link 1
  double dq1 = 0.0, dq2 = 0.0;

  bool operator==(const EnvState&) const = default;
};

/// Inclusive per-dimension action bounds.
struct ActionBounds {
  std::vector<double> lo;
  std::vector<double> hi;
  std::size_t dim() const { return lo.size(); }
  bool contains(std::span<const double> a, double tol = 1e-9) const;
  std::vector<double> clamp(std::vector<double> a) const;
};

/// push_cube: 2 per pusher (absolute target); rope: 2 (pole delta);
/// sand: 3 (board delta x, y, rotation); reacher: 2 (joint torques).
int action_dim(EnvKind kind, const EnvParams& params);
ActionBounds action_bounds(EnvKind kind, const EnvParams& params);

EnvState step_push_cube(const EnvState& state, std::span<const double> action);
EnvState step_push_rope(const EnvState& state, std::span<const double> action);
EnvState step_push_sand(const EnvState& state, std::span<const double> action);
EnvState step_reacher(const EnvState& state, std::span<const double> action);
EnvState step(const EnvState& state, std::span<const double> action);

/// Spring potential energy of the rope (used by the damping checks).
double rope_spring_energy(const EnvState& state);
double rope_kinetic_energy(const EnvState& state);

Vec2 reacher_elbow(const EnvState& state);
Vec2 reacher_fingertip(const EnvState& state);
double wrap_angle(double a);  // to (-pi, pi]

// ---------------------------------------------------------------------------
// Rendering

/// H x W x 3 image, values in [0, 1], row 0 at the top of the workspace.
struct Frame {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;

  float at(int row, int col, int channel) const {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }
  bool operator==(const Frame&) const = default;
};

inline constexpr float kBackground = 0.5f;

Frame render(const EnvState& state, int height, int width);

// ---------------------------------------------------------------------------
// Scenario sampling and scripted policies

/// Where reacher goals are drawn: outside the four 20-degree corner sectors
/// (centred at 45, 135, 225, 315 degrees) or inside them.
enum class GoalRegion { outside_corners, inside_corners };

inline constexpr double kCornerSectorWidthDeg = 20.0;

/// True when the angle (radians) lies in one of the corner sectors.
bool in_corner_sector(double angle);

/// Parameter ranges from which episodes of one environment are drawn.
struct ScenarioSpec {
  EnvKind kind = EnvKind::reacher;
  double rope_length_min = 2.0;
  double rope_length_max = 2.8;
  std::vector<int> sand_dims{12, 13, 14, 15, 16, 17};
  std::vector<int> cube_counts{3};
  int pusher_count = 1;
  GoalRegion goals = GoalRegion::outside_corners;
  double torque_min = -3.3;
  double torque_max = 3.5;
};

EnvParams sample_params(const ScenarioSpec& spec, std::mt19937_64& rng);
EnvState initial_state(EnvKind kind, const EnvParams& params, std::mt19937_64& rng);

/// Reacher goal angle drawn from the spec's goal region.
double sample_goal_angle(GoalRegion region, std::mt19937_64& rng);

/// Closed-loop scripted controller. Deterministic given its rng.
class ScriptedPolicy {
 public:
  ScriptedPolicy(const ScenarioSpec& spec, const EnvState& initial, std::uint64_t seed);
  std::vector<double> act(const EnvState& state);

  /// Reacher goal points (fingertip targets) chosen so far.
  const std::vector<Vec2>& goals() const { return goals_; }

 private:
  std::vector<double> act_cube(const EnvState& s);
  std::vector<double> act_rope(const EnvState& s);
  std::vector<double> act_sand(const EnvState& s);
  std::vector<double> act_reacher(const EnvState& s);

  ScenarioSpec spec_;
  ActionBounds bounds_;
  std::mt19937_64 rng_;
  int frame_ = 0;
  int phase_frames_left_ = 0;
  int phase_ = 0;
  std::vector<Vec2> targets_;
  double target_angle_ = 0.0;
  std::vector<Vec2> goals_;
  double goal_q1_ = 0.0, goal_q2_ = 0.0;
};

/// One simulated episode before rendering: states[0] is the initial state,
/// actions[0] is the null action, and states[i] = step(states[i-1], actions[i]).
struct Trajectory {
  EnvParams params;
  std::vector<EnvState> states;
  std::vector<std::vector<double>> actions;
  std::vector<Vec2> goals;
};

Trajectory run_scripted(const ScenarioSpec& spec, std::uint64_t seed, int frames);

/// The action sequence a scripted episode issues (length = frames).
std::vector<std::vector<double>> scripted_policy(const ScenarioSpec& spec, std::uint64_t seed, int frames);

}  // namespace acwm::envs
