// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "acwm/dataset/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "acwm/core/binary.hpp"
#include "json.hpp"

namespace acwm::dataset {

using json = nlohmann::json;
namespace fs = std::filesystem;
using envs::EnvKind;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::ind_test: return "ind_test";
    case Split::ood_test: return "ood_test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  for (auto s : {Split::train, Split::ind_test, Split::ood_test}) {
    if (to_string(s) == name) return s;
  }
  throw DomainError("unknown split '" + std::string(name) + "' (expected train, ind_test or ood_test)");
}

int SplitSpec::effective_count() const {
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) {
    throw DomainError("data fraction must lie in (0, 1], got " + std::to_string(data_fraction));
  }
  return static_cast<int>(std::ceil(data_fraction * episode_count - 1e-9));
}

SplitSpec default_split(EnvKind kind, Split split, int episode_count) {
  SplitSpec s;
  s.scenario.kind = kind;
  s.split = split;
  s.episode_count = episode_count;
  switch (split) {
    case Split::train: s.base_seed = 0; break;
    case Split::ind_test: s.base_seed = 1'000'000; break;
    case Split::ood_test: s.base_seed = 2'000'000; break;
  }
  if (split == Split::ood_test) {
    s.scenario.rope_length_min = s.scenario.rope_length_max = 3.1;
    s.scenario.sand_dims = {24};
    s.scenario.cube_counts = {1, 4, 5};
    s.scenario.goals = envs::GoalRegion::inside_corners;
    s.scenario.torque_min = -3.7;
    s.scenario.torque_max = 4.2;
  }
  return s;
}

void check_disjoint(const envs::ScenarioSpec& train, const envs::ScenarioSpec& ood) {
  if (train.kind != ood.kind) throw DomainError("train and OoD scenarios describe different environments");
  switch (train.kind) {
    case EnvKind::push_rope:
      if (!(ood.rope_length_max < train.rope_length_min || ood.rope_length_min > train.rope_length_max)) {
        throw DomainError("OoD rope lengths overlap the training range");
      }
      break;
    case EnvKind::push_sand:
      for (int l : ood.sand_dims) {
        if (std::find(train.sand_dims.begin(), train.sand_dims.end(), l) != train.sand_dims.end()) {
          throw DomainError("OoD sand size L=" + std::to_string(l) + " appears in the training set");
        }
      }
      break;
    case EnvKind::push_cube:
      for (int c : ood.cube_counts) {
        if (std::find(train.cube_counts.begin(), train.cube_counts.end(), c) != train.cube_counts.end()) {
          throw DomainError("OoD cube count " + std::to_string(c) + " appears in the training set");
        }
      }
      break;
    case EnvKind::reacher:
      if (train.goals == ood.goals) throw DomainError("OoD reacher goals use the training goal region");
      break;
  }
}

std::string ood_label(const envs::ScenarioSpec& spec, const envs::EnvParams& p) {
  std::ostringstream os;
  switch (spec.kind) {
    case EnvKind::push_rope: os << "rope_length=" << p.rope_length; break;
    case EnvKind::push_sand: os << "sand_dim=" << p.sand_dim; break;
    case EnvKind::push_cube: os << "cube_count=" << p.cube_count; break;
    case EnvKind::reacher:
      os << (spec.goals == envs::GoalRegion::inside_corners ? "goals=corner_sectors" : "goals=outside_corners");
      break;
  }
  return os.str();
}

Episode make_episode(const SplitSpec& spec, int index) {
  const std::uint64_t seed = spec.base_seed + static_cast<std::uint64_t>(index);
  const int frames = spec.frames();
  const auto traj = envs::run_scripted(spec.scenario, seed, frames);
  Episode ep;
  ep.env = spec.scenario.kind;
  ep.split = spec.split;
  ep.seed = seed;
  ep.params = traj.params;
  ep.ood_label = spec.split == Split::ood_test ? ood_label(spec.scenario, traj.params) : "";
  ep.frame_count = frames;
  ep.height = spec.height;
  ep.width = spec.width;
  ep.action_dim = envs::action_dim(spec.scenario.kind, traj.params);
  ep.frames.reserve(static_cast<std::size_t>(frames) * spec.height * spec.width * 3);
  for (const auto& st : traj.states) {
    const auto f = envs::render(st, spec.height, spec.width);
    ep.frames.insert(ep.frames.end(), f.rgb.begin(), f.rgb.end());
  }
  for (const auto& a : traj.actions)
    for (double v : a) ep.actions.push_back(static_cast<float>(v));
  return ep;
}

void pad_trim(std::vector<float>& frames, std::vector<float>& actions, int frame_size, int action_dim,
              int latent_steps, int temporal_factor) {
  if (frame_size <= 0 || frames.size() < static_cast<std::size_t>(frame_size)) {
    throw DomainError("pad_trim needs at least one frame");
  }
  const std::size_t have = frames.size() / static_cast<std::size_t>(frame_size);
  const std::size_t want = static_cast<std::size_t>(pixel_frames(latent_steps, temporal_factor));
  if (have >= want) {
    frames.resize(want * frame_size);
    actions.resize(want * action_dim);
    return;
  }
  const std::vector<float> last(frames.end() - frame_size, frames.end());
  for (std::size_t t = have; t < want; ++t) frames.insert(frames.end(), last.begin(), last.end());
  actions.resize(want * action_dim, 0.0f);
}

// ---------------------------------------------------------------------------
// Binary episode files

namespace {

json params_to_json(const envs::EnvParams& p) {
  return json{{"workspace", p.workspace},   {"cube_count", p.cube_count}, {"pusher_count", p.pusher_count},
              {"rope_length", p.rope_length}, {"rope_nodes", p.rope_nodes}, {"sand_dim", p.sand_dim},
              {"link1", p.link1},           {"link2", p.link2},           {"torque_min", p.torque_min},
              {"torque_max", p.torque_max}};
}

envs::EnvParams params_from_json(const json& j) {
  envs::EnvParams p;
  p.workspace = j.at("workspace").get<double>();
  p.cube_count = j.at("cube_count").get<int>();
  p.pusher_count = j.at("pusher_count").get<int>();
  p.rope_length = j.at("rope_length").get<double>();
  p.rope_nodes = j.at("rope_nodes").get<int>();
  p.sand_dim = j.at("sand_dim").get<int>();
  p.link1 = j.at("link1").get<double>();
  p.link2 = j.at("link2").get<double>();
  p.torque_min = j.at("torque_min").get<double>();
  p.torque_max = j.at("torque_max").get<double>();
  return p;
}

json physics_json() {
  using P = envs::Physics;
  return json{{"dt", P::kDt},
              {"substeps", P::kSubsteps},
              {"pusher_kp", P::kPusherKp},
              {"pusher_kd", P::kPusherKd},
              {"rope_stiffness", P::kRopeStiffness},
              {"rope_damping", P::kRopeDamping},
              {"sand_radius_fraction", P::kSandRadiusFraction},
              {"reacher_inertia", P::kReacherInertia},
              {"reacher_damping", P::kReacherDamping}};
}

using FormatKind = EpisodeFormatError::Kind;

}  // namespace

std::uint64_t payload_checksum(std::span<const float> frames, std::span<const float> actions) {
  std::string bytes;
  append_le_floats(bytes, frames);
  append_le_floats(bytes, actions);
  return fnv1a(bytes);
}

std::uint64_t write_episode(const Episode& ep, const fs::path& path) {
  const std::size_t fsize = static_cast<std::size_t>(ep.frame_count) * ep.height * ep.width * 3;
  if (ep.frames.size() != fsize || ep.actions.size() != static_cast<std::size_t>(ep.frame_count) * ep.action_dim) {
    throw ShapeError("write_episode: frame/action buffers do not match the declared shapes");
  }
  std::string payload;
  append_le_floats(payload, ep.frames);
  append_le_floats(payload, ep.actions);
  const std::uint64_t checksum = fnv1a(payload);

  json header{{"env", envs::to_string(ep.env)},
              {"split", to_string(ep.split)},
              {"seed", ep.seed},
              {"dtype", "float32_le"},
              {"frames_shape", {ep.frame_count, ep.height, ep.width, 3}},
              {"actions_shape", {ep.frame_count, ep.action_dim}},
              {"params", params_to_json(ep.params)},
              {"physics", physics_json()},
              {"ood_label", ep.ood_label},
              {"payload_bytes", payload.size()},
              {"checksum", hex64(checksum)}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw EpisodeFormatError(FormatKind::io, "cannot open '" + path.string() + "' for writing");
  out.write(kEpisodeMagic.data(), static_cast<std::streamsize>(kEpisodeMagic.size()));
  std::string len;
  append_le_u64(len, text.size());
  out.write(len.data(), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw EpisodeFormatError(FormatKind::io, "write failed for '" + path.string() + "'");
  return checksum;
}

Episode read_episode(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EpisodeFormatError(FormatKind::io, "cannot open episode '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kEpisodeMagic.size() || std::string_view(bytes).substr(0, 8) != kEpisodeMagic) {
    throw EpisodeFormatError(FormatKind::bad_magic, "'" + path.string() + "' does not start with magic " +
                                                        std::string(kEpisodeMagic));
  }
  if (bytes.size() < 16) throw EpisodeFormatError(FormatKind::truncated, "episode header length truncated");
  const std::uint64_t hlen = read_le_u64(bytes.data() + 8);
  if (16 + hlen > bytes.size()) throw EpisodeFormatError(FormatKind::truncated, "episode header truncated");
  json h;
  try {
    h = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const json::exception& e) {
    throw EpisodeFormatError(FormatKind::bad_header, std::string("episode header is not valid: ") + e.what());
  }

  Episode ep;
  std::uint64_t declared = 0, checksum = 0;
  try {
    if (h.at("dtype").get<std::string>() != "float32_le") {
      throw EpisodeFormatError(FormatKind::dtype_mismatch, "unsupported episode dtype " + h.at("dtype").dump());
    }
    ep.env = envs::parse_env_kind(h.at("env").get<std::string>());
    ep.split = parse_split(h.at("split").get<std::string>());
    ep.seed = h.at("seed").get<std::uint64_t>();
    ep.params = params_from_json(h.at("params"));
    ep.ood_label = h.at("ood_label").get<std::string>();
    const auto fs_ = h.at("frames_shape").get<std::vector<std::int64_t>>();
    const auto as_ = h.at("actions_shape").get<std::vector<std::int64_t>>();
    if (fs_.size() != 4 || fs_[3] != 3 || as_.size() != 2 || as_[0] != fs_[0]) {
      throw EpisodeFormatError(FormatKind::shape_mismatch, "episode header shapes are inconsistent");
    }
    ep.frame_count = static_cast<int>(fs_[0]);
    ep.height = static_cast<int>(fs_[1]);
    ep.width = static_cast<int>(fs_[2]);
    ep.action_dim = static_cast<int>(as_[1]);
    declared = h.at("payload_bytes").get<std::uint64_t>();
    checksum = parse_hex64(h.at("checksum").get<std::string>());
  } catch (const json::exception& e) {
    throw EpisodeFormatError(FormatKind::bad_header, std::string("episode header is missing fields: ") + e.what());
  } catch (const DomainError& e) {
    throw EpisodeFormatError(FormatKind::bad_header, e.what());
  }

  const std::uint64_t nframe = static_cast<std::uint64_t>(ep.frame_count) * ep.height * ep.width * 3;
  const std::uint64_t naction = static_cast<std::uint64_t>(ep.frame_count) * ep.action_dim;
  const std::uint64_t available = bytes.size() - 16 - hlen;
  if (available < declared) {
    throw EpisodeFormatError(FormatKind::truncated, "episode payload truncated: " + std::to_string(available) +
                                                        " of " + std::to_string(declared) + " bytes");
  }
  if (declared != 4 * (nframe + naction) || available != declared) {
    throw EpisodeFormatError(FormatKind::shape_mismatch,
                             "episode shapes imply " + std::to_string(4 * (nframe + naction)) +
                                 " payload bytes, header declares " + std::to_string(declared) + ", file holds " +
                                 std::to_string(available));
  }
  const std::string_view payload(bytes.data() + 16 + hlen, declared);
  if (fnv1a(payload) != checksum) {
    throw EpisodeFormatError(FormatKind::checksum_mismatch, "episode checksum mismatch in '" + path.string() + "'");
  }
  ep.frames = read_le_floats(payload.data(), nframe);
  ep.actions = read_le_floats(payload.data() + 4 * nframe, naction);
  return ep;
}

// ---------------------------------------------------------------------------
// Manifests

Manifest generate_split(const SplitSpec& spec, const fs::path& dir) {
  if (spec.latent_steps < 1 || spec.temporal_factor < 1) throw DomainError("latent steps and temporal factor must be positive");
  if (spec.split == Split::ood_test) {
    check_disjoint(default_split(spec.scenario.kind, Split::train).scenario, spec.scenario);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory '" + dir.string() + "': " + ec.message());

  Manifest m;
  m.env = spec.scenario.kind;
  m.split = spec.split;
  m.base_seed = spec.base_seed;
  m.data_fraction = spec.data_fraction;
  m.latent_steps = spec.latent_steps;
  m.temporal_factor = spec.temporal_factor;
  m.height = spec.height;
  m.width = spec.width;
  m.directory = dir;

  std::array<double, 3> sum{}, sq{};
  double count = 0;
  std::string checksums;
  const int n = spec.effective_count();
  for (int i = 0; i < n; ++i) {
    const Episode ep = make_episode(spec, i);
    m.action_dim = ep.action_dim;
    std::ostringstream name;
    name << "episode_" << std::setw(5) << std::setfill('0') << i << ".acwm";
    ManifestEntry e{name.str(), ep.seed, ep.params, ep.ood_label, write_episode(ep, dir / name.str())};
    checksums += hex64(e.checksum);
    m.entries.push_back(std::move(e));
    for (std::size_t k = 0; k < ep.frames.size(); ++k) {
      const double v = ep.frames[k];
      sum[k % 3] += v;
      sq[k % 3] += v * v;
    }
    count += static_cast<double>(ep.frames.size()) / 3.0;
  }
  for (int c = 0; c < 3; ++c) {
    if (count > 0) {
      m.stats.mean[c] = sum[c] / count;
      m.stats.stddev[c] = std::max(1e-3, std::sqrt(std::max(0.0, sq[c] / count - m.stats.mean[c] * m.stats.mean[c])));
    }
  }
  m.content_checksum = fnv1a(checksums);
  write_manifest(m, dir / kManifestName);
  return m;
}

void write_manifest(const Manifest& m, const fs::path& path) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back(json{{"file", e.file},
                           {"seed", e.seed},
                           {"params", params_to_json(e.params)},
                           {"ood_label", e.ood_label},
                           {"checksum", hex64(e.checksum)}});
  }
  json j{{"format", "acwm-manifest-1"},
         {"env", envs::to_string(m.env)},
         {"split", to_string(m.split)},
         {"base_seed", m.base_seed},
         {"data_fraction", m.data_fraction},
         {"latent_steps", m.latent_steps},
         {"temporal_factor", m.temporal_factor},
         {"height", m.height},
         {"width", m.width},
         {"action_dim", m.action_dim},
         {"channel_mean", m.stats.mean},
         {"channel_std", m.stats.stddev},
         {"episodes", entries},
         {"content_checksum", hex64(m.content_checksum)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

Manifest read_manifest(const fs::path& path_in) {
  fs::path path = path_in;
  if (fs::is_directory(path)) path /= kManifestName;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  Manifest m;
  try {
    const json j = json::parse(in);
    m.env = envs::parse_env_kind(j.at("env").get<std::string>());
    m.split = parse_split(j.at("split").get<std::string>());
    m.base_seed = j.at("base_seed").get<std::uint64_t>();
    m.data_fraction = j.at("data_fraction").get<double>();
    m.latent_steps = j.at("latent_steps").get<int>();
    m.temporal_factor = j.at("temporal_factor").get<int>();
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    m.action_dim = j.at("action_dim").get<int>();
    m.stats.mean = j.at("channel_mean").get<std::array<double, 3>>();
    m.stats.stddev = j.at("channel_std").get<std::array<double, 3>>();
    for (const auto& e : j.at("episodes")) {
      m.entries.push_back(ManifestEntry{e.at("file").get<std::string>(), e.at("seed").get<std::uint64_t>(),
                                        params_from_json(e.at("params")), e.at("ood_label").get<std::string>(),
                                        parse_hex64(e.at("checksum").get<std::string>())});
    }
    m.content_checksum = parse_hex64(j.at("content_checksum").get<std::string>());
  } catch (const json::exception& e) {
    throw IoError("malformed manifest '" + path.string() + "': " + e.what());
  }
  m.directory = path.parent_path();
  return m;
}

}  // namespace acwm::dataset
