// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "acwm/model/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "acwm/core/binary.hpp"
#include "acwm/core/error.hpp"
#include "json.hpp"

namespace acwm::model {

using json = nlohmann::json;

namespace {

json config_json(const ModelConfig& c) {
  return json{{"hidden", c.hidden},
              {"layers", c.layers},
              {"heads", c.heads},
              {"patch", c.patch},
              {"mlp_ratio", c.mlp_ratio},
              {"action_dim", c.action_dim},
              {"latent_steps", c.latent_steps},
              {"temporal_factor", c.temporal_factor},
              {"latent_rows", c.latent_rows},
              {"latent_cols", c.latent_cols},
              {"latent_channels", c.latent_channels},
              {"frequency_dim", c.frequency_dim},
              {"noise_levels", c.noise_levels},
              {"rope_base", c.rope_base},
              {"conditioning", std::string(to_string(c.conditioning))},
              {"seed", c.seed}};
}

ModelConfig config_parse(const json& j) {
  ModelConfig c;
  c.hidden = j.at("hidden").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.patch = j.at("patch").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.action_dim = j.at("action_dim").get<int>();
  c.latent_steps = j.at("latent_steps").get<int>();
  c.temporal_factor = j.at("temporal_factor").get<int>();
  c.latent_rows = j.at("latent_rows").get<int>();
  c.latent_cols = j.at("latent_cols").get<int>();
  c.latent_channels = j.at("latent_channels").get<int>();
  c.frequency_dim = j.at("frequency_dim").get<int>();
  c.noise_levels = j.at("noise_levels").get<int>();
  c.rope_base = j.at("rope_base").get<double>();
  c.conditioning = parse_conditioning(j.at("conditioning").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

void append_le_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint32_t read_le_u32(const char* p) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return v;
}

// Bounds-checked cursor over the tensor section.
struct Reader {
  const std::string& bytes;
  std::size_t pos;
  const char* take(std::size_t n, const char* what) {
    if (pos + n > bytes.size()) throw IoError(std::string("checkpoint truncated while reading ") + what);
    const char* p = bytes.data() + pos;
    pos += n;
    return p;
  }
};

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(2); }

ModelConfig config_from_json(std::string_view text) {
  try {
    return config_parse(json::parse(text));
  } catch (const json::exception& e) {
    throw IoError(std::string("invalid model config: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParameterSet<float>& params,
                     const CheckpointMeta& meta) {
  std::string tensors;
  for (const auto& e : params.entries) {
    append_le_u32(tensors, static_cast<std::uint32_t>(e.name.size()));
    tensors += e.name;
    append_le_u32(tensors, static_cast<std::uint32_t>(e.shape.size()));
    for (auto extent : e.shape) append_le_u64(tensors, static_cast<std::uint64_t>(extent));
    append_le_floats(tensors, e.values);
  }
  json header{{"format", "acwm-checkpoint"},
              {"version", 1},
              {"config", config_json(config)},
              {"env", meta.env},
              {"frame_height", meta.frame_height},
              {"frame_width", meta.frame_width},
              {"spatial_factor", meta.spatial_factor},
              {"channel_mean", meta.normalizer.mean},
              {"channel_std", meta.normalizer.stddev},
              {"step", meta.step},
              {"final_loss", meta.final_loss},
              {"tensor_count", params.entries.size()},
              {"tensor_bytes", tensors.size()},
              {"checksum", hex64(fnv1a(tensors))}};
  const std::string text = header.dump();
  std::string bytes(kCheckpointMagic);
  append_le_u64(bytes, text.size());
  bytes += text;
  bytes += tensors;

  // Write to a sibling temp file and rename so readers never see a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::string_view(bytes).substr(0, 8) != kCheckpointMagic) {
    throw IoError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const std::uint64_t hlen = read_le_u64(bytes.data() + 8);
  if (16 + hlen > bytes.size()) throw IoError("checkpoint header truncated");

  Checkpoint ck;
  std::size_t tensor_count = 0, tensor_bytes = 0;
  std::uint64_t checksum = 0;
  try {
    const json h = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    ck.config = config_parse(h.at("config"));
    ck.meta.env = h.at("env").get<std::string>();
    ck.meta.frame_height = h.at("frame_height").get<int>();
    ck.meta.frame_width = h.at("frame_width").get<int>();
    ck.meta.spatial_factor = h.at("spatial_factor").get<int>();
    ck.meta.normalizer.mean = h.at("channel_mean").get<std::array<double, 3>>();
    ck.meta.normalizer.stddev = h.at("channel_std").get<std::array<double, 3>>();
    ck.meta.step = h.at("step").get<std::int64_t>();
    ck.meta.final_loss = h.at("final_loss").get<double>();
    tensor_count = h.at("tensor_count").get<std::size_t>();
    tensor_bytes = h.at("tensor_bytes").get<std::size_t>();
    checksum = parse_hex64(h.at("checksum").get<std::string>());
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint header is not valid: ") + e.what());
  }

  const std::size_t start = 16 + hlen;
  if (bytes.size() - start != tensor_bytes) {
    throw IoError("checkpoint tensor section has " + std::to_string(bytes.size() - start) + " bytes, header declares " +
                  std::to_string(tensor_bytes));
  }
  const std::string_view section(bytes.data() + start, tensor_bytes);
  if (fnv1a(section) != checksum) throw IoError("checkpoint checksum mismatch in '" + path.string() + "'");
  ck.id = hex64(checksum);

  Reader r{bytes, start};
  for (std::size_t t = 0; t < tensor_count; ++t) {
    const std::uint32_t nlen = read_le_u32(r.take(4, "name length"));
    std::string name(r.take(nlen, "name"), nlen);
    const std::uint32_t rank = read_le_u32(r.take(4, "rank"));
    Shape shape(rank);
    for (auto& extent : shape) extent = static_cast<std::int64_t>(read_le_u64(r.take(8, "extent")));
    const auto n = static_cast<std::size_t>(numel(shape));
    auto values = read_le_floats(r.take(n * 4, "values"), n);
    ck.parameters.add(std::move(name), std::move(shape), std::move(values));
  }
  // Validates names and shapes against the config.
  WorldModel<float> probe(ck.config, ck.parameters);
  ck.parameters = std::move(probe.parameters());
  return ck;
}

}  // namespace acwm::model
