// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "acwm/cli/cli.hpp"
#include "acwm/codec/codec.hpp"
#include "acwm/dataset/dataset.hpp"
#include "acwm/flow/flow.hpp"
#include "acwm/metrics/metrics.hpp"
#include "acwm/model/checkpoint.hpp"

namespace py = pybind11;
using namespace acwm;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

FloatArray to_array(std::vector<float> v, std::vector<py::ssize_t> shape) {
  FloatArray a(shape);
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

std::span<const float> view(const FloatArray& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

// (T, H, W, 3) video array -> metric view.
metrics::VideoRef video_ref(const FloatArray& a) {
  if (a.ndim() != 4 || a.shape(3) != 3) throw ShapeError("expected a (frames, height, width, 3) array");
  return {view(a), static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
}

py::dict episode_dict(const dataset::Episode& ep) {
  py::dict d;
  d["env"] = std::string(envs::to_string(ep.env));
  d["split"] = std::string(dataset::to_string(ep.split));
  d["seed"] = ep.seed;
  d["ood_label"] = ep.ood_label;
  d["frames"] = to_array(ep.frames, {ep.frame_count, ep.height, ep.width, 3});
  d["actions"] = to_array(ep.actions, {ep.frame_count, ep.action_dim});
  return d;
}

/// A checkpoint loaded for inference.
class Predictor {
 public:
  explicit Predictor(const std::filesystem::path& path)
      : ck_(model::load_checkpoint(path)), net_(ck_.config, ck_.parameters) {
    video_.height = ck_.meta.frame_height;
    video_.width = ck_.meta.frame_width;
    video_.spatial_factor = ck_.meta.spatial_factor;
    video_.normalizer = ck_.meta.normalizer;
  }

  FloatArray predict(const FloatArray& first_frame, const FloatArray& actions, int n_steps, std::uint64_t seed,
                     double shift) const {
    flow::FlowSchedule s;
    s.shift = shift;
    std::vector<float> out;
    {
      py::gil_scoped_release release;
      out = flow::predict_window(net_, video_, view(first_frame), view(actions), n_steps, s, seed);
    }
    return frames(std::move(out));
  }

  FloatArray rollout(const FloatArray& first_frame, const FloatArray& actions, int windows, int n_steps,
                     std::uint64_t seed, double shift) const {
    flow::FlowSchedule s;
    s.shift = shift;
    std::vector<float> out;
    {
      py::gil_scoped_release release;
      out = flow::rollout_autoregressive(net_, video_, view(first_frame), view(actions), windows, n_steps, s, seed);
    }
    return frames(std::move(out));
  }

  std::string id() const { return ck_.id; }
  std::string env() const { return ck_.meta.env; }
  int action_frames() const { return ck_.config.action_frames(); }
  std::size_t parameter_count() const { return net_.parameter_count(); }

 private:
  FloatArray frames(std::vector<float> v) const {
    const py::ssize_t fs = static_cast<py::ssize_t>(video_.height) * video_.width * 3;
    const py::ssize_t n = static_cast<py::ssize_t>(v.size()) / fs;
    return to_array(std::move(v), {n, video_.height, video_.width, 3});
  }

  model::Checkpoint ck_;
  model::WorldModel<float> net_;
  flow::VideoSpec video_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Action-conditioned video world models: environments, codec, flow-matching DiT and metrics.";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "encode",
      [](const FloatArray& video, int spatial_factor, int temporal_factor) {
        const auto ref = video_ref(video);
        const auto z = codec::encode(view(video), ref.frames, ref.height, ref.width, spatial_factor, temporal_factor);
        return to_array(z.tokens, {z.steps, z.rows, z.cols, z.channels});
      },
      py::arg("video"), py::arg("spatial_factor") = 2, py::arg("temporal_factor") = 4,
      "Pack a (T, H, W, 3) video into (T_l, H/f, W/f, 3 f^2 r) latent tokens.");
  m.def(
      "decode",
      [](const FloatArray& latent, int spatial_factor, int temporal_factor) {
        if (latent.ndim() != 4) throw ShapeError("expected a (steps, rows, cols, channels) array");
        codec::LatentVideo z;
        z.steps = static_cast<int>(latent.shape(0));
        z.rows = static_cast<int>(latent.shape(1));
        z.cols = static_cast<int>(latent.shape(2));
        z.channels = static_cast<int>(latent.shape(3));
        z.spatial_factor = spatial_factor;
        z.temporal_factor = temporal_factor;
        z.tokens.assign(latent.data(), latent.data() + latent.size());
        z.sigma.assign(static_cast<std::size_t>(z.steps), 0.0f);
        const int frames = 1 + temporal_factor * (z.steps - 1);
        return to_array(codec::decode(z), {frames, z.rows * spatial_factor, z.cols * spatial_factor, 3});
      },
      py::arg("latent"), py::arg("spatial_factor") = 2, py::arg("temporal_factor") = 4);

  m.def(
      "mse", [](const FloatArray& gt, const FloatArray& pred, int first) {
        return metrics::compute_mse(video_ref(gt), video_ref(pred), first);
      },
      py::arg("gt"), py::arg("pred"), py::arg("first_frame") = 0);
  m.def(
      "psnr", [](const FloatArray& gt, const FloatArray& pred, int first) {
        return metrics::compute_psnr(video_ref(gt), video_ref(pred), 1.0, first);
      },
      py::arg("gt"), py::arg("pred"), py::arg("first_frame") = 0);
  m.def(
      "ssim", [](const FloatArray& gt, const FloatArray& pred, int first) {
        return metrics::compute_ssim(video_ref(gt), video_ref(pred), 1.0, first);
      },
      py::arg("gt"), py::arg("pred"), py::arg("first_frame") = 0);
  m.def(
      "mmse", [](const FloatArray& gt, const FloatArray& pred, int first) {
        return metrics::compute_mmse(video_ref(gt), video_ref(pred), first);
      },
      py::arg("gt"), py::arg("pred"), py::arg("first_frame") = 0, "Motion-weighted MSE.");
  m.def("psnr_from_mse", &metrics::psnr_from_mse, py::arg("mse"), py::arg("max_value") = 1.0);
  m.def("shift_time", &flow::shift_time, py::arg("u"), py::arg("shift"));
  m.def("flow_time", &flow::flow_time, py::arg("u"), py::arg("shift"));

  m.def(
      "generate_split",
      [](const std::string& env, const std::string& split, int episodes, const std::filesystem::path& dir,
         int latent_steps, int height, int width) {
        auto spec = dataset::default_split(envs::parse_env_kind(env), dataset::parse_split(split), episodes);
        spec.latent_steps = latent_steps;
        spec.height = height;
        spec.width = width;
        const auto manifest = dataset::generate_split(spec, dir);
        std::vector<std::filesystem::path> files;
        for (std::size_t i = 0; i < manifest.entries.size(); ++i) files.push_back(manifest.episode_path(i));
        return files;
      },
      py::arg("env"), py::arg("split"), py::arg("episodes"), py::arg("directory"), py::arg("latent_steps") = 9,
      py::arg("height") = 32, py::arg("width") = 32, "Generate a split; returns the episode file paths.");
  m.def(
      "read_episode", [](const std::filesystem::path& p) { return episode_dict(dataset::read_episode(p)); },
      py::arg("path"));

  m.def(
      "parameter_count", [](const std::string& preset) { return model::parameter_count(model::ModelConfig::preset(preset)); },
      py::arg("preset"));

  py::class_<Predictor>(m, "WorldModel")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def("predict", &Predictor::predict, py::arg("first_frame"), py::arg("actions"), py::arg("n_steps") = 50,
           py::arg("seed") = 0, py::arg("shift") = 5.0, "Predict one window from a context frame and actions.")
      .def("rollout", &Predictor::rollout, py::arg("first_frame"), py::arg("actions"), py::arg("windows"),
           py::arg("n_steps") = 50, py::arg("seed") = 0, py::arg("shift") = 5.0)
      .def_property_readonly("id", &Predictor::id)
      .def_property_readonly("env", &Predictor::env)
      .def_property_readonly("action_frames", &Predictor::action_frames)
      .def_property_readonly("parameter_count", &Predictor::parameter_count);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the acwm command line in-process; returns (exit_code, stdout, stderr).");
}
