#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "flowcast/aggregate.hpp"
#include "flowcast/errors.hpp"
#include "flowcast/fields.hpp"
#include "flowcast/harness.hpp"
#include "flowcast/log.hpp"
#include "flowcast/losses.hpp"
#include "flowcast/masknet.hpp"
#include "flowcast/metrics.hpp"
#include "flowcast/ofnet.hpp"
#include "flowcast/synthgen.hpp"
#include "flowcast/tracker.hpp"
#include "flowcast/warpop.hpp"

namespace py = pybind11;
using namespace flowcast;
using nlohmann::json;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

MaskGrid to_mask(const Array<std::uint8_t>& a) {
  if (a.ndim() != 2) throw ShapeError("mask must be a 2-D array");
  MaskGrid m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 0);
  const auto* src = a.data();
  for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] = src[i] ? 1 : 0;
  return m;
}

template <typename T>
Array<T> from_grid(const Grid<T>& g) {
  Array<T> out({g.height(), g.width()});
  std::copy(g.values().begin(), g.values().end(), out.mutable_data());
  return out;
}

LabelGrid to_labels(const Array<std::uint8_t>& a) {
  if (a.ndim() != 2) throw ShapeError("semantic map must be a 2-D array");
  LabelGrid g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + g.size(), g.values().begin());
  return g;
}

// [H, W, 2] with (u, v) in the last axis
FlowField to_flow(const Array<float>& a) {
  if (a.ndim() != 3 || a.shape(2) != 2) throw ShapeError("flow must be an [H, W, 2] array");
  FlowField f(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  const auto* src = a.data();
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u.values()[i] = src[2 * i];
    f.v.values()[i] = src[2 * i + 1];
  }
  return f;
}

Array<float> from_flow(const FlowField& f) {
  Array<float> out({f.height(), f.width(), 2});
  auto* dst = out.mutable_data();
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    dst[2 * i] = f.u.values()[i];
    dst[2 * i + 1] = f.v.values()[i];
  }
  return out;
}

std::vector<FlowField> to_flows(const Array<float>& a) {
  if (a.ndim() != 4 || a.shape(3) != 2) throw ShapeError("flow sequence must be a [K, H, W, 2] array");
  std::vector<FlowField> out;
  const auto h = a.shape(1), w = a.shape(2);
  for (py::ssize_t k = 0; k < a.shape(0); ++k) {
    FlowField f(static_cast<int>(h), static_cast<int>(w));
    const float* src = a.data(k);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      f.u.values()[i] = src[2 * i];
      f.v.values()[i] = src[2 * i + 1];
    }
    out.push_back(std::move(f));
  }
  return out;
}

Array<float> from_flows(const std::vector<FlowField>& flows) {
  if (flows.empty()) return Array<float>(std::vector<py::ssize_t>{0, 0, 0, 2});
  const int h = flows.front().height(), w = flows.front().width();
  Array<float> out({static_cast<int>(flows.size()), h, w, 2});
  auto* dst = out.mutable_data();
  for (const auto& f : flows) {
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      *dst++ = f.u.values()[i];
      *dst++ = f.v.values()[i];
    }
  }
  return out;
}

InstanceMask to_instance(const py::dict& d) {
  InstanceMask inst;
  inst.mask = to_mask(d["mask"].cast<Array<std::uint8_t>>());
  inst.class_id = d.contains("class_id") ? d["class_id"].cast<int>() : 1;
  inst.score = d.contains("score") ? d["score"].cast<double>() : 1.0;
  inst.id = d.contains("id") ? d["id"].cast<std::int64_t>() : 0;
  return inst;
}

py::dict from_instance(const InstanceMask& inst) {
  py::dict d;
  d["id"] = inst.id;
  d["class_id"] = inst.class_id;
  d["score"] = inst.score;
  d["mask"] = from_grid(inst.mask);
  return d;
}

std::vector<std::vector<InstanceMask>> to_images(const py::list& images) {
  std::vector<std::vector<InstanceMask>> out;
  for (const auto& img : images) {
    auto& v = out.emplace_back();
    for (const auto& d : img.cast<py::list>()) v.push_back(to_instance(d.cast<py::dict>()));
  }
  return out;
}

py::dict from_sample(const SequenceSample& s) {
  py::dict d;
  d["flows"] = from_flows(s.flows);
  Array<std::uint8_t> sem({s.frames(), s.height(), s.width()});
  auto* dst = sem.mutable_data();
  for (const auto& m : s.semantics) dst = std::copy(m.labels.values().begin(), m.labels.values().end(), dst);
  d["semantics"] = sem;
  py::list frames;
  for (const auto& frame : s.instances) {
    py::list insts;
    for (const auto& inst : frame) insts.append(from_instance(inst));
    frames.append(insts);
  }
  d["instances"] = frames;
  d["seed"] = s.seed;
  return d;
}

template <typename T>
T parse(const std::string& text) {
  return json::parse(text).get<T>();
}

}  // namespace

PYBIND11_MODULE(_flowcast, m) {
  m.doc() = "Instance-mask forecasting by warping masks along forecast optical flow";
  set_logging(false);

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("set_logging", &set_logging, py::arg("enabled"));

  // fields
  m.def("flow_read", [](const std::filesystem::path& p) { return from_flow(flow_read(p)); }, py::arg("path"));
  m.def("flow_write", [](const std::filesystem::path& p, const Array<float>& a) { flow_write(to_flow(a), p); },
        py::arg("path"), py::arg("flow"));
  m.def("mask_iou", [](const Array<std::uint8_t>& a, const Array<std::uint8_t>& b) { return mask_iou(to_mask(a), to_mask(b)); },
        py::arg("a"), py::arg("b"));
  m.def(
      "bbox_iou",
      [](std::array<int, 4> a, std::array<int, 4> b) {
        return bbox_iou(BBox::FromCorners(a[0], a[1], a[2], a[3]), BBox::FromCorners(b[0], b[1], b[2], b[3]));
      },
      py::arg("a"), py::arg("b"), "Boxes as half-open (x0, y0, x1, y1).");

  // losses
  m.def("dice_loss", [](const Array<double>& p, const Array<double>& g) {
    if (p.size() != g.size()) throw ShapeError("dice_loss: shapes differ");
    return dice_loss(std::span(p.data(), p.size()), std::span(g.data(), g.size()));
  }, py::arg("prob"), py::arg("gt"));
  m.def("loss_flow", [](const Array<float>& p, const Array<float>& g) { return loss_flow(to_flows(p), to_flows(g)); },
        py::arg("pred"), py::arg("gt"), "Sequence L2 over [K, H, W, 2] arrays.");

  // warping and aggregation
  m.def("copy_last", [](const Array<std::uint8_t>& mask) { return from_grid(copy_last({0, 1, 1.0, to_mask(mask)}).mask); },
        py::arg("mask"));
  m.def("shift_mask", [](const Array<std::uint8_t>& mask, const Array<float>& flow) {
    return from_grid(shift_mask({0, 1, 1.0, to_mask(mask)}, to_flow(flow)).mask);
  }, py::arg("mask"), py::arg("flow"));
  m.def("warp_mask", [](const Array<std::uint8_t>& mask, const Array<float>& flow) {
    return from_grid(warp_mask({0, 1, 1.0, to_mask(mask)}, to_flow(flow)).mask);
  }, py::arg("mask"), py::arg("flow"));
  m.def("warp_iterated", [](const Array<std::uint8_t>& mask, const Array<float>& flows) {
    const auto f = to_flows(flows);
    return from_grid(warp_iterated({0, 1, 1.0, to_mask(mask)}, f).mask);
  }, py::arg("mask"), py::arg("flows"));
  m.def("rescore", [](const py::dict& inst, int working_width) {
    return rescore(to_instance(inst), RescoreConfig::for_width(working_width));
  }, py::arg("instance"), py::arg("working_width") = 2048);
  m.def("fuse_semantic", [](const py::list& instances, int height, int width) {
    std::vector<InstanceMask> v;
    for (const auto& d : instances) v.push_back(to_instance(d.cast<py::dict>()));
    return from_grid(fuse_semantic(v, height, width).labels);
  }, py::arg("instances"), py::arg("height"), py::arg("width"));

  // metrics
  m.def("semantic_iou", [](const Array<std::uint8_t>& pred, const Array<std::uint8_t>& gt) {
    SemanticMap p, g;
    p.labels = to_labels(pred);
    g.labels = to_labels(gt);
    const auto r = semantic_iou(p, g);
    py::dict d;
    d["mean"] = r.mean;
    d["per_class"] = r.per_class;
    return d;
  }, py::arg("pred"), py::arg("gt"));
  m.def("average_precision", [](const py::list& preds, const py::list& gts) {
    const auto r = average_precision(to_images(preds), to_images(gts));
    py::dict d;
    d["ap"] = r.ap;
    d["ap50"] = r.ap50;
    d["per_class"] = r.per_class;
    return d;
  }, py::arg("preds"), py::arg("gts"), "Lists (one per image) of {mask, class_id, score} dicts.");
  m.def("flow_mse", [](const Array<float>& pred, const Array<float>& gt) {
    std::vector<std::tuple<double, double, double>> out;
    for (const auto& e : flow_mse(to_flows(pred), to_flows(gt))) out.emplace_back(e.mse, e.mse_u, e.mse_v);
    return out;
  }, py::arg("pred"), py::arg("gt"), "Per-step (mse, mse_u, mse_v).");

  // data
  m.def("_generate", [](const std::string& cfg) { return from_sample(generate(parse<SceneConfig>(cfg))); },
        py::arg("config_json"));
  m.def("_emit_dataset", [](const std::string& cfg, int n, const std::filesystem::path& out) {
    emit_dataset(parse<SceneConfig>(cfg), n, out);
    return (out / kManifestName).string();
  }, py::arg("config_json"), py::arg("n_sequences"), py::arg("out_dir"));

  // models
  py::class_<FlowForecaster>(m, "FlowForecaster")
      .def(py::init([](const std::string& cfg, std::uint64_t seed) { return FlowForecaster(parse<ForecasterConfig>(cfg), seed); }),
           py::arg("config_json"), py::arg("seed") = 0)
      .def_static("load", &FlowForecaster::load, py::arg("path"))
      .def("save", &FlowForecaster::save, py::arg("path"))
      .def_property_readonly("config_json", [](const FlowForecaster& f) { return json(f.config()).dump(); })
      .def("rollout", [](const FlowForecaster& f, const Array<float>& past, int n) {
        const auto p = to_flows(past);
        return from_flows(f.rollout(p, n));
      }, py::arg("past"), py::arg("n"), "Past [T, H, W, 2] flows -> [n, H, W, 2] forecasts.");

  py::class_<MaskWarper>(m, "MaskWarper")
      .def(py::init([](const std::string& cfg, std::uint64_t seed) { return MaskWarper(parse<WarperConfig>(cfg), seed); }),
           py::arg("config_json"), py::arg("seed") = 0)
      .def_static("load", &MaskWarper::load, py::arg("path"))
      .def("save", &MaskWarper::save, py::arg("path"))
      .def_property_readonly("config_json", [](const MaskWarper& w) { return json(w.config()).dump(); })
      .def("predict", [](const MaskWarper& w, const Array<float>& flow, const Array<std::uint8_t>& semantic,
                         const Array<std::uint8_t>& mask) {
        SemanticMap sem;
        sem.labels = to_labels(semantic);
        const auto out = w.predict_mask(prepare_input(to_flow(flow), sem, to_mask(mask)));
        return py::make_tuple(from_grid(out.prob), from_grid(out.mask));
      }, py::arg("flow"), py::arg("semantic"), py::arg("mask"), "Returns (probability, binary mask).");

  // pipeline
  m.def("_desk_config", [] { return json(desk_config()).dump(); });
  m.def("_run_pipeline", [](const std::string& cfg) {
    const auto c = parse<ExperimentConfig>(cfg);
    py::gil_scoped_release release;
    return json(run_pipeline(c)).dump();
  }, py::arg("config_json"));
}
