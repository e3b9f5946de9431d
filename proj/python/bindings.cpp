#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ibpd/analysis.hpp"
#include "ibpd/cli.hpp"
#include "ibpd/datasets.hpp"
#include "ibpd/errors.hpp"
#include "ibpd/ibp_prior.hpp"
#include "ibpd/model.hpp"
#include "ibpd/training.hpp"

namespace py = pybind11;
using namespace ibpd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-d array, got " + std::to_string(a.ndim()) + "-d");
  const auto* p = a.data();
  return Tensor::from({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                      std::vector<double>(p, p + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict examples_to_dict(const std::vector<LabeledExample>& ex) {
  const std::size_t width = ex.empty() ? 0 : ex.front().x.size();
  Array x({static_cast<py::ssize_t>(ex.size()), static_cast<py::ssize_t>(width)});
  py::array_t<int> label(ex.size()), subject(ex.size()), color(ex.size());
  py::array_t<bool> flag(ex.size());
  double* xp = x.mutable_data();
  for (std::size_t i = 0; i < ex.size(); ++i) {
    std::copy(ex[i].x.begin(), ex[i].x.end(), xp + i * width);
    label.mutable_at(i) = ex[i].task_label;
    subject.mutable_at(i) = ex[i].subject_id;
    flag.mutable_at(i) = ex[i].artifact_flag;
    color.mutable_at(i) = ex[i].color_id.value_or(-1);
  }
  py::dict d;
  d["x"] = x;
  d["label"] = label;
  d["subject"] = subject;
  d["artifact_flag"] = flag;
  d["color"] = color;
  return d;
}

nlohmann::json to_json_obj(const py::dict& d) {
  auto dumps = py::module_::import("json").attr("dumps");
  return nlohmann::json::parse(dumps(d).cast<std::string>());
}

py::object from_json_obj(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_ibpd, m) {
  m.doc() = "Bindings for the ibpd library";
  m.attr("__version__") = "0.1.0";

  // Registered base first: the most recent registration is tried first.
  const auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process. Returns (exit code, stdout, stderr).");

  m.def("default_config", [] { return from_json_obj(default_run_config()); });

  m.def(
      "expected_active",
      [](double alpha, double beta, std::size_t K) { return expected_active(IBPConfig{alpha, beta, K}); },
      py::arg("alpha") = 10.0, py::arg("beta") = 1.0, py::arg("K") = 50);

  m.def(
      "sample_prior",
      [](double alpha, double beta, std::size_t K, std::size_t n, std::uint64_t seed) {
        IBPConfig cfg{alpha, beta, K};
        cfg.validate();
        Rng rng(seed);
        return to_array(sample_prior(cfg, n, rng).Z);
      },
      py::arg("alpha") = 10.0, py::arg("beta") = 1.0, py::arg("K") = 50, py::arg("n") = 1,
      py::arg("seed") = 0, "Binary feature matrix [n x K] drawn from the truncated prior.");

  m.def(
      "synth_ecg",
      [](const py::dict& overrides) {
        nlohmann::json j = SynthEcgConfig{};
        const nlohmann::json given = to_json_obj(overrides);
        for (const auto& [k, v] : given.items()) {
          if (!j.contains(k)) throw ConfigError("unknown key: " + k);
          j[k] = v;
        }
        const SynthEcgConfig cfg = j.get<SynthEcgConfig>();
        cfg.validate();
        py::dict d = examples_to_dict(synth_ecg_generate(cfg));
        d["artifact_region"] = cfg.artifact_region();
        return d;
      },
      py::arg("config") = py::dict(), "Synthetic beats as numpy arrays; `config` overrides defaults.");

  m.def(
      "load_dataset",
      [](const std::filesystem::path& path) {
        nlohmann::json header;
        py::dict d = examples_to_dict(load_dataset(path, &header));
        d["header"] = from_json_obj(header);
        return d;
      },
      py::arg("path"));

  py::class_<Model>(m, "Model")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const Model& model, const std::filesystem::path& p) { save_checkpoint(model, p); })
      .def_property_readonly("config", [](const Model& model) { return from_json_obj(model.config()); })
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def("predict", [](const Model& model, const Array& x) { return predict_labels(model, to_tensor(x)); })
      .def(
          "reconstruct",
          [](const Model& model, const Array& x, std::uint64_t seed,
             const std::optional<std::vector<int>>& labels) {
            return to_array(reconstruct(model, to_tensor(x), seed, labels));
          },
          py::arg("x"), py::arg("seed") = 0, py::arg("labels") = py::none())
      .def(
          "representations",
          [](const Model& model, const Array& x, std::uint64_t seed) {
            const Tensor xt = to_tensor(x);
            std::vector<LabeledExample> ex(xt.shape()[0]);
            const std::size_t w = xt.shape()[1];
            for (std::size_t i = 0; i < ex.size(); ++i)
              ex[i].x.assign(xt.data().begin() + i * w, xt.data().begin() + (i + 1) * w);
            const Representations r = extract_representations(model, ex, seed);
            py::dict d;
            d["y_t"] = to_array(r.y_t);
            d["y_c"] = to_array(r.y_c);
            d["Z"] = r.Z ? py::object(to_array(*r.Z)) : py::none();
            return d;
          },
          py::arg("x"), py::arg("seed") = 0);
}
