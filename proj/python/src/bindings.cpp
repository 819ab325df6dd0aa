#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "geoadapt/checkpoint.hpp"
#include "geoadapt/cli.hpp"
#include "geoadapt/config.hpp"
#include "geoadapt/errors.hpp"
#include "geoadapt/geometry.hpp"
#include "geoadapt/reports.hpp"
#include "geoadapt/synthdata.hpp"
#include "geoadapt/trainer.hpp"

namespace py = pybind11;
using namespace geoadapt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  if (a.ndim() != 2) throw ValidationError("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
  return Tensor::matrix(rows, cols, std::vector<double>(a.data(), a.data() + a.size()));
}

Eigen::MatrixXd to_eigen(const Array& a) {
  const Tensor t = from_numpy(a);
  return diagnostics::to_matrix(t);
}

py::array_t<int> labels_to_numpy(const std::vector<int>& labels) {
  return py::array_t<int>(static_cast<py::ssize_t>(labels.size()), labels.data());
}

struct Run {
  train::RunResult result;
  train::TrainConfig config;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Geometry-aware domain adaptation core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  py::class_<data::DatasetSplit>(m, "Dataset")
      .def_property_readonly("source_x", [](const data::DatasetSplit& s) { return to_numpy(s.source.features); })
      .def_property_readonly("source_y", [](const data::DatasetSplit& s) { return labels_to_numpy(s.source.labels); })
      .def_property_readonly("target_x", [](const data::DatasetSplit& s) { return to_numpy(s.target.features); })
      .def_property_readonly("target_y", [](const data::DatasetSplit& s) { return labels_to_numpy(s.target.labels); })
      .def_property_readonly("dim", &data::DatasetSplit::dim)
      .def_property_readonly("num_classes", [](const data::DatasetSplit& s) { return s.meta.num_classes; })
      .def_property_readonly("generator", [](const data::DatasetSplit& s) { return s.meta.generator; })
      .def("save_csv", [](const data::DatasetSplit& s, const std::string& path) { data::save_csv(s, path); });

  m.def(
      "two_moons",
      [](std::size_t n, double rotation_deg, double noise_std, std::size_t nuisance_dims, std::uint64_t seed) {
        data::TwoMoonsParams p;
        p.n = n;
        p.rotation_deg = rotation_deg;
        p.noise_std = noise_std;
        p.nuisance_dims = nuisance_dims;
        p.seed = seed;
        return data::gen_two_moons_shift(p);
      },
      py::arg("n") = 512, py::arg("rotation_deg") = 40.0, py::arg("noise_std") = 0.1, py::arg("nuisance_dims") = 2,
      py::arg("seed") = 0);

  m.def(
      "gaussian_shift",
      [](std::size_t classes, std::size_t dims, std::size_t n_per_class, double class_separation,
         std::vector<double> anisotropy, std::vector<double> mean_shift, std::vector<double> cov_scale,
         std::uint64_t seed) {
        data::GaussianShiftParams p;
        p.classes = classes;
        p.dims = dims;
        p.n_per_class = n_per_class;
        p.class_separation = class_separation;
        p.anisotropy = std::move(anisotropy);
        p.mean_shift = std::move(mean_shift);
        p.cov_scale = std::move(cov_scale);
        p.seed = seed;
        return data::gen_gaussian_shift(p);
      },
      py::arg("classes") = 2, py::arg("dims") = 2, py::arg("n_per_class") = 256, py::arg("class_separation") = 4.0,
      py::arg("anisotropy") = std::vector<double>{}, py::arg("mean_shift") = std::vector<double>{},
      py::arg("cov_scale") = std::vector<double>{}, py::arg("seed") = 0);

  m.def("load_csv", [](const std::string& path) { return data::load_csv(path); });

  m.def("config_hash", [](const std::string& text) {
    return config::config_hash(config::from_json(nlohmann::json::parse(text)));
  });
  m.def("normalize_config", [](const std::string& text) {
    return config::to_json(config::from_json(nlohmann::json::parse(text))).dump();
  });

  py::class_<Run>(m, "Run")
      .def_property_readonly("metrics_json",
                             [](const Run& r) { return reports::metrics_json(r.result.metrics).dump(); })
      .def_property_readonly("losses_csv", [](const Run& r) { return reports::loss_series_csv(r.result.epochs); })
      .def_property_readonly("geometry_csv",
                             [](const Run& r) { return reports::geometry_csv(r.result.geometry_report); })
      .def_property_readonly("orthogonality_trace", [](const Run& r) { return r.result.orthogonality_trace; })
      .def("save_checkpoint",
           [](const Run& r, const std::string& path) { checkpoint::save(path, r.result.params, r.config); });

  m.def(
      "train",
      [](const std::string& config_text, const data::DatasetSplit& split) {
        Run run;
        run.config = config::from_json(nlohmann::json::parse(config_text));
        py::gil_scoped_release release;
        run.result = train::run(run.config, split);
        return run;
      },
      py::arg("config_json"), py::arg("dataset"));

  m.def(
      "evaluate_checkpoint",
      [](const std::string& path, const data::DatasetSplit& split) {
        const auto ck = checkpoint::load(path);
        return reports::metrics_json(train::evaluate_params(ck.params, split, ck.config)).dump();
      },
      py::arg("path"), py::arg("dataset"));

  m.def(
      "class_curvature", [](const Array& points) { return geometry::class_curvature(to_eigen(points)); },
      py::arg("points"));
  m.def(
      "alignment_residual",
      [](const Array& source, const Array& target, const std::string& mode) {
        if (mode != "centroid" && mode != "mean_pairwise") {
          throw ValidationError("mode must be \"centroid\" or \"mean_pairwise\"");
        }
        return geometry::class_alignment_residual(
            to_eigen(source), to_eigen(target),
            mode == "centroid" ? geometry::ResidualMode::kCentroid : geometry::ResidualMode::kMeanPairwise);
      },
      py::arg("source"), py::arg("target"), py::arg("mode") = "centroid");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "geoadapt");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
