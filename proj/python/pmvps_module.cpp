#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pmvps/bench.hpp"
#include "pmvps/error.hpp"
#include "pmvps/integrate.hpp"
#include "pmvps/photometric.hpp"
#include "pmvps/pipeline.hpp"
#include "pmvps/synth.hpp"

namespace py = pybind11;

namespace {

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

py::dict factors_dict(const pmvps::PhotometricFactors& f) {
  py::dict d;
  d["lighting"] = Eigen::MatrixXd(f.lighting);
  d["surface"] = Eigen::MatrixXd(f.surface);
  d["residual"] = f.residual;
  d["trace"] = f.trace;
  d["iterations"] = f.iterations;
  d["converged"] = f.converged;
  return d;
}

py::dict rendering_dict(const pmvps::Rendering& r) {
  py::list frames;
  for (const auto& f : r.frames) frames.append(Eigen::ArrayXXd(f.pixels));
  py::dict d;
  d["frames"] = frames;
  d["sparse_points"] = Eigen::MatrixXd(r.sparse_points);
  py::list proj;
  for (const auto& p : r.projections) proj.append(Eigen::MatrixXd(p));
  d["projections"] = proj;
  d["dense_truth"] = Eigen::MatrixXd(r.dense_truth);
  d["hit"] = BoolArray(r.hit);
  d["albedo"] = Eigen::ArrayXXd(r.albedo);
  return d;
}

}  // namespace

PYBIND11_MODULE(_pmvps, m) {
  m.doc() = "Piecewise multi-view photometric stereo";

  static py::exception<pmvps::Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const pmvps::Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def("shade", [](const Eigen::Vector4d& light, double albedo, const Eigen::Vector3d& normal) {
    return pmvps::shade(light, albedo, normal);
  });

  m.def("project_manifold", [](const Eigen::Vector4d& column) {
    const auto p = pmvps::project_manifold(column);
    return py::make_tuple(Eigen::Vector4d(p.column), p.degenerate);
  });

  m.def(
      "solve_masked",
      [](const Eigen::MatrixXd& J, const BoolArray& D, double tol, int max_iters) {
        pmvps::SolverOptions o;
        o.tol = tol;
        o.max_iters = max_iters;
        return factors_dict(pmvps::solve_masked(J, D, std::nullopt, o));
      },
      py::arg("intensities"), py::arg("observed"), py::arg("tol") = 1e-8, py::arg("max_iters") = 300,
      "Factor an f x b intensity matrix with its boolean mask into lighting (f x 4) and surface (4 x b).");

  m.def(
      "integrate_gradients",
      [](const Eigen::ArrayXXd& p, const Eigen::ArrayXXd& q, const BoolArray& known, const std::string& backend) {
        if (backend != "spectral" && backend != "poisson") {
          throw pmvps::Error(pmvps::ErrorCode::InvalidArgument, "backend must be 'spectral' or 'poisson'");
        }
        return pmvps::integrate_gradients(p, q, known,
                                          backend == "poisson" ? pmvps::IntegrationBackend::MaskedPoisson
                                                               : pmvps::IntegrationBackend::Spectral);
      },
      py::arg("p"), py::arg("q"), py::arg("known"), py::arg("backend") = "spectral");

  m.def(
      "render_scene",
      [](const std::string& scene_json) {
        return rendering_dict(pmvps::render(pmvps::make_scene(pmvps::parse_scene(scene_json))));
      },
      py::arg("scene_json"), "Render a synthetic scene given as a JSON string.");

  m.def("error_3d", &pmvps::error_3d, py::arg("reconstruction"), py::arg("truth"));

  m.def(
      "reconstruct",
      [](const std::string& config_json, const std::string& base_dir) {
        const pmvps::PipelineConfig config = pmvps::parse_config(config_json, base_dir);
        pmvps::PipelineResult result;
        {
          py::gil_scoped_release release;
          result = pmvps::run_pipeline(config);
        }
        py::dict d;
        d["points"] = Eigen::Matrix3Xd(result.surface.points);
        d["report"] = pmvps::report_to_json(result.report);
        d["failed_patches"] = result.report.failed_patches;
        return d;
      },
      py::arg("config_json"), py::arg("base_dir") = "",
      "Run the whole pipeline; returns the dense points (3 x n) and the JSON report.");

  m.def(
      "bench",
      [](const std::string& scene_json, int max_iters) {
        pmvps::SceneSpec spec = pmvps::parse_scene(scene_json);
        spec.static_view = true;
        pmvps::BenchOptions o;
        o.solver.max_iters = o.solver.warmup_iters = max_iters;
        const auto b = pmvps::benchmark_piecewise_vs_global(pmvps::make_scene(spec), o);
        py::dict d;
        d["patches"] = b.patches;
        d["columns"] = b.columns;
        d["missing_percent"] = b.missing_percent;
        d["global_seconds"] = b.global.seconds;
        d["piecewise_seconds"] = b.piecewise.seconds;
        d["global_normal_error"] = b.global.normal_error;
        d["piecewise_normal_error"] = b.piecewise.normal_error;
        d["ratio"] = b.ratio();
        return d;
      },
      py::arg("scene_json"), py::arg("max_iters") = 1000);
}
