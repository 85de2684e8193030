#include "clustcr/data.hpp"
#include "clustcr/errors.hpp"
#include "clustcr/estimator.hpp"
#include "clustcr/gof.hpp"
#include "clustcr/inference.hpp"
#include "clustcr/simulation.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>

namespace py = pybind11;
using namespace clustcr;

namespace {

DesignSpec design_from(const std::string& name) {
  DesignSpec d;
  if (name == "time") d.time = TimeTransform::Identity;
  else if (name == "logtime") d.time = TimeTransform::Log;
  else throw DomainError("design must be 'time' or 'logtime'");
  return d;
}

BandWeight weight_from(const std::string& name) {
  if (name == "ep") return BandWeight::EqualPrecision;
  if (name == "hw") return BandWeight::HallWellner;
  throw DomainError("weight must be 'ep' or 'hw'");
}

struct Model {
  Frame frame;
  FitResult fit;
  InfluenceSet infl;

  Model(const Dataset& d, const DesignSpec& design) : frame(d), fit(clustcr::fit(frame, design)) {
    if (!fit.converged()) throw NoConvergence("estimation did not converge");
    infl = influence(frame, fit);
  }

  void check_cause(int l) const {
    if (l < 1 || l > frame.k) throw DomainError("cause index out of range");
  }

  Eigen::VectorXd vec(const std::vector<double>& v) const {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  Eigen::VectorXd z0_or_zero(const std::optional<Eigen::VectorXd>& z0) const {
    if (!z0) return Eigen::VectorXd::Zero(frame.p);
    if (z0->size() != frame.p) throw DomainError("z0 has the wrong length");
    return *z0;
  }
};

py::dict band_dict(const BandResult& b) {
  py::dict d;
  d["times"] = b.times;
  d["estimate"] = b.estimate;
  d["lower"] = b.lower;
  d["upper"] = b.upper;
  d["c_alpha"] = b.c_alpha;
  d["warnings"] = b.warnings;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Marginal proportional cause-specific hazards for clustered competing risks with missing causes";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<SingularMatrix>(m, "SingularMatrix", base.ptr());
  py::register_exception<NoConvergence>(m, "NoConvergence", base.ptr());

  py::class_<Dataset>(m, "Dataset")
      .def_static(
          "from_csv",
          [](const std::string& path, int causes) {
            CsvSchema s;
            s.k = causes;
            return load_csv(path, s);
          },
          py::arg("path"), py::arg("causes") = 0)
      .def("to_csv", [](const Dataset& d, const std::string& path) { write_csv(d, path); })
      .def_property_readonly("n_clusters", &Dataset::n_clusters)
      .def_property_readonly("n_subjects", &Dataset::n_subjects)
      .def_property_readonly("k", &Dataset::k)
      .def_property_readonly("p", &Dataset::p)
      .def_property_readonly("q", &Dataset::q)
      .def("__repr__", [](const Dataset& d) {
        return "<Dataset clusters=" + std::to_string(d.n_clusters()) + " subjects=" + std::to_string(d.n_subjects()) +
               " k=" + std::to_string(d.k()) + ">";
      });

  m.def(
      "simulate",
      [](int scenario_id, std::size_t n, std::uint64_t seed, std::uint64_t rep) {
        ScenarioConfig cfg = scenario(scenario_id);
        cfg.n = n;
        cfg.seed = seed;
        return generate_dataset(cfg, rep);
      },
      py::arg("scenario") = 1, py::arg("n") = 50, py::arg("seed") = 1, py::arg("rep") = 0,
      "Draw one clustered dataset from simulation scenario 1 or 2.");

  py::class_<Model, std::shared_ptr<Model>>(m, "Model")
      .def_property_readonly("converged", [](const Model& x) { return x.fit.converged(); })
      .def_property_readonly("k", [](const Model& x) { return x.frame.k; })
      .def_property_readonly("n_clusters", [](const Model& x) { return x.frame.n_clusters; })
      .def_property_readonly("grid", [](const Model& x) { return x.fit.grid; })
      .def_property_readonly("gamma", [](const Model& x) { return x.fit.missingness.gamma; })
      .def("beta", [](const Model& x, int l) { x.check_cause(l); return Eigen::VectorXd(x.fit.cause(l).beta); },
           py::arg("cause"))
      .def("se",
           [](const Model& x, int l) {
             x.check_cause(l);
             return Eigen::VectorXd(x.infl.cause(l).standard_errors(x.frame.n_clusters));
           },
           py::arg("cause"))
      .def("cov",
           [](const Model& x, int l) {
             x.check_cause(l);
             return Eigen::MatrixXd(beta_cov(x.infl, l) / static_cast<double>(x.frame.n_clusters));
           },
           py::arg("cause"))
      .def("cumhaz",
           [](const Model& x, int l) {
             x.check_cause(l);
             return x.vec(x.fit.cause(l).cumhaz.values());
           },
           py::arg("cause"), "Baseline cumulative hazard on the grid.")
      .def("cumhaz_se",
           [](const Model& x, int l) {
             x.check_cause(l);
             return Eigen::VectorXd(
                 (lambda_variance(x.infl, l) / static_cast<double>(x.frame.n_clusters)).cwiseSqrt());
           },
           py::arg("cause"))
      .def("cif",
           [](const Model& x, int l, std::optional<Eigen::VectorXd> z0) {
             x.check_cause(l);
             const auto F = clustcr::cif(x.fit, x.z0_or_zero(z0));
             return x.vec(F[static_cast<std::size_t>(l - 1)].values());
           },
           py::arg("cause"), py::arg("z0") = py::none(), "Cumulative incidence on the grid at covariates z0.")
      .def("band",
           [](const Model& x, int l, const std::string& target, const std::string& weight, double level, int nsim,
              std::uint64_t seed, std::optional<Eigen::VectorXd> z0) {
             x.check_cause(l);
             BandOptions o;
             o.weight = weight_from(weight);
             o.level = level;
             o.nsim = nsim;
             o.seed = seed;
             BandTarget t;
             if (target == "cumhaz") t = BandTarget::CumulativeHazard;
             else if (target == "cif") t = BandTarget::CumulativeIncidence;
             else throw DomainError("target must be 'cumhaz' or 'cif'");
             return band_dict(simultaneous_band(x.frame, x.fit, x.infl, t, l, x.z0_or_zero(z0), o));
           },
           py::arg("cause"), py::arg("target") = "cif", py::arg("weight") = "ep", py::arg("level") = 0.95,
           py::arg("nsim") = 1000, py::arg("seed") = 1, py::arg("z0") = py::none());

  m.def(
      "fit",
      [](const Dataset& d, const std::string& design) {
        py::gil_scoped_release release;
        return std::make_shared<Model>(d, design_from(design));
      },
      py::arg("data"), py::arg("design") = "time", "Fit both estimation stages and the influence functions.");

  m.def(
      "gof",
      [](const Dataset& d, int cause, int nsim, std::uint64_t seed, const std::string& design) {
        GofResult r;
        {
          py::gil_scoped_release release;
          const Frame f(d);
          r = gof_test(f, fit_missingness(f, design_from(design)), cause, nsim, seed);
        }
        py::dict out;
        out["statistic"] = r.statistic;
        out["p_value"] = r.p_value;
        out["critical"] = r.critical;
        out["times"] = r.process.times();
        out["process"] = r.process.values();
        return out;
      },
      py::arg("data"), py::arg("cause") = 1, py::arg("nsim") = 1000, py::arg("seed") = 1,
      py::arg("design") = "time", "Cumulative-residual test of the cause-probability model.");
}
