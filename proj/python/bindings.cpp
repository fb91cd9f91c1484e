#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "qmix/approx.hpp"
#include "qmix/experiments.hpp"

namespace py = pybind11;
using namespace qmix;
using nlohmann::json;

namespace {

struct Action {
  ActionPtr ptr;
  int N() const { return ptr->N(); }
  std::string describe() const { return ptr->spec().describe(); }
  std::string to_json_str() const { return to_json(*ptr).dump(); }
};

struct Model {
  ModelPtr ptr;
};

json run_to_json(const RunResult& r) {
  json rows = json::array(), cms = json::array();
  for (const auto& x : r.rows)
    rows.push_back({{"N", x.N}, {"seed", x.seed}, {"eta", x.eta}, {"E1", x.E1}, {"E2", x.E2},
                    {"quantity", x.quantity}, {"observable", x.observable}, {"value", x.value}});
  for (const auto& c : r.cms)
    cms.push_back({{"N", c.N}, {"seed", c.seed}, {"J_lo", c.J_lo}, {"J_hi", c.J_hi}, {"n", c.n}, {"count", c.count},
                   {"lower", c.lower}, {"upper", c.upper}, {"mu_J", c.mu_J}, {"bad", c.bad},
                   {"bad_certified", c.bad_certified}, {"vacuous", c.vacuous}, {"inside", c.inside}});
  return {{"rows", rows}, {"cms", cms}, {"audits", r.audits}, {"summary", r.summary}, {"seconds", r.seconds}};
}

AlgebraElement default_symbol(const Action& a) {
  return AlgebraElement::indicator(a.ptr->spec_ptr(), standard_generators(a.ptr->spec()));
}

}  // namespace

PYBIND11_MODULE(_qmix, m) {
  m.doc() = "Quantum ergodicity and mixing experiments on Schreier graphs";

  auto base = py::register_exception<std::runtime_error>(m, "QmixError", PyExc_RuntimeError);
  auto arg = py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", arg.ptr());
  auto solver = py::register_exception<SolverError>(m, "SolverError", base.ptr());
  py::register_exception<BracketViolation>(m, "BracketViolation", solver.ptr());
  py::register_exception<BudgetError>(m, "BudgetError", base.ptr());

  m.def("_scenarios", [] {
    std::vector<std::string> names;
    for (const auto& s : scenarios()) names.push_back(s.name);
    return names;
  });
  m.def("_preset", [](const std::string& name) { return scenario_info(name).preset.dump(); });
  m.def("_validate", [](const std::string& cfg) { return to_json(parse_config(json::parse(cfg))).dump(); });
  m.def(
      "_run",
      [](const std::string& cfg, bool write) {
        const auto c = parse_config(json::parse(cfg));
        RunResult r;
        {
          py::gil_scoped_release nogil;
          r = write ? run_experiment(c) : run_scenario(c);
        }
        return run_to_json(r).dump();
      },
      py::arg("config"), py::arg("write"));

  py::class_<Action>(m, "Action")
      .def_property_readonly("N", &Action::N)
      .def_property_readonly("group", &Action::describe)
      .def("permutation", [](const Action& a, int letter) { return a.ptr->permutation_of(generator(a.ptr->spec(), letter)); })
      .def("_json", &Action::to_json_str)
      .def("__repr__", [](const Action& a) { return "<Action N=" + std::to_string(a.N()) + " " + a.describe() + ">"; });

  m.def("torus", [](int M, int d) { return Action{torus_action(M, d)}; }, py::arg("M"), py::arg("d") = 1);
  m.def("random_free", [](int N, int d, std::uint64_t seed) { return Action{random_free_action(N, d, seed)}; },
        py::arg("N"), py::arg("d"), py::arg("seed"));
  m.def("random_matching", [](int N, int k, std::uint64_t seed) { return Action{random_matching_action(N, k, seed)}; },
        py::arg("N"), py::arg("k"), py::arg("seed"));
  m.def("lift", [](const std::string& base_graph, int N, std::uint64_t seed) {
    return Action{lift_action(parse_base_graph(base_graph), N, seed)};
  }, py::arg("base_graph"), py::arg("N"), py::arg("seed"));

  m.def(
      "adjacency_spectrum",
      [](const Action& a) {
        const auto sys = eigendecompose(representation_matrix(a.ptr, default_symbol(a)));
        return Eigen::VectorXd(sys.values);
      },
      py::arg("action"), "Eigenvalues of the sum of the standard generators acting on the points.");
  m.def("bad_profile", [](const Action& a, int r_max) { return bs_profile(*a.ptr, standard_generators(a.ptr->spec()), r_max); },
        py::arg("action"), py::arg("r_max"));

  py::class_<Model>(m, "Model")
      .def_property_readonly("name", [](const Model& x) { return x.ptr->name(); })
      .def_property_readonly("norm_bound", [](const Model& x) { return x.ptr->norm_bound(); })
      .def("resolvent", [](const Model& x, cplx z) { return Eigen::MatrixXcd(x.ptr->solve_diag(z)); }, py::arg("z"))
      .def(
          "ward",
          [](const Model& x, cplx z, int radius) {
            const auto w = ward_check(*x.ptr, z, radius);
            return py::dict(py::arg("radius") = w.radius, py::arg("partial") = w.partial, py::arg("target") = w.target,
                            py::arg("residual") = w.residual);
          },
          py::arg("z"), py::arg("radius") = -1)
      .def(
          "fourth_moment",
          [](const Model& x, cplx z, double C1_prime) {
            const auto f = fourth_moment(*x.ptr, z, C1_prime);
            return py::dict(py::arg("radius") = f.radius, py::arg("partial") = f.partial, py::arg("tail") = f.tail,
                            py::arg("total") = f.total());
          },
          py::arg("z"), py::arg("C1_prime") = 3.0)
      .def(
          "density",
          [](const Model& x, double E) {
            const auto d = spectral_density(*x.ptr, E);
            return std::pair{d.value, d.error};
          },
          py::arg("E"));
  m.def("_model", [](const std::string& j) { return Model{model_from_json(json::parse(j))}; });

  m.def(
      "resolvent_poly",
      [](cplx z, double a, int n, double eps) {
        if (n <= 0) n = resolvent_poly_degree(a, z.imag(), eps);
        const auto p = resolvent_poly(z, a, n, eps);
        return py::dict(py::arg("n") = p.n, py::arg("coefficients") = p.p.c, py::arg("sup_error") = p.sup_error,
                        py::arg("bound") = p.bound, py::arg("certified") = p.certified());
      },
      py::arg("z"), py::arg("a"), py::arg("n") = 0, py::arg("eps") = 0.2);
  m.def("fejer_integral", &fejer_integral, py::arg("n"));
}
