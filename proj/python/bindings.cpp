#include "kclg/error.hpp"
#include "kclg/models.hpp"
#include "kclg/moves.hpp"
#include "kclg/selfdiff.hpp"
#include "kclg/simulate.hpp"
#include "kclg/spectral.hpp"
#include "kclg/transport.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace kclg;

namespace {

using Coords = std::vector<int>;

Site toSite(const Coords& c) {
    Site s(static_cast<int>(c.size()));
    for (std::size_t a = 0; a < c.size(); ++a) s[static_cast<int>(a)] = c[a];
    return s;
}

std::vector<Site> toSites(const std::vector<Coords>& v) {
    std::vector<Site> out;
    for (const auto& c : v) out.push_back(toSite(c));
    return out;
}

Coords fromSite(const Site& s) {
    Coords c;
    for (int a = 0; a < s.dim; ++a) c.push_back(s[a]);
    return c;
}

PermutationDynamics tracerDynamics(const ConstraintModel& m, const std::string& kind) {
    if (kind == "kc") return kcTracerDynamics(m);
    if (kind == "aux") {
        if (m.name() == "bt2d") return auxTracerDynamics(m, bt2dCertificate());
        throw ArgumentError("no built-in certificate for '" + m.name() + "'");
    }
    throw ArgumentError("dynamics kind must be 'kc' or 'aux'");
}

} // namespace

PYBIND11_MODULE(_core, mod) {
    mod.doc() = "Kinetically constrained lattice gases";

    py::register_exception<ArgumentError>(mod, "ArgumentError", PyExc_ValueError);
    py::register_exception<BudgetError>(mod, "BudgetError");
    py::register_exception<ValidationError>(mod, "ValidationError");
    py::register_exception<SpecError>(mod, "SpecError", PyExc_ValueError);

    py::class_<ConstraintModel>(mod, "ConstraintModel")
        .def_property_readonly("name", &ConstraintModel::name)
        .def_property_readonly("dim", &ConstraintModel::dim)
        .def_property_readonly("range", &ConstraintModel::range)
        .def_property_readonly("c_max", &ConstraintModel::cMax)
        .def("hash", &ConstraintModel::hash)
        .def("to_json", [](const ConstraintModel& m) { return modelToJson(m); })
        .def_static("from_json", &modelFromJson)
        .def("rate", [](const ConstraintModel& m, int axis, const std::vector<Coords>& empty) {
            const auto sites = toSites(empty);
            return m.rate(axis, [&](const Site& o) {
                return static_cast<int>(std::find(sites.begin(), sites.end(), o) == sites.end());
            });
        }, py::arg("axis"), py::arg("empty"), "Rate with exactly the given offsets empty.")
        .def("__repr__", [](const ConstraintModel& m) { return "<ConstraintModel " + m.name() + ">"; });

    mod.def("bt1d", &bt1d);
    mod.def("bt2d", &bt2d);
    mod.def("glt1d", &glt1d);
    mod.def("sep", &sep, py::arg("dim"));
    mod.def("aux_model", [](int dim, const std::vector<std::vector<Coords>>& sets) {
        std::vector<std::vector<Site>> s;
        for (const auto& A : sets) s.push_back(toSites(A));
        return buildAuxModel(AuxSpec::make(dim, s));
    }, py::arg("dim"), py::arg("sets"));
    mod.def("bt2d_aux_model", [] { return buildAuxModel(AuxSpec::fromCertificate(bt2dCertificate()), "bt2d-aux"); });

    mod.def("verify_axioms", [](const ConstraintModel& m) {
        auto rep = verifyAxioms(m);
        py::dict out;
        for (const auto& e : rep.entries) out[py::str(e.name)] = e.pass;
        return py::make_tuple(rep.allPass(), out);
    });

    mod.def("relaxation_time", [](const ConstraintModel& m, const std::string& setting, int L, double q, int k) {
        RateMatrix gen = setting == "reservoir" ? buildReservoirGenerator(m, L, q)
                         : setting == "torus"   ? buildTorusGenerator(m, L, k)
                         : setting == "closed"  ? buildClosedGenerator(m, L, k, Boundary::Occupied)
                                                : throw ArgumentError("unknown setting '" + setting + "'");
        auto r = relaxationTime(gen);
        py::dict out;
        out["tau"] = r.tau;
        out["gap"] = r.gap;
        out["components"] = r.components;
        out["states"] = gen.space.size();
        out["method"] = r.method;
        return out;
    }, py::arg("model"), py::arg("setting"), py::arg("L"), py::arg("q") = 0.5, py::arg("k") = 0);

    mod.def("ergodic_components", [](const ConstraintModel& m, int L, int k, const std::vector<std::vector<Coords>>& clusters) {
        std::vector<std::vector<Site>> cl;
        for (const auto& c : clusters) cl.push_back(toSites(c));
        auto rep = ergodicComponents(m, L, k, cl);
        py::dict out;
        out["sizes"] = rep.sizes;
        out["static_match"] = rep.staticMatch;
        out["ergodic_states"] = rep.ergodicStates;
        return out;
    });

    mod.def("is_blocked", [](const ConstraintModel& m, int L, const std::vector<Coords>& vacancies) {
        return isBlocked(Configuration::withVacancies(Domain(m.dim(), L, Boundary::Occupied), toSites(vacancies)), m);
    }, py::arg("model"), py::arg("L"), py::arg("vacancies"));

    mod.def("diffusion_window", [](const ConstraintModel& m, const std::vector<double>& u,
                                   const std::vector<Coords>& window, double q) {
        return diffusionWindow(m, u, toSites(window), q);
    }, py::arg("model"), py::arg("u"), py::arg("window"), py::arg("q"));
    mod.def("aux_diffusion_closed_form", &auxDiffusionClosedForm, py::arg("aux"), py::arg("q"), py::arg("u"));
    mod.def("mean_rate", &meanRate, py::arg("model"), py::arg("axis"), py::arg("q"));
    mod.def("total_current", [](const ConstraintModel& aux, int L, double q, std::uint64_t seed) {
        return totalCurrent(sampleEquilibrium(Domain(aux.dim(), L, Boundary::Periodic), q, seed), aux);
    }, py::arg("aux"), py::arg("L"), py::arg("q"), py::arg("seed"));

    mod.def("self_diffusion_window", [](const ConstraintModel& m, const std::string& kind, const std::vector<double>& u,
                                        const std::vector<Coords>& window, double q) {
        return selfDiffusionWindow(tracerDynamics(m, kind), u, toSites(window), q);
    }, py::arg("model"), py::arg("kind"), py::arg("u"), py::arg("window"), py::arg("q"));
    mod.def("aux_self_diffusion_closed_form", &auxSelfDiffusionClosedForm);

    mod.def("tracer_run", [](const ConstraintModel& m, const std::string& kind, int L, double q,
                             const std::vector<double>& u, const std::vector<double>& times, int replicas,
                             std::uint64_t seed) {
        TracerOptions o;
        o.L = L;
        o.q = q;
        o.u = u;
        o.schedule = times;
        o.replicas = replicas;
        o.seed = seed;
        TracerSeries tr;
        {
            py::gil_scoped_release release;
            tr = tracerRun(tracerDynamics(m, kind), o);
        }
        py::dict out;
        out["times"] = tr.times;
        out["msd_u"] = tr.msdU;
        out["msd_u_se"] = tr.msdUErr;
        out["msd"] = tr.msdNorm;
        out["frozen"] = tr.frozenReplicas;
        out["d_estimate"] = tr.dEstimate();
        out["d_stderr"] = tr.dStderr();
        return out;
    }, py::arg("model"), py::arg("kind"), py::arg("L"), py::arg("q"), py::arg("u"), py::arg("times"),
       py::arg("replicas") = 100, py::arg("seed") = 1);

    mod.def("simulate_density", [](const ConstraintModel& m, int L, const std::string& boundary, double q,
                                   const std::vector<double>& times, std::uint64_t seed) {
        const bool reservoir = boundary == "reservoir";
        const Domain d(m.dim(), L, reservoir ? Boundary::Empty : parseBoundary(boundary));
        Simulator s(m, sampleEquilibrium(d, q, seed), seed, reservoir ? std::optional<double>(q) : std::nullopt, 1);
        auto ts = run(s, times, {densityObservable()}, RunOptions{true});
        return ts[0].values;
    }, py::arg("model"), py::arg("L"), py::arg("boundary"), py::arg("q"), py::arg("times"), py::arg("seed") = 1);

    mod.def("hat_cluster", [] {
        std::vector<Coords> out;
        for (const Site& s : hatCluster(bt2dCertificate())) out.push_back(fromSite(s));
        return out;
    }, "Hat cluster of the built-in BT-2d certificate.");
}
