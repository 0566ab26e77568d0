// Python module _cmaflow: configs, flows, checks and the CLI commands.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cmaflow/cli_reporting.hpp"
#include "cmaflow/errors.hpp"

namespace py = pybind11;
using namespace cmaf;
using nlohmann::json;

namespace {

py::array_t<double> to_numpy(const ScalarField& f) {
    std::vector<py::ssize_t> shape(f.grid.axes(), f.grid.resolution());
    py::array_t<double> out(shape);
    std::copy(f.values.begin(), f.values.end(), out.mutable_data());
    return out;
}

ScalarField from_numpy(const TorusGrid& g, py::array_t<double, py::array::c_style | py::array::forcecast> a) {
    if (static_cast<std::size_t>(a.size()) != g.size())
        throw InvalidArgument("array has " + std::to_string(a.size()) + " values, grid has " + std::to_string(g.size()));
    return ScalarField(g, std::vector<double>(a.data(), a.data() + a.size()));
}

RunConfig config_from(const std::string& text) { return RunConfig::from_json(json::parse(text)); }

py::dict trajectory_dict(const FlowTrajectory& tr) {
    py::list times, phi, residual;
    for (const auto& s : tr.snapshots) {
        times.append(s.t);
        phi.append(to_numpy(s.phi));
        residual.append(s.diag.residual);
    }
    py::dict d;
    d["times"] = times;
    d["phi"] = phi;
    d["residual"] = residual;
    d["schedule"] = tr.schedule;
    return d;
}

py::dict report_dict(const MarginReport& r) { return py::module_::import("json").attr("loads")(to_json(r).dump()); }

}  // namespace

PYBIND11_MODULE(_cmaflow, m) {
    m.doc() = "Parabolic complex Monge-Ampere flows on flat tori";

    // later registrations are tried first: base class goes first
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<PreconditionFailed>(m, "PreconditionFailed", PyExc_ValueError);

    m.def("config_hash", [](const std::string& text) { return config_from(text).hash(); },
          "FNV-1a hash of the normalized config");
    m.def("normalize_config", [](const std::string& text) { return config_from(text).to_json().dump(); });

    m.def("sample_initial", [](const std::string& text) {
        const RunConfig c = config_from(text);
        return to_numpy(c.potential().sample(c.grid()));
    });

    m.def("run_flow", [](const std::string& text) {
        const RunConfig c = config_from(text);
        FlowTrajectory tr;
        {
            py::gil_scoped_release release;
            tr = run(c.potential().sample(c.grid()), c.problem(), c.flow);
        }
        return trajectory_dict(tr);
    }, "Runs the flow of a config and returns times, phi snapshots and Newton residuals");

    m.def("psh_margin", [](int n, py::array_t<double, py::array::c_style | py::array::forcecast> phi, int N,
                           const std::string& backend) {
        return psh_margin(from_numpy(TorusGrid(n, N, backend_from_name(backend)), phi));
    }, py::arg("n"), py::arg("phi"), py::arg("resolution"), py::arg("backend") = "spectral");

    m.def("trace_inequality", [](std::array<double, 4> a, std::array<double, 4> b) {
        // (a11, a22, Re a12, Im a12)
        const HermMat A{2, a[0], a[1], {a[2], a[3]}}, B{2, b[0], b[1], {b[2], b[3]}};
        const auto r = check_trace_inequality(A, B);
        return std::make_pair(r.lower_slack, r.upper_slack);
    });

    m.def("energy_monotonicity", [](const std::string& text) {
        const RunConfig c = config_from(text);
        const FlowTrajectory tr = run(c.potential().sample(c.grid()), c.problem(), c.flow);
        return report_dict(check_energy_monotonicity(tr, tr.problem.path, tr.problem.omega));
    });

    m.def("cmd_run", [](const std::string& text, const std::string& out) {
        std::ostringstream log;
        const int code = cmd_run(config_from(text), out, log);
        return std::make_pair(code, log.str());
    });
    m.def("cmd_verify", [](const std::vector<std::string>& archives, const std::vector<std::string>& checks,
                           const std::string& out) {
        std::ostringstream log;
        const int code = cmd_verify(std::vector<fs::path>(archives.begin(), archives.end()), checks, out, log);
        return std::make_pair(code, log.str());
    });
    m.def("cmd_series", [](const std::string& archive, const std::string& quantity) {
        std::ostringstream csv, log;
        const int code = cmd_series(archive, quantity, csv, log);
        return std::make_pair(code, csv.str());
    });
    m.def("known_checks", &known_checks);
}
