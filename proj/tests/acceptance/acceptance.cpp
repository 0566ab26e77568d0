// Acceptance driver: one line per criterion, scenarios read from scenarios/*.json.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmaflow/cli_reporting.hpp"
#include "cmaflow/errors.hpp"
#include "oracles.hpp"
#include "random_forms.hpp"

using namespace cmaf;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string summary;
};

struct Scenario {
    fs::path path;
    json doc;  ///< without the acceptance block
    json acc;

    RunConfig config(const json& patch = json::object()) const {
        json d = doc;
        d.merge_patch(patch);
        return RunConfig::from_json(d);
    }
};

fs::path g_dir;

Scenario scenario(int id) {
    char prefix[8];
    std::snprintf(prefix, sizeof prefix, "%02d_", id);
    for (const auto& e : fs::directory_iterator(g_dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind(prefix, 0) == 0 && e.path().extension() == ".json") {
            Scenario s;
            s.path = e.path();
            s.doc = json::parse(std::ifstream(e.path()));
            s.acc = s.doc.at("acceptance");
            s.doc.erase("acceptance");
            return s;
        }
    }
    throw ConfigError("no scenario file for criterion " + std::to_string(id));
}

std::string sci(double x, int digits = 3) {
    std::ostringstream os;
    os.precision(digits);
    os << std::scientific << x;
    return os.str();
}

std::string fixed(double x, int digits = 4) {
    std::ostringstream os;
    os.precision(digits);
    os << std::fixed << x;
    return os.str();
}

// ------------------------------------------------------------ upper bound registry

struct UpperEntry {
    std::string source;
    MarginReport report;
};
std::vector<UpperEntry> g_upper;
std::vector<std::string> g_upper_skipped;

void record_upper(const std::string& source, const FlowTrajectory& traj) {
    const DrivingTerm& F = traj.problem.F;
    if (F.monotonicity_defect != 0.0) {
        g_upper_skipped.push_back(source + " (F decreasing in s)");
        return;
    }
    auto reps = check_apriori_bounds(traj, F, traj.problem.path, traj.problem.omega);
    g_upper.push_back({source, reps.front()});
}

FlowTrajectory run_config(const RunConfig& c) { return run(c.potential().sample(c.grid()), c.problem(), c.flow); }

double osc(const ScalarField& f) { return norms(f).osc; }

// ------------------------------------------------------------ criteria

Outcome c01() {
    const Scenario s = scenario(1);
    const double tol = s.acc.at("residual_tolerance");
    double worst = 0.0;
    for (int n : s.acc.at("n_values").get<std::vector<int>>()) {
        const RunConfig c = s.config({{"grid", {{"n", n}}}, {"metric", {{"theta", n == 1 ? json(1.0) : json({1.0, 1.0})}}}});
        const TorusGrid g = c.grid();
        const FlowProblem P = c.problem();
        for (double t : c.flow.schedule()) {
            // phi = 0 and phi = t^2 both solve the flow from 0
            worst = std::max(worst, pde_residual(P, t, ScalarField(g), ScalarField(g)));
            worst = std::max(worst, pde_residual(P, t, ScalarField(g, t * t), ScalarField(g, 2.0 * t)));
        }
    }
    g_upper_skipped.push_back("nonuniqueness witness (F decreasing in s)");
    const RunConfig c = s.config();
    std::string refusal = "accepted";
    bool refused = false;
    try {
        check_uniqueness(c.potential(), c.problem(), c.grid(), c.flow, RegularizationSchedule::geometric(0.25, 0.5, 2),
                         RegularizationSchedule::geometric(0.2, 0.5, 2));
    } catch (const PreconditionFailed& e) {
        refused = true;
        refusal = "refused";
    }
    return {worst <= tol && refused, "max residual of both families " + sci(worst) + " <= " + sci(tol, 0) +
                                         "; uniqueness certifier " + refusal};
}

Outcome c02() {
    const Scenario s = scenario(2);
    const double c0 = s.doc.at("initial").at("value");
    std::vector<double> errs;
    for (double dt : s.acc.at("dt_max").get<std::vector<double>>()) {
        const RunConfig c = s.config({{"flow", {{"dt_max", dt}, {"t_min", dt}}}});
        const FlowTrajectory tr = run_config(c);
        double e = 0.0;
        for (const auto& snap : tr.snapshots) {
            const double exact = c0 * std::exp(-snap.t);
            e = std::max(e, norms(snap.phi + (-exact)).sup / exact);
            e = std::max(e, std::abs(norms(snap.phi).inf - exact) / exact);
        }
        errs.push_back(e);
        if (dt == s.acc.at("dt_max").back().get<double>()) record_upper("constant-data ODE", tr);
    }
    const auto range = s.acc.at("order_range").get<std::vector<double>>();
    bool ok = errs.back() <= s.acc.at("relative_tolerance").get<double>();
    std::string orders;
    for (std::size_t k = 0; k + 1 < errs.size(); ++k) {
        const double p = std::log2(errs[k] / errs[k + 1]);
        ok = ok && p >= range[0] && p <= range[1];
        orders += (k ? ", " : "") + fixed(p, 3);
    }
    return {ok, "relative sup error " + sci(errs.back()) + " <= 1e-3 at dt_max 1e-4; orders " + orders + " in [" +
                    fixed(range[0], 1) + ", " + fixed(range[1], 1) + "]"};
}

// Explicit finite differences for phidot = log(1 + phi_xx / 4) on M points (x1-only data).
double explicit_oracle_amplitude(double a, double T, int M) {
    const double h = 1.0 / M;
    const double dt_target = 0.5 * h * h;
    const int steps = static_cast<int>(std::ceil(T / dt_target));
    const double dt = T / steps;
    std::vector<double> u(M), next(M);
    for (int i = 0; i < M; ++i) u[i] = a * std::cos(2 * oracle::pi * i * h);
    for (int k = 0; k < steps; ++k) {
        for (int i = 0; i < M; ++i) {
            const double lap = (u[(i + 1) % M] - 2 * u[i] + u[(i + M - 1) % M]) / (h * h);
            next[i] = u[i] + dt * std::log(1.0 + 0.25 * lap);
        }
        u.swap(next);
    }
    double proj = 0.0;
    for (int i = 0; i < M; ++i) proj += u[i] * std::cos(2 * oracle::pi * i * h);
    return 2.0 * proj / M;
}

Outcome c03() {
    const Scenario s = scenario(3);
    const RunConfig c = s.config();
    const double a = s.doc.at("initial").at("terms").at(0).at("amplitude");
    const FlowTrajectory tr = run_config(c);
    record_upper("linearized mode decay", tr);
    const Snapshot& last = tr.final();
    const TorusGrid& g = tr.grid;
    double proj = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) proj += last.phi[i] * std::cos(2 * oracle::pi * g.coord(i)[0]);
    const double amp = 2.0 * proj / static_cast<double>(g.size());
    const double rate = -std::log(amp / a) / last.t;
    const double oracle_rate = -std::log(explicit_oracle_amplitude(a, last.t, s.acc.at("oracle_points")) / a) / last.t;
    const double tol = s.acc.at("rate_tolerance");
    const double pi2 = oracle::pi * oracle::pi;
    const double e_pi = std::abs(rate - pi2) / pi2;
    const double e_or = std::abs(rate - oracle_rate) / oracle_rate;
    return {e_pi <= tol && e_or <= tol, "rate " + fixed(rate, 5) + " vs pi^2 (rel " + sci(e_pi, 2) +
                                            "), vs explicit oracle " + fixed(oracle_rate, 5) + " (rel " + sci(e_or, 2) +
                                            ") at t=" + fixed(last.t, 2) + "; tol 1%"};
}

Outcome c04() {
    const Scenario s = scenario(4);
    const int pairs = s.acc.at("pairs");
    const std::uint64_t seed0 = s.doc.at("seed");
    double worst_ratio = 0.0;
    int failures = 0;
    for (int k = 0; k < pairs; ++k) {
        const RunConfig a = s.config({{"seed", seed0 + 2 * k}});
        const RunConfig b = s.config({{"seed", seed0 + 2 * k + 1}});
        const TorusGrid g = a.grid();
        const ScalarField phi0 = a.potential().sample(g);
        ScalarField psi0 = b.potential().sample(g);
        psi0 += norms(phi0 - psi0).sup;  // ordered, touching at one point
        const FlowProblem P = a.problem();
        const FlowTrajectory phi = run(phi0, P, a.flow);
        const FlowTrajectory psi = run(psi0, P, a.flow);
        if (k == 0) record_upper("comparison pair", phi);
        const MarginReport r = check_comparison(phi, psi, P.F.monotonicity_defect);
        if (!r.passed()) ++failures;
        const double excess = r.constant("max_difference");
        worst_ratio = std::max(worst_ratio, excess / r.constant("tol_cmp"));
    }

    // injected defect: phi = (solution from psi0 + shift) - eta t is a strict subsolution
    const json& d = s.acc.at("defect");
    const double kappa = d.at("kappa"), shift = d.at("shift"), eta = d.at("eta");
    const RunConfig c = s.config({{"driving", {{"kind", "linear"}, {"kappa", kappa}, {"offset", 0.0}, {"a", nullptr},
                                               {"b", nullptr}, {"beta", nullptr}}}});
    const FlowProblem P = c.problem();
    const ScalarField psi0 = c.potential().sample(c.grid());
    const FlowTrajectory psi = run(psi0, P, c.flow);
    FlowTrajectory phi = run(psi0 + shift, P, c.flow);
    record_upper("comparison defect pair", psi);
    double defect_residual = -kUnbounded;
    for (auto& snap : phi.snapshots) {
        for (double& v : snap.phi.values) v -= eta * snap.t;
        if (snap.has_phidot) {
            for (double& v : snap.phidot.values) v -= eta;
            const ScalarField rhs = flow_rhs(P, snap.t, snap.phi);
            for (std::size_t i = 0; i < rhs.size(); ++i)
                defect_residual = std::max(defect_residual, snap.phidot[i] - rhs[i]);
        }
    }
    const double lambda = P.F.monotonicity_defect;
    const MarginReport r = check_comparison(phi, psi, lambda);
    const double bound = std::exp(lambda * c.flow.T) * shift;
    const bool ok = failures == 0 && defect_residual < 0.0 && r.passed();
    return {ok, std::to_string(pairs - failures) + "/" + std::to_string(pairs) +
                    " ordered pairs stay ordered (worst phi-psi " + sci(worst_ratio, 2) +
                    " x 1e-9 Osc); defect pair: sup(phi-psi) " + sci(r.constant("max_difference")) +
                    " <= e^{lambda T} sup(phi0-psi0)^+ = " + sci(bound) + " (subsolution residual " +
                    sci(defect_residual, 2) + ")"};
}

Outcome c05() {
    const Scenario s = scenario(5);
    const int pairs = s.acc.at("pairs");
    const std::uint64_t seed0 = s.doc.at("seed");
    double worst = -kUnbounded;
    int failures = 0;
    for (int k = 0; k < pairs; ++k) {
        const RunConfig a = s.config({{"seed", seed0 + 2 * k}});
        const RunConfig b = s.config({{"seed", seed0 + 2 * k + 1}});
        const TorusGrid g = a.grid();
        const ScalarField phi0 = a.potential().sample(g), psi0 = b.potential().sample(g);
        const FlowProblem P = a.problem();
        const FlowTrajectory phi = run(phi0, P, a.flow), psi = run(psi0, P, a.flow);
        if (k == 0) record_upper("contraction pair", phi);
        const double d0 = sup_distance(phi0, psi0);
        const double tol = 1e-9 * std::max(osc(phi0), osc(psi0));
        double excess = -kUnbounded;
        for (std::size_t j = 0; j < phi.snapshots.size(); ++j)
            excess = std::max(excess, sup_distance(phi.snapshots[j].phi, psi.snapshots[j].phi) - d0);
        if (excess > tol) ++failures;
        worst = std::max(worst, excess / tol);
    }
    return {failures == 0, std::to_string(pairs - failures) + "/" + std::to_string(pairs) +
                               " pairs with sup|phi_t-psi_t| <= sup|phi_0-psi_0| + 1e-9 Osc (worst excess " +
                               fixed(worst, 3) + " x tol)"};
}

Outcome c06() {
    const Scenario s = scenario(6);
    const double t = s.acc.at("time");
    std::vector<int> Ns = s.acc.at("resolutions");
    std::vector<double> tr_sup, lap0;
    for (int N : Ns) {
        const RunConfig c = s.config({{"grid", {{"resolution", N}}}});
        const FlowTrajectory tr = run_config(c);
        if (N == Ns.front()) record_upper("smoothing kink", tr);
        const TorusGrid& g = tr.grid;
        HermitianField form = c.problem().path.theta(t, g);
        form += complex_hessian(tr.at(t).phi);
        double sup = -kUnbounded;
        for (std::size_t i = 0; i < g.size(); ++i) sup = std::max(sup, form.at(i).trace());
        tr_sup.push_back(sup);
        lap0.push_back(norms(laplacian(tr.initial().phi)).sup);
    }
    const auto [lo, hi] = std::minmax_element(tr_sup.begin(), tr_sup.end());
    const double variation = (*hi - *lo) / *lo;
    bool linear = true;
    std::string growth;
    for (std::size_t k = 0; k + 1 < Ns.size(); ++k) {
        const double ratio = lap0[k + 1] / lap0[k], need = static_cast<double>(Ns[k + 1]) / Ns[k];
        linear = linear && ratio >= need;
        growth += (k ? ", " : "") + fixed(ratio, 3);
    }
    std::string trs;
    for (std::size_t k = 0; k < tr_sup.size(); ++k) trs += (k ? "/" : "") + fixed(tr_sup[k], 4);
    return {variation < s.acc.at("max_variation").get<double>() && linear,
            "sup tr at t=0.01: " + trs + " (variation " + sci(variation, 2) + " < 0.2); initial Laplacian growth " +
                growth + " per doubling (>= 2)"};
}

Outcome c07() {
    const Scenario s = scenario(7);
    const auto win = s.acc.at("fit_window").get<std::vector<double>>();
    const auto range = s.acc.at("slope_range").get<std::vector<double>>();
    TimeDerivativeOptions o;
    o.fit_from = win[0];
    o.fit_to = win[1];
    const double eps = s.acc.at("eps");
    std::vector<json> patches{json::object()};
    for (const auto& p : s.acc.at("refinements")) patches.push_back(p);
    bool ok = true;
    double c_base = 0.0, drift = 0.0;
    std::string slopes, cups;
    for (std::size_t k = 0; k < patches.size(); ++k) {
        const RunConfig c = s.config(patches[k]);
        const FlowTrajectory tr = run_config(c);
        if (k == 0) record_upper("parabola kink", tr);
        const auto rep = check_time_derivative(tr, eps, o);
        const double slope = rep[1].constant("slope"), cup = rep[0].constant("C_up");
        const int n = c.n;
        ok = ok && rep[0].passed() && std::isfinite(cup) && slope >= range[0] * n && slope <= range[1] * n;
        if (k == 0) c_base = cup;
        else drift = std::max(drift, std::abs(cup - c_base) / std::abs(c_base));
        slopes += (k ? "/" : "") + fixed(slope, 4);
        cups += (k ? "/" : "") + sci(cup, 4);
    }
    ok = ok && drift < s.acc.at("max_drift").get<double>();
    return {ok, "slope of min phidot vs log t: " + slopes + " in [0.9, 1.3]; C_up " + cups + " (drift " +
                    fixed(100 * drift, 2) + "% < 10%, upper bound holds)"};
}

Outcome c08() {
    const Scenario s = scenario(8);
    const RunConfig c = s.config();
    record_upper(c.name, run_config(c));
    double worst = kUnbounded;
    std::string where;
    int failures = 0;
    for (const auto& e : g_upper) {
        if (!e.report.passed()) ++failures;
        if (e.report.margin < worst) {
            worst = e.report.margin;
            where = e.source;
        }
    }
    std::string skipped;
    for (std::size_t k = 0; k < g_upper_skipped.size(); ++k) skipped += (k ? "; " : "") + g_upper_skipped[k];
    return {failures == 0 && !g_upper.empty(),
            std::to_string(g_upper.size() - failures) + "/" + std::to_string(g_upper.size()) +
                " trajectories within sup phi_0^+ + Ct, C = -inf F(.,.,0) + n log delta (worst margin " + sci(worst) +
                " on " + where + ")" + (skipped.empty() ? "" : "; outside the bound's hypothesis (F non-decreasing in s): " + skipped)};
}

Outcome c09() {
    const Scenario s = scenario(9);
    const double tol = s.acc.at("tolerance");
    bool ok = true;
    std::string parts;
    for (const auto& v : s.acc.at("variants")) {
        json patch = v;
        if (v.at("driving").at("kind") == "zero") patch["driving"] = {{"kind", "zero"}};
        const RunConfig c = s.config(patch);
        const FlowTrajectory tr = run_config(c);
        record_upper("energy " + c.to_json().at("driving").at("kind").get<std::string>(), tr);
        const MarginReport r = check_energy_monotonicity(tr, tr.problem.path, tr.problem.omega);
        const double ce = r.constant("C_E");
        ok = ok && ce <= tol;
        parts += (parts.empty() ? "" : ", ") + ("F=" + tr.problem.F.name + ": C_E=" + sci(ce, 2));
    }
    return {ok, parts + " (tol 1e-8)"};
}

Outcome c10() {
    const Scenario s = scenario(10);
    const RunConfig c = s.config();
    CascadeOptions opts;
    opts.tolerance_factor = c.cascade_tolerance_factor;
    const RoughPotential phi0 = c.potential();
    const FlowProblem P = c.problem();
    const CascadeResult a = run_cascade(phi0, *c.cascade, c.grid(), P, c.flow, opts);
    const CascadeResult b = run_cascade(phi0, *c.cascade_alt, c.grid(), P, c.flow, opts);
    record_upper("cascade finest level", a.levels.back());
    // certify the problem the same way the full uniqueness check does
    const double T = P.path.horizon();
    uniqueness_rescale(P, P.F.time_bound + 0.5 * (1.0 / T - P.F.time_bound));
    const MarginReport r = check_uniqueness(a, b, P);
    const double ext = r.constant("extrapolated_difference");
    const double tol = s.acc.at("osc_fraction").get<double>() * a.osc0;
    return {ext <= tol && a.max_violation <= a.tolerance && b.max_violation <= b.tolerance,
            "sup|phi^(1)_t - phi^(2)_t| at t=0.05: " + sci(ext) + " <= 5e-3 Osc = " + sci(tol) +
                " (last levels differ by " + sci(r.constant("difference")) + ", ladder gap estimate " +
                sci(r.constant("gap_sum")) + ")"};
}

Outcome c11() {
    const Scenario s = scenario(11);
    bool ok = true;
    std::string parts;
    const double frac = s.acc.at("final_fraction");
    for (const auto& v : s.acc.at("variants")) {
        const RunConfig c = s.config(v);
        const RoughPotential phi0 = c.potential();
        const FlowProblem P = c.problem();
        CascadeOptions copts;
        copts.tolerance_factor = c.cascade_tolerance_factor;
        const CascadeResult cas = run_cascade(phi0, *c.cascade, c.grid(), P, c.flow, copts);
        record_upper("convergence " + c.name, cas.levels.back());
        ConvergenceOptions o;
        o.final_fraction = frac;
        o.use_extrapolated = true;
        const auto reps = check_convergence_modes(cas, phi0, P, o);
        std::map<std::string, const MarginReport*> by;
        for (const auto& r : reps) by[r.check] = &r;
        bool here = by.count("convergence-l1") && by["convergence-l1"]->passed();
        std::string modes = "L1 final " + sci(by["convergence-l1"]->constant("final"), 2);
        const Regularity tag = phi0.tag();
        if (tag == Regularity::Smooth || tag == Regularity::Lipschitz) {
            here = here && by.count("convergence-sup") && by["convergence-sup"]->passed();
            modes += ", sup ok";
        }
        if (tag == Regularity::Bounded) {
            here = here && by.count("convergence-capacity") && by["convergence-capacity"]->passed();
            modes += ", capacity " + sci(by["convergence-capacity"]->constant("final"), 2);
        }
        if (tag == Regularity::Smooth) {
            const double a = c.to_json().at("initial").at("terms").at(0).at("amplitude");
            const auto& times = c.flow.probe_times;
            double worst = 0.0;
            for (std::size_t k = 0; k < times.size(); ++k) {
                const double exact = oracle::energy_gap_single_mode(a, times[k]);
                worst = std::max(worst, std::abs(by["convergence-energy"]->constant("d[" + std::to_string(k) + "]") -
                                                 exact) / exact);
            }
            here = here && worst <= s.acc.at("energy_tolerance").get<double>();
            modes += ", energy vs closed form " + fixed(100 * worst, 2) + "%";
        }
        ok = ok && here;
        parts += (parts.empty() ? "" : "; ") + c.name + ": " + modes + (here ? "" : " [FAIL]");
    }
    return {ok, parts};
}

Outcome c12() {
    const Scenario s = scenario(12);
    const double tol = s.acc.at("oracle_tolerance");
    const double frac = s.acc.at("osc_fraction");
    const RunConfig c = s.config();
    const TorusGrid g = c.grid();
    const HermitianField theta0 = HermitianField::constant(g, c.problem().path.nef_base());
    const double T = c.flow.T;

    // nested geometric schedules: ratio r and sqrt(r) from the same t_min, T on both grids
    auto cfg_for = [&](double r) {
        FlowConfig f = c.flow;
        const double K = std::ceil(std::log(T / c.flow.t_min) / std::log(c.flow.ratio));
        f.t_min = T * std::pow(c.flow.ratio, -K);
        f.ratio = r;
        return f;
    };
    const ScalarField zero = c.potential().sample(g);
    const NefResult coarse = run_nef(theta0, c.nef_eps, zero, c.problem().F, c.problem().omega, cfg_for(c.flow.ratio));
    const NefResult fine =
        run_nef(theta0, c.nef_eps, zero, c.problem().F, c.problem().omega, cfg_for(std::sqrt(c.flow.ratio)));
    double worst = 0.0;
    for (std::size_t e = 0; e < c.nef_eps.size(); ++e) {
        record_upper("nef eps=" + fixed(c.nef_eps[e], 3), fine.trajectories[e]);
        for (const auto& snap : coarse.trajectories[e].snapshots) {
            const Snapshot* f = fine.trajectories[e].find(snap.t);
            if (!f) throw MissingSnapshots("nested schedules do not share t=" + sci(snap.t));
            const double rich = 2.0 * f->phi[0] - snap.phi[0];
            worst = std::max(worst, std::abs(rich - oracle::nef_ode_exact(snap.t, c.nef_eps[e])));
        }
    }
    bool mono = fine.max_violation <= frac * osc(zero);
    std::string viol = sci(fine.max_violation, 2);
    for (const auto& v : s.acc.at("variants")) {
        const RunConfig cv = s.config(v);
        const ScalarField phi0 = cv.potential().sample(g);
        const NefResult res = run_nef(theta0, cv.nef_eps, phi0, cv.problem().F, cv.problem().omega, cv.flow);
        mono = mono && res.max_violation <= frac * osc(phi0);
        viol += ", " + sci(res.max_violation, 2) + " (Osc " + sci(osc(phi0), 1) + ")";
    }
    return {worst <= tol && mono, "Richardson value vs ODE quadrature: max error " + sci(worst) +
                                      " <= 1e-6; max(phi_{t,eps'} - phi_{t,eps}) for eps' < eps: " + viol +
                                      " <= 1e-7 Osc"};
}

Outcome c13() {
    const Scenario s = scenario(13);
    std::mt19937_64 rng(s.doc.at("seed").get<std::uint64_t>());
    const int pairs = s.acc.at("pairs");
    double lower = kUnbounded, upper = kUnbounded;
    for (int k = 0; k < pairs; ++k) {
        const HermMat a = testing_forms::random_positive(rng);
        const HermMat b = testing_forms::random_positive(rng);
        const TraceInequalityReport r = check_trace_inequality(a, b);
        lower = std::min(lower, r.lower_slack);
        upper = std::min(upper, r.upper_slack);
    }
    const double floor = s.acc.at("slack_floor");
    return {lower >= floor && upper >= floor, std::to_string(pairs) + " random positive pairs: min slacks " +
                                                  sci(lower) + " / " + sci(upper) + " >= -1e-10"};
}

Outcome c14() {
    const Scenario s = scenario(14);
    const double factor = s.acc.at("residual_factor");
    const RunConfig c = s.config();
    const double limit = factor * c.flow.newton_tol;
    const ScalarField phi0 = c.potential().sample(c.grid());

    const FlowProblem P = c.problem();
    const ReducedProblem red = monotone_reduction(P);
    FlowConfig rc = c.flow;
    rc.T = red.transform.reduced_horizon;
    const FlowTrajectory mono = run(phi0, red.problem, rc);
    const double res1 = pullback_residual(mono, red.transform, P);
    record_upper("monotone reduction pulled back", red.transform.pull_back(mono, P));

    const RunConfig cu = s.config(s.acc.at("variants").at(0));
    const FlowProblem Q = cu.problem();
    const double T = Q.path.horizon();
    const ReducedProblem resc = uniqueness_rescale(Q, Q.F.time_bound + 0.5 * (1.0 / T - Q.F.time_bound));
    FlowConfig uc = cu.flow;
    uc.T = resc.transform.reduced_horizon;
    const FlowTrajectory reduced = run(phi0, resc.problem, uc);
    const double res2 = pullback_residual(reduced, resc.transform, Q);
    record_upper("rescaled flow pulled back", resc.transform.pull_back(reduced, Q));

    // admissibility: -B e^{BT} >= C with B = -1/T is exactly C <= 1/(eT)
    const double thr = std::exp(-1.0) / c.flow.T;
    auto with_c = [&](double C) {
        return s.config({{"driving", {{"kind", "linear"}, {"kappa", -C}, {"offset", 0.0}}}}).problem();
    };
    bool at_threshold = false, beyond_rejected = false;
    try {
        monotone_reduction(with_c(thr));
        at_threshold = true;
    } catch (const Error&) {
    }
    try {
        monotone_reduction(with_c(thr * (1.0 + 1e-9)));
    } catch (const HorizonTooLong&) {
        beyond_rejected = true;
    }
    const double gain = -red.transform.rate * std::exp(red.transform.rate * c.flow.T);
    const bool exact = std::abs(gain - thr) <= 4 * std::numeric_limits<double>::epsilon() * thr;
    return {res1 <= limit && res2 <= limit && at_threshold && beyond_rejected && exact,
            "pulled-back residuals " + sci(res1, 2) + " (monotone), " + sci(res2, 2) + " (rescale) <= " +
                sci(limit, 0) + "; C = 1/(eT) " + (at_threshold ? "admitted" : "REJECTED") + ", C(1+1e-9) " +
                (beyond_rejected ? "rejected" : "ADMITTED")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string dir = CMAFLOW_SCENARIOS;
    std::vector<int> only;
    std::string report = "acceptance.txt";
    app.add_option("--scenarios", dir, "scenario directory")->check(CLI::ExistingDirectory);
    app.add_option("--report", report, "copy of the output lines");
    app.add_option("--only", only, "criteria to run (default: all)");
    CLI11_PARSE(app, argc, argv);
    g_dir = dir;

    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, c01}, {2, c02}, {3, c03}, {4, c04}, {5, c05}, {6, c06}, {7, c07},
        {9, c09}, {10, c10}, {11, c11}, {12, c12}, {13, c13}, {14, c14}, {8, c08},  // 8 collects the others
    };
    std::map<int, Outcome> results;
    std::map<int, double> seconds;
    for (const auto& [id, fn] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            results[id] = fn();
        } catch (const std::exception& e) {
            results[id] = {false, std::string("error: ") + e.what()};
        }
        seconds[id] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    int failed = 0;
    std::ostringstream lines;
    for (const auto& [id, r] : results) {
        if (!r.pass) ++failed;
        char head[64];
        std::snprintf(head, sizeof head, "criterion %2d %s [%5.1fs] ", id, r.pass ? "PASS" : "FAIL", seconds[id]);
        lines << head << r.summary << '\n';
    }
    lines << results.size() << " criteria, " << failed << " failed\n";
    std::cout << lines.str();
    if (!report.empty()) std::ofstream(report) << lines.str();
    return failed == 0 ? 0 : 1;
}
