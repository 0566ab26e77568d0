#include "cmaflow/estimate_verifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cmaflow/errors.hpp"

namespace cmaf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(6);
    os << x;
    return os.str();
}

bool close_time(double a, double b, double rtol = 1e-9) {
    return std::abs(a - b) <= rtol * std::max({1.0, std::abs(a), std::abs(b)});
}

/// Ordinary least squares y = slope x + intercept.
std::pair<double, double> ols(const std::vector<double>& x, const std::vector<double>& y) {
    const double m = static_cast<double>(x.size());
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / m, my = sy / m;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    return {slope, my - slope * mx};
}

double osc(const ScalarField& f) { return norms(f).osc; }

void require_pairable(const FlowTrajectory& a, const FlowTrajectory& b, const std::string& what) {
    if (a.grid != b.grid)
        throw MismatchedDiscretization(what + ": grids differ (" + std::to_string(a.grid.resolution()) + " vs " +
                                       std::to_string(b.grid.resolution()) + ")");
    if (a.snapshots.size() != b.snapshots.size())
        throw MismatchedDiscretization(what + ": snapshot counts differ");
    for (std::size_t k = 0; k < a.snapshots.size(); ++k)
        if (!close_time(a.snapshots[k].t, b.snapshots[k].t))
            throw MismatchedDiscretization(what + ": snapshot times differ at index " + std::to_string(k));
}

/// max_{z} (a - b) and where.
std::pair<double, std::size_t> sup_difference(const ScalarField& a, const ScalarField& b) {
    double worst = -kInf;
    std::size_t where = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] - b[i] > worst) {
            worst = a[i] - b[i];
            where = i;
        }
    return {worst, where};
}

Coord coord_of(const TorusGrid& g, std::size_t i) { return g.coord(i); }

/// Upper half of the volume sandwich, sup theta_t^n / Omega, for degenerate (nef) paths.
double upper_volume_ratio(const MetricPath& path, const VolumeForm& omega, int samples = 64) {
    const TorusGrid& g = omega.grid();
    double worst = 1.0;
    for (int k = 0; k < samples; ++k) {
        const double t = path.horizon() * k / (samples - 1);
        const HermitianField th = path.theta(t, g);
        for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, th.at(i).det() / omega.density()[i]);
    }
    return worst;
}

}  // namespace

// ---------------------------------------------------------------- report plumbing

double MarginReport::constant(const std::string& name) const {
    for (const auto& [k, v] : constants)
        if (k == name) return v;
    throw InvalidArgument("report '" + check + "' has no constant '" + name + "'");
}

void MarginReport::set(const std::string& name, double value) {
    for (auto& [k, v] : constants)
        if (k == name) {
            v = value;
            return;
        }
    constants.emplace_back(name, value);
}

namespace {
nlohmann::json number(double x) {
    if (std::isfinite(x)) return x;
    if (std::isnan(x)) return "nan";
    return x > 0 ? "inf" : "-inf";
}
double from_number(const nlohmann::json& j) {
    if (j.is_number()) return j.get<double>();
    const std::string s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    return std::numeric_limits<double>::quiet_NaN();
}
}  // namespace

nlohmann::json to_json(const MarginReport& r) {
    nlohmann::json c = nlohmann::json::object();
    for (const auto& [k, v] : r.constants) c[k] = number(v);
    return {{"check", r.check},       {"anchor", r.anchor}, {"margin", number(r.margin)},
            {"passed", r.passed()},   {"t", r.t},           {"z", r.z},
            {"constants", c},         {"note", r.note}};
}

MarginReport report_from_json(const nlohmann::json& j) {
    MarginReport r;
    r.check = j.at("check").get<std::string>();
    r.anchor = j.at("anchor").get<std::string>();
    r.margin = from_number(j.at("margin"));
    r.t = j.at("t").get<double>();
    r.z = j.at("z").get<Coord>();
    for (const auto& [k, v] : j.at("constants").items()) r.constants.emplace_back(k, from_number(v));
    r.note = j.value("note", "");
    return r;
}

std::string reports_to_csv(const std::vector<MarginReport>& reports) {
    std::ostringstream os;
    os.precision(17);
    os << "check,anchor,margin,passed,t,constants\n";
    for (const auto& r : reports) {
        os << r.check << ",\"" << r.anchor << "\"," << r.margin << "," << (r.passed() ? "true" : "false") << "," << r.t
           << ",\"";
        for (std::size_t i = 0; i < r.constants.size(); ++i)
            os << (i ? ";" : "") << r.constants[i].first << "=" << r.constants[i].second;
        os << "\"\n";
    }
    return os.str();
}

double comparison_tolerance(const TorusGrid& g, double oscillation) {
    if (g.n() == 1 && g.backend() == Backend::FiniteDifference) return 1e-9 * oscillation;
    return 10.0 * g.spacing() * g.spacing() * oscillation;
}

// ---------------------------------------------------------------- comparison

MarginReport check_comparison(const FlowTrajectory& phi, const FlowTrajectory& psi, double lambda) {
    require_pairable(phi, psi, "check_comparison");
    MarginReport r;
    r.check = "comparison";
    r.anchor = "sup(phi_t - psi_t) <= e^{lambda T} max(sup(phi_0 - psi_0), 0)";
    const ScalarField& p0 = phi.initial().phi;
    const ScalarField& q0 = psi.initial().phi;
    const double tol = comparison_tolerance(phi.grid, std::max(osc(p0), osc(q0)));
    const double start = std::max(sup_difference(p0, q0).first, 0.0);
    const double T = phi.final().t;
    const double bound = std::exp(lambda * T) * start + tol;
    double worst = -kInf;
    for (std::size_t k = 0; k < phi.snapshots.size(); ++k) {
        const auto [d, i] = sup_difference(phi.snapshots[k].phi, psi.snapshots[k].phi);
        if (d > worst) {
            worst = d;
            r.t = phi.snapshots[k].t;
            r.z = coord_of(phi.grid, i);
        }
    }
    r.margin = bound - worst;
    r.set("lambda", lambda);
    r.set("tol_cmp", tol);
    r.set("initial_excess", start);
    r.set("max_difference", worst);
    return r;
}

// ---------------------------------------------------------------- a priori bounds

std::vector<MarginReport> check_apriori_bounds(const FlowTrajectory& traj, const DrivingTerm& F, const MetricPath& path,
                                               const VolumeForm& omega_form, const LowerBoundOptions& opts) {
    const TorusGrid& g = traj.grid;
    const int n = g.n();
    std::vector<MarginReport> out;

    // upper bound with the explicit constant
    MarginReport up;
    up.check = "apriori-upper";
    up.anchor = "phi_t <= C t + max(sup phi_0, 0), C = -inf F(t, z, 0) + n log delta";
    double inf_F0 = kInf;
    std::vector<Coord> pts;
    for (std::size_t i = 0; i < g.size(); i += std::max<std::size_t>(1, g.size() / 256)) pts.push_back(g.coord(i));
    for (const double t : traj.schedule)
        for (const Coord& z : pts) inf_F0 = std::min(inf_F0, F.value(t, z, 0.0));
    const bool degenerate = path.kind() == MetricKind::Nef;
    const double delta = degenerate ? upper_volume_ratio(path, omega_form) : volume_delta(path, omega_form);
    const double C = -inf_F0 + n * std::log(delta);
    const double sup0 = std::max(norms(traj.initial().phi).sup, 0.0);
    double margin = kInf;
    for (const auto& s : traj.snapshots) {
        const Norms nm = norms(s.phi);
        const double m = C * s.t + sup0 - nm.sup;
        if (m < margin) {
            margin = m;
            up.t = s.t;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (s.phi[i] == nm.sup) {
                    up.z = g.coord(i);
                    break;
                }
        }
    }
    up.margin = margin;
    up.set("C", C);
    up.set("delta", delta);
    up.set("inf_F0", inf_F0);
    if (degenerate) up.note = "degenerate path: delta from the upper volume bound only";
    if (F.monotonicity_defect > 0.0) up.note += (up.note.empty() ? "" : "; ") + std::string("dF/ds >= 0 not certified");
    out.push_back(up);

    // lower bound phi_t >= phi_0 - c(t), c(t) <= w n t log(1/t) + K t
    MarginReport lo;
    lo.check = "apriori-lower";
    lo.anchor = "phi_t >= phi_0 - c(t) with c(t) -> 0; c(t) <= w n t log(1/t) + K t";
    const ScalarField& p0 = traj.initial().phi;
    double running = 0.0, K = 0.0;
    const double w = opts.log_weight_factor * n;
    for (const auto& s : traj.snapshots) {
        if (s.t <= 0.0) continue;
        const auto [c, i] = sup_difference(p0, s.phi);
        if (std::max(c, 0.0) > running) {
            running = std::max(c, 0.0);
            lo.t = s.t;
            lo.z = g.coord(i);
        }
        const double base = w * s.t * std::max(std::log(1.0 / s.t), 0.0);
        K = std::max(K, (running - base) / s.t);
    }
    lo.margin = std::isfinite(K) ? 0.0 : -kInf;
    lo.set("K", K);
    lo.set("log_weight", w);
    lo.set("c_final", running);
    out.push_back(lo);
    return out;
}

// ---------------------------------------------------------------- time derivative

std::vector<MarginReport> check_time_derivative(const FlowTrajectory& traj, double eps,
                                                const TimeDerivativeOptions& opts) {
    const TorusGrid& g = traj.grid;
    const int n = g.n();
    std::vector<MarginReport> out;
    const Snapshot* first = nullptr;
    for (const auto& s : traj.snapshots)
        if (s.t >= eps * (1 - 1e-12)) {
            first = &s;
            break;
        }
    if (!first) throw MissingSnapshots("check_time_derivative: no snapshot at or after eps=" + fmt(eps));
    const Snapshot& se = *first;
    eps = se.t;

    MarginReport up;
    up.check = "phidot-upper";
    up.anchor = "phidot_t <= (C_up - phi_eps) / t on [eps, T]";
    double C_up = -kInf;
    for (const auto& s : traj.snapshots) {
        if (s.t < eps * (1 - 1e-12) || !s.has_phidot) continue;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double c = s.t * s.phidot[i] + se.phi[i];
            if (c > C_up) {
                C_up = c;
                up.t = s.t;
                up.z = g.coord(i);
            }
        }
    }
    up.margin = std::isfinite(C_up) ? 0.0 : -kInf;
    up.set("C_up", C_up);
    up.set("eps", eps);
    out.push_back(up);

    MarginReport lo;
    lo.check = "phidot-lower";
    lo.anchor = "min_z phidot_t >= n log t - A Osc(phi_0) - C";
    const double t0 = opts.fit_from > 0.0 ? opts.fit_from : 0.0;
    const double t1 = opts.fit_to > 0.0 ? opts.fit_to : traj.final().t;
    std::vector<double> x, y;
    double C_low = -kInf;
    for (const auto& s : traj.snapshots) {
        if (s.t <= 0.0 || !s.has_phidot) continue;
        if (s.t < t0 * (1 - 1e-12) || s.t > t1 * (1 + 1e-12)) continue;
        const Norms nm = norms(s.phidot);
        x.push_back(std::log(s.t));
        y.push_back(nm.inf);
        const double c = n * std::log(s.t) - nm.inf;
        if (c > C_low) {
            C_low = c;
            lo.t = s.t;
        }
    }
    if (x.size() < 2) throw MissingSnapshots("check_time_derivative: fewer than two snapshots in the fit window");
    const auto [slope, intercept] = ols(x, y);
    const bool log_rate = slope >= 0.9 * n;
    lo.margin = std::isfinite(C_low) && std::isfinite(intercept) ? 0.0 : -kInf;
    lo.set("slope", slope);
    lo.set("intercept", intercept);
    lo.set("C_low", C_low);
    lo.set("A_osc", osc(traj.initial().phi));
    lo.note = log_rate ? "min phidot follows n log t" : "bounded below (slope below 0.9 n)";
    out.push_back(lo);
    return out;
}

// ---------------------------------------------------------------- gradient and Laplacian

std::vector<MarginReport> check_gradient_laplacian(const FlowTrajectory& traj) {
    const TorusGrid& g = traj.grid;
    std::vector<MarginReport> out;

    MarginReport gr;
    gr.check = "gradient";
    gr.anchor = "sup |grad phi_t|^2 <= e^{C_g / t}";
    double Cg = 0.0;
    for (const auto& s : traj.snapshots) {
        if (s.t <= 0.0) continue;
        const double b = norms(gradient_sq(s.phi)).sup;
        if (b > 0.0 && s.t * std::log(b) > Cg) {
            Cg = s.t * std::log(b);
            gr.t = s.t;
        }
    }
    gr.margin = std::isfinite(Cg) ? 0.0 : -kInf;
    gr.set("C_g", Cg);
    out.push_back(gr);

    MarginReport lap;
    lap.check = "laplacian";
    lap.anchor = "t log tr_omega(omega_t) <= 2A Osc(phi_{t/2}) + C";
    std::vector<double> xs, ys, ts;
    std::vector<std::string> missing;
    for (const auto& s : traj.snapshots) {
        if (s.t <= 0.0) continue;
        const Snapshot* half = traj.find(0.5 * s.t);
        if (!half) {
            if (s.t >= 2.0 * traj.snapshots[1].t) missing.push_back("(" + fmt(0.5 * s.t) + ", " + fmt(s.t) + ")");
            continue;
        }
        const HermitianField form = traj.problem.path.theta(s.t, g) + complex_hessian(s.phi);
        double tr = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) tr = std::max(tr, form.at(i).trace());
        xs.push_back(2.0 * osc(half->phi));
        ys.push_back(s.t * std::log(tr));
        ts.push_back(s.t);
    }
    if (xs.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : " ") + m;
        throw MissingSnapshots("check_gradient_laplacian: no snapshot pairs (t/2, t); missing " + list);
    }
    auto [A, c0] = ols(xs, ys);
    A = std::max(A, 0.0);
    double C = -kInf;
    for (std::size_t k = 0; k < xs.size(); ++k)
        if (ys[k] - A * xs[k] > C) {
            C = ys[k] - A * xs[k];
            lap.t = ts[k];
        }
    lap.margin = std::isfinite(C) ? 0.0 : -kInf;
    lap.set("A", A);
    lap.set("C", C);
    lap.set("pairs", static_cast<double>(xs.size()));
    if (!missing.empty()) lap.note = std::to_string(missing.size()) + " times without a t/2 snapshot";
    out.push_back(lap);
    return out;
}

// ---------------------------------------------------------------- energy

MarginReport check_energy_monotonicity(const FlowTrajectory& traj, const MetricPath& theta_path,
                                       const VolumeForm& omega_form) {
    const TorusGrid& g = traj.grid;
    std::size_t positive = 0;
    for (const auto& s : traj.snapshots) positive += s.t > 0.0;
    if (positive < 16)
        throw MissingSnapshots("check_energy_monotonicity: need at least 16 snapshots, have " +
                               std::to_string(positive));
    MarginReport r;
    r.check = "energy-monotonicity";
    r.anchor = "t -> E(phi_t) + C_E t is non-decreasing";
    std::vector<double> E;
    for (const auto& s : traj.snapshots)
        E.push_back(energy(theta_path.theta(s.t, g), s.phi, omega_form));
    constexpr double tol = 1e-8;
    double CE = 0.0;
    for (std::size_t k = 1; k < E.size(); ++k) {
        const double dt = traj.snapshots[k].t - traj.snapshots[k - 1].t;
        const double need = (E[k - 1] - E[k] - tol) / dt;
        if (need > CE) {
            CE = need;
            r.t = traj.snapshots[k].t;
        }
    }
    r.set("C_E", CE);
    r.set("E_initial", E.front());
    r.set("E_final", E.back());
    double bound = kInf;
    const bool autonomous = theta_path.kind() == MetricKind::Constant;
    if (autonomous) {
        // d/dt E >= -sup F + relative entropy term >= -sup F - log(vol theta^n / vol Omega)
        const DrivingTerm& F = traj.problem.F;
        double supF = -kInf;
        for (const auto& s : traj.snapshots)
            for (std::size_t i = 0; i < g.size(); i += std::max<std::size_t>(1, g.size() / 4096))
                supF = std::max(supF, F.value(s.t, g.coord(i), s.phi[i]));
        const double vol_theta = theta_path.uniform_theta(0.0).det();
        const double vol_omega = mean(omega_form.density());
        bound = std::max(0.0, supF + std::abs(std::log(vol_theta / vol_omega)));
        r.set("C_E_bound", bound);
    }
    r.margin = std::isfinite(CE) ? (autonomous ? bound - CE : 0.0) : -kInf;
    return r;
}

// ---------------------------------------------------------------- stability

MarginReport check_stability(const ScalarField& phi0, const ScalarField& psi0, const FlowProblem& problem,
                             const FlowConfig& cfg, const StabilityOptions& opts) {
    if (phi0.grid != psi0.grid)
        throw MismatchedDiscretization("check_stability: initial data live on different grids (" +
                                       std::to_string(phi0.grid.resolution()) + " vs " +
                                       std::to_string(psi0.grid.resolution()) + ")");
    if (problem.F.monotonicity_defect > 0.0)
        throw PreconditionFailed("check_stability: dF/ds >= 0 is not certified; reduce the problem first");
    if (opts.homotopy_samples < 2) throw InvalidArgument("check_stability: need at least two homotopy samples");
    const TorusGrid& g = phi0.grid;
    MarginReport r;
    r.check = "stability";
    r.anchor = "||phi_t - psi_t|| <= ||phi_0 - psi_0||, and d/dlambda of the homotopy is non-increasing";

    const FlowTrajectory a = run(phi0, problem, cfg);
    const FlowTrajectory b = run(psi0, problem, cfg);
    const double d0 = sup_distance(phi0, psi0);
    const double tol = comparison_tolerance(g, std::max(osc(phi0), osc(psi0)));
    double contraction = kInf, c0 = 0.0;
    for (std::size_t k = 0; k < a.snapshots.size(); ++k) {
        const double d = sup_distance(a.snapshots[k].phi, b.snapshots[k].phi);
        const double m = d0 + tol - d;
        if (m < contraction) {
            contraction = m;
            r.t = a.snapshots[k].t;
        }
        if (d0 > 0.0 && a.snapshots[k].t > 0.0) c0 = std::max(c0, d / d0);
    }

    // homotopy (1 - lambda) phi0 + lambda psi0
    const int m = opts.homotopy_samples;
    std::vector<FlowTrajectory> family;
    for (int i = 0; i < m; ++i) {
        const double lam = static_cast<double>(i) / (m - 1);
        ScalarField start = phi0;
        for (std::size_t p = 0; p < g.size(); ++p) start[p] = (1.0 - lam) * phi0[p] + lam * psi0[p];
        family.push_back(i == 0 ? a : (i == m - 1 ? b : run(start, problem, cfg)));
    }
    double homotopy = kInf;
    const double dl = 1.0 / (m - 1);
    for (int i = 0; i + 1 < m; ++i) {
        double prev = kInf;
        for (std::size_t k = 0; k < family[i].snapshots.size(); ++k) {
            const double d = sup_distance(family[i + 1].snapshots[k].phi, family[i].snapshots[k].phi) / dl;
            if (std::isfinite(prev)) homotopy = std::min(homotopy, prev + tol / dl - d);
            prev = d;
        }
    }

    // second-order diagnostic
    const double eps = opts.eps > 0.0 ? opts.eps : 0.1 * cfg.T;
    std::size_t ke = a.snapshots.size() - 1;
    for (std::size_t k = 0; k < a.snapshots.size(); ++k)
        if (a.snapshots[k].t >= eps * (1 - 1e-12)) {
            ke = k;
            break;
        }
    const double lap = sup_distance(laplacian(a.snapshots[ke].phi), laplacian(b.snapshots[ke].phi));
    r.margin = std::min(contraction, homotopy);
    r.set("initial_distance", d0);
    r.set("tol_cmp", tol);
    r.set("contraction_margin", contraction);
    r.set("homotopy_margin", homotopy);
    r.set("C0_empirical", c0);
    r.set("C2_empirical", d0 > 0.0 ? lap / d0 : 0.0);
    r.set("C2_time", a.snapshots[ke].t);
    return r;
}

// ---------------------------------------------------------------- uniqueness

MarginReport check_uniqueness(const CascadeResult& a, const CascadeResult& b, const FlowProblem& problem) {
    (void)problem;
    if (a.probe_times.size() != b.probe_times.size())
        throw MismatchedDiscretization("check_uniqueness: probe times differ");
    MarginReport r;
    r.check = "uniqueness";
    r.anchor = "cascade limits do not depend on the approximating sequence";
    const TorusGrid& g = a.limit.front().grid;
    const double tol = comparison_tolerance(g, std::max(a.osc0, b.osc0));
    double margin = kInf, ext = 0.0;
    for (std::size_t p = 0; p < a.probe_times.size(); ++p) {
        if (!close_time(a.probe_times[p], b.probe_times[p]))
            throw MismatchedDiscretization("check_uniqueness: probe times differ");
        const double d = sup_distance(a.limit[p], b.limit[p]);
        const double m = a.gap[p] + b.gap[p] + tol - d;
        if (m < margin) {
            margin = m;
            r.t = a.probe_times[p];
            r.set("difference", d);
            r.set("gap_sum", a.gap[p] + b.gap[p]);
        }
        ext = std::max(ext, sup_distance(a.extrapolated[p], b.extrapolated[p]));
    }
    r.margin = margin;
    r.set("tol_cmp", tol);
    r.set("extrapolated_difference", ext);
    r.set("osc0", a.osc0);
    return r;
}

MarginReport check_uniqueness(const RoughPotential& phi0, const FlowProblem& problem, const TorusGrid& grid,
                              const FlowConfig& cfg, const RegularizationSchedule& first,
                              const RegularizationSchedule& second, const CascadeOptions& opts) {
    const DrivingTerm& F = problem.F;
    if (!(F.monotonicity_defect == 0.0))
        throw PreconditionFailed("check_uniqueness: requires C = 0 (driving term '" + F.name + "')");
    if (!F.smooth)
        throw PreconditionFailed("check_uniqueness: driving term '" + F.name + "' is not smooth; no certificate");
    if (!std::isfinite(F.time_bound))
        throw PreconditionFailed("check_uniqueness: requires a finite bound C' on dF/dt");
    const double T = problem.path.horizon();
    const double A = F.time_bound + 0.5 * (1.0 / T - F.time_bound);
    const ReducedProblem cert = uniqueness_rescale(problem, A);
    const CascadeResult a = run_cascade(phi0, first, grid, problem, cfg, opts);
    const CascadeResult b = run_cascade(phi0, second, grid, problem, cfg, opts);
    MarginReport r = check_uniqueness(a, b, problem);
    r.set("A", cert.transform.rate);
    return r;
}

// ---------------------------------------------------------------- convergence modes

std::vector<MarginReport> check_convergence_modes(const CascadeResult& cascade, const RoughPotential& phi0,
                                                  const FlowProblem& problem, const ConvergenceOptions& opts) {
    std::vector<double> times = opts.times;
    if (times.empty()) {
        times = cascade.probe_times;
        std::sort(times.rbegin(), times.rend());
    }
    std::vector<const ScalarField*> fields;
    for (double t : times) {
        std::size_t idx = cascade.probe_times.size();
        for (std::size_t p = 0; p < cascade.probe_times.size(); ++p)
            if (close_time(cascade.probe_times[p], t)) idx = p;
        if (idx == cascade.probe_times.size())
            throw MissingSnapshots("check_convergence_modes: cascade has no limit at t=" + fmt(t));
        fields.push_back(opts.use_extrapolated ? &cascade.extrapolated[idx] : &cascade.limit[idx]);
    }
    if (fields.size() < 2) throw MissingSnapshots("check_convergence_modes: need at least two ladder times");
    const ScalarField& init = cascade.ladder.initial;
    const TorusGrid& g = init.grid;
    const double o = std::max(cascade.osc0, 1e-300);
    const double target = opts.final_fraction * o;
    const double mono_tol = 1e-12 * o;
    std::vector<MarginReport> out;

    auto series_report = [&](const std::string& name, const std::string& anchor, const std::vector<double>& d,
                             bool bound_final) {
        MarginReport r;
        r.check = name;
        r.anchor = anchor;
        double m = kInf;
        for (std::size_t k = 0; k + 1 < d.size(); ++k)
            if (d[k] - d[k + 1] + mono_tol < m) {
                m = d[k] - d[k + 1] + mono_tol;
                r.t = times[k + 1];
            }
        if (bound_final) m = std::min(m, target - d.back());
        r.margin = m;
        for (std::size_t k = 0; k < d.size(); ++k) r.set("d[" + std::to_string(k) + "]", d[k]);
        r.set("final", d.back());
        if (bound_final) r.set("target", target);
        return r;
    };

    std::vector<double> l1;
    for (const auto* f : fields) l1.push_back(l1_distance(*f, init));
    out.push_back(series_report("convergence-l1", "phi_t -> phi_0 in L1", l1, true));

    const Regularity tag = phi0.tag();
    if (tag == Regularity::Smooth || tag == Regularity::Lipschitz) {
        std::vector<double> sup;
        for (const auto* f : fields) sup.push_back(sup_distance(*f, init));
        out.push_back(series_report("convergence-sup", "phi_t -> phi_0 uniformly", sup, tag == Regularity::Smooth));
    }
    if (tag == Regularity::Bounded) {
        const double level = opts.capacity_level > 0.0 ? opts.capacity_level : 0.05 * o;
        std::vector<double> cap;
        for (const auto* f : fields) {
            ScalarField K(g);
            for (std::size_t i = 0; i < g.size(); ++i) K[i] = std::abs((*f)[i] - init[i]) > level ? 1.0 : 0.0;
            cap.push_back(capacity_lower_bound(K, opts.capacity_dictionary, opts.seed));
        }
        MarginReport r = series_report("convergence-capacity", "phi_t -> phi_0 in capacity", cap, false);
        r.set("level", level);
        // the decreasing ladder itself: Cap{phi_{0,j} > phi_0 + eps} decreases to 0
        double prev = kInf, ladder_margin = kInf;
        for (std::size_t j = 0; j < cascade.ladder.levels.size(); ++j) {
            ScalarField K(g);
            for (std::size_t i = 0; i < g.size(); ++i) K[i] = cascade.ladder.levels[j][i] > init[i] + level ? 1.0 : 0.0;
            const double c = capacity_lower_bound(K, opts.capacity_dictionary, opts.seed);
            r.set("ladder[" + std::to_string(j) + "]", c);
            if (std::isfinite(prev)) ladder_margin = std::min(ladder_margin, prev - c + 1e-15);
            prev = c;
        }
        r.margin = std::min(r.margin, ladder_margin);
        out.push_back(r);
    }
    // energy mode when E(phi_0) is finite (phi_0 is discretely theta_0-psh)
    const HermitianField theta0 = problem.path.theta(0.0, g);
    if (psh_margin(theta0, init) >= -kDefaultTolPsh) {
        const double E0 = energy(theta0, init, problem.omega);
        std::vector<double> de;
        for (std::size_t k = 0; k < fields.size(); ++k)
            de.push_back(std::abs(energy(problem.path.theta(times[k], g), *fields[k], problem.omega) - E0));
        MarginReport r = series_report("convergence-energy", "E(phi_t) -> E(phi_0)", de, false);
        r.set("E0", E0);
        out.push_back(r);
    }
    return out;
}

}  // namespace cmaf
