#include "cmaflow/cli_reporting.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "cmaflow/errors.hpp"

namespace cmaf {

using nlohmann::json;

namespace {

constexpr double pi = std::numbers::pi;

[[noreturn]] void bad(const std::string& what) { throw ConfigError("config: " + what); }

void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) bad(where + " must be an object");
    const std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) bad("unknown key '" + k + "' in " + where);
}

double num(const json& j, const std::string& key, double fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (v.is_number()) return v.get<double>();
    if (v.is_string() && v.get<std::string>() == "inf") return kUnbounded;
    bad(where + "." + key + " must be a number");
}

int integer(const json& j, const std::string& key, int fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer()) bad(where + "." + key + " must be an integer");
    return j.at(key).get<int>();
}

std::string str(const json& j, const std::string& key, const std::string& fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string()) bad(where + "." + key + " must be a string");
    return j.at(key).get<std::string>();
}

json number_json(double x) {
    if (std::isfinite(x)) return x;
    return x > 0 ? json("inf") : json("-inf");
}

std::vector<double> num_list(const json& j, const std::string& where) {
    if (!j.is_array()) bad(where + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number()) bad(where + " must be an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

/// Scalar (multiple of I) or [a11] / [a11, a22] / [a11, a22, re12, im12].
HermMat herm(const json& j, int n, const std::string& where) {
    if (j.is_number()) return HermMat::scalar(n, j.get<double>());
    const auto v = num_list(j, where);
    if (n == 1) {
        if (v.size() != 1) bad(where + " must have one entry for n = 1");
        return HermMat::scalar(1, v[0]);
    }
    if (v.size() == 2) return HermMat::diag(v[0], v[1]);
    if (v.size() == 4) return HermMat{2, v[0], v[1], {v[2], v[3]}};
    bad(where + " must have 2 or 4 entries for n = 2");
}

json herm_json(const HermMat& m) {
    if (m.n == 1) return json::array({m.a11});
    return json::array({m.a11, m.a22, m.a12.real(), m.a12.imag()});
}

Coord coord(const json& j, const std::string& where) {
    const auto v = num_list(j, where);
    if (v.empty() || v.size() > 4) bad(where + " must have 1 to 4 entries");
    Coord c{0, 0, 0, 0};
    std::copy(v.begin(), v.end(), c.begin());
    return c;
}

json flow_json(const FlowConfig& f) {
    return {{"T", f.T},
            {"t_min", f.t_min},
            {"ratio", f.ratio},
            {"dt_max", number_json(f.dt_max)},
            {"probe_times", f.probe_times},
            {"newton_tol", f.newton_tol},
            {"max_newton", f.max_newton},
            {"damping", f.damping},
            {"min_damping", f.min_damping},
            {"gmres_restart", f.gmres_restart},
            {"gmres_rtol", f.gmres_rtol},
            {"gmres_max_iters", f.gmres_max_iters},
            {"store_all", f.store_all}};
}

FlowConfig flow_from(const json& j) {
    allow_keys(j, "flow",
               {"T", "t_min", "ratio", "dt_max", "probe_times", "newton_tol", "max_newton", "damping", "min_damping",
                "gmres_restart", "gmres_rtol", "gmres_max_iters", "store_all"});
    FlowConfig f;
    f.T = num(j, "T", f.T, "flow");
    f.t_min = num(j, "t_min", f.t_min, "flow");
    f.ratio = num(j, "ratio", f.ratio, "flow");
    f.dt_max = num(j, "dt_max", f.dt_max, "flow");
    if (j.contains("probe_times")) f.probe_times = num_list(j.at("probe_times"), "flow.probe_times");
    f.newton_tol = num(j, "newton_tol", f.newton_tol, "flow");
    f.max_newton = integer(j, "max_newton", f.max_newton, "flow");
    f.damping = num(j, "damping", f.damping, "flow");
    f.min_damping = num(j, "min_damping", f.min_damping, "flow");
    f.gmres_restart = integer(j, "gmres_restart", f.gmres_restart, "flow");
    f.gmres_rtol = num(j, "gmres_rtol", f.gmres_rtol, "flow");
    f.gmres_max_iters = integer(j, "gmres_max_iters", f.gmres_max_iters, "flow");
    if (j.contains("store_all")) {
        if (!j.at("store_all").is_boolean()) bad("flow.store_all must be a boolean");
        f.store_all = j.at("store_all").get<bool>();
    }
    f.validate();
    return f;
}

RegularizationSchedule schedule_from(const json& j, const std::string& where) {
    allow_keys(j, where, {"deltas", "first", "ratio", "count"});
    RegularizationSchedule s;
    if (j.contains("deltas")) {
        s.deltas = num_list(j.at("deltas"), where + ".deltas");
    } else {
        s = RegularizationSchedule::geometric(num(j, "first", 0.25, where), num(j, "ratio", 0.5, where),
                                              integer(j, "count", 4, where));
    }
    try {
        s.validate();
    } catch (const Error& e) {
        bad(where + ": " + e.what());
    }
    return s;
}

json normalize_metric(const json& j, int n) {
    const json src = j.is_null() ? json{{"kind", "constant"}} : j;
    allow_keys(src, "metric", {"kind", "theta", "slope", "eps"});
    const std::string kind = str(src, "kind", "constant", "metric");
    json out{{"kind", kind}};
    if (kind == "constant") {
        out["theta"] = herm_json(herm(src.value("theta", json(1.0)), n, "metric.theta"));
    } else if (kind == "affine") {
        out["theta"] = herm_json(herm(src.value("theta", json(1.0)), n, "metric.theta"));
        if (!src.contains("slope")) bad("metric.slope is required for affine paths");
        out["slope"] = herm_json(herm(src.at("slope"), n, "metric.slope"));
    } else if (kind == "nef") {
        if (!src.contains("theta")) bad("metric.theta is required for nef paths");
        out["theta"] = herm_json(herm(src.at("theta"), n, "metric.theta"));
        out["eps"] = num(src, "eps", 0.0, "metric");
    } else {
        bad("metric.kind '" + kind + "' is not one of constant, affine, nef");
    }
    return out;
}

json normalize_volume(const json& j) {
    const json src = j.is_null() ? json{{"kind", "uniform"}} : j;
    allow_keys(src, "volume", {"kind", "value", "amplitude"});
    const std::string kind = str(src, "kind", "uniform", "volume");
    const double value = num(src, "value", 1.0, "volume");
    if (!(value > 0.0)) bad("volume.value must be positive");
    if (kind == "uniform") return {{"kind", kind}, {"value", value}};
    if (kind == "cosine") {
        const double a = num(src, "amplitude", 0.0, "volume");
        if (!(std::abs(a) < 1.0)) bad("volume.amplitude must lie in (-1, 1)");
        return {{"kind", kind}, {"value", value}, {"amplitude", a}};
    }
    bad("volume.kind '" + kind + "' is not one of uniform, cosine");
}

json normalize_driving(const json& j) {
    const json src = j.is_null() ? json{{"kind", "zero"}} : j;
    allow_keys(src, "driving", {"kind", "A", "kappa", "offset", "b", "beta", "a"});
    const std::string kind = str(src, "kind", "zero", "driving");
    if (kind == "zero" || kind == "counterexample") return {{"kind", kind}};
    if (kind == "constant") return {{"kind", kind}, {"A", num(src, "A", 0.0, "driving")}};
    if (kind == "linear")
        return {{"kind", kind}, {"kappa", num(src, "kappa", 1.0, "driving")}, {"offset", num(src, "offset", 0.0, "driving")}};
    if (kind == "affine")
        return {{"kind", kind},
                {"kappa", num(src, "kappa", 0.0, "driving")},
                {"b", num(src, "b", 0.0, "driving")},
                {"beta", num(src, "beta", 0.0, "driving")}};
    if (kind == "tanh")
        return {{"kind", kind},
                {"a", num(src, "a", 1.0, "driving")},
                {"b", num(src, "b", 0.0, "driving")},
                {"beta", num(src, "beta", 0.0, "driving")}};
    bad("driving.kind '" + kind + "' is not one of zero, constant, linear, affine, tanh, counterexample");
}

json normalize_initial(const json& j) {
    const json src = j.is_null() ? json{{"kind", "constant"}} : j;
    allow_keys(src, "initial",
               {"kind", "value", "terms", "count", "max_mode", "psh_fraction", "a", "b", "c", "gamma", "center",
                "r_cut", "path", "tag", "floor"});
    const std::string kind = str(src, "kind", "constant", "initial");
    json out{{"kind", kind}};
    if (src.contains("floor")) out["floor"] = num(src, "floor", kDefaultClampFloor, "initial");
    if (kind == "constant") {
        out["value"] = num(src, "value", 0.0, "initial");
    } else if (kind == "fourier") {
        if (!src.contains("terms") || !src.at("terms").is_array()) bad("initial.terms must be an array");
        json terms = json::array();
        for (const auto& t : src.at("terms")) {
            allow_keys(t, "initial.terms[]", {"amplitude", "mode", "phase"});
            const auto m = num_list(t.value("mode", json::array({1})), "initial.terms[].mode");
            if (m.empty() || m.size() > 4) bad("initial.terms[].mode must have 1 to 4 entries");
            std::vector<int> mi;
            for (double x : m) {
                if (x != std::round(x)) bad("initial.terms[].mode must be integers");
                mi.push_back(static_cast<int>(x));
            }
            mi.resize(4, 0);
            terms.push_back({{"amplitude", num(t, "amplitude", 0.0, "initial.terms[]")},
                             {"mode", mi},
                             {"phase", num(t, "phase", 0.0, "initial.terms[]")}});
        }
        out["terms"] = terms;
    } else if (kind == "random-fourier") {
        out["count"] = integer(src, "count", 3, "initial");
        out["max_mode"] = integer(src, "max_mode", 2, "initial");
        out["psh_fraction"] = num(src, "psh_fraction", 0.5, "initial");
        out["value"] = num(src, "value", 0.0, "initial");
        if (out["count"].get<int>() < 1 || out["max_mode"].get<int>() < 1) bad("initial: count and max_mode must be >= 1");
        const double f = out["psh_fraction"].get<double>();
        if (!(f > 0.0 && f < 1.0)) bad("initial.psh_fraction must lie in (0, 1)");
    } else if (kind == "max-kink") {
        out["a"] = num(src, "a", 1.0 / (2 * pi * pi), "initial");
        out["b"] = num(src, "b", 0.0, "initial");
    } else if (kind == "parabola-kink") {
        out["c"] = num(src, "c", 1.0, "initial");
    } else if (kind == "log-pole" || kind == "sqrt-log-pole" || kind == "truncated-log-pole") {
        out["gamma"] = num(src, "gamma", 0.1, "initial");
        const Coord c = src.contains("center") ? coord(src.at("center"), "initial.center") : Coord{0.5, 0.5, 0.5, 0.5};
        out["center"] = std::vector<double>(c.begin(), c.end());
        if (kind == "truncated-log-pole") out["r_cut"] = num(src, "r_cut", 0.05, "initial");
    } else if (kind == "snapshot") {
        out["path"] = str(src, "path", "", "initial");
        if (out["path"].get<std::string>().empty()) bad("initial.path is required for snapshot data");
        const std::string tag = str(src, "tag", "smooth", "initial");
        try {
            regularity_from_name(tag);
        } catch (const Error&) {
            bad("initial.tag '" + tag + "' is not a regularity tag");
        }
        out["tag"] = tag;
    } else {
        bad("initial.kind '" + kind +
            "' is not one of constant, fourier, random-fourier, max-kink, parabola-kink, log-pole, sqrt-log-pole, "
            "truncated-log-pole, snapshot");
    }
    return out;
}

HermitianField uniform_form(const TorusGrid& g, const HermMat& m) { return HermitianField::constant(g, m); }

std::string fmt(double x) {
    std::ostringstream os;
    os << std::setprecision(6) << x;
    return os.str();
}

std::string index_name(const std::string& stem, std::size_t k) {
    std::ostringstream os;
    os << stem << '_' << std::setw(4) << std::setfill('0') << k << ".bin";
    return os.str();
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream os(p);
    if (!os) throw ConfigError("cannot write " + p.string());
    os << std::setw(2) << j << '\n';
}

json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw ConfigError("cannot read " + p.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(p.string() + ": " + e.what());
    }
}

bool uniqueness_refused(const DrivingTerm& F) { return !F.smooth || F.monotonicity_defect > 0.0; }

}  // namespace

// ---------------------------------------------------------------- config

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

RunConfig RunConfig::from_json(const json& j) {
    allow_keys(j, "config",
               {"name", "grid", "metric", "volume", "driving", "initial", "flow", "cascade", "cascade_alt", "nef",
                "checks", "out", "seed", "acceptance"});
    RunConfig c;
    c.name = str(j, "name", c.name, "config");
    if (!j.contains("grid")) bad("grid is required");
    const json& g = j.at("grid");
    allow_keys(g, "grid", {"n", "resolution", "backend"});
    c.n = integer(g, "n", 1, "grid");
    c.resolution = integer(g, "resolution", 64, "grid");
    if (c.n != 1 && c.n != 2) bad("grid.n must be 1 or 2");
    if (c.resolution < 4 || (c.resolution & (c.resolution - 1)) != 0) bad("grid.resolution must be a power of two >= 4");
    const std::string backend = str(g, "backend", "spectral", "grid");
    try {
        c.backend = backend_from_name(backend);
    } catch (const Error&) {
        bad("grid.backend '" + backend + "' is unknown");
    }
    c.metric = normalize_metric(j.value("metric", json()), c.n);
    c.volume = normalize_volume(j.value("volume", json()));
    c.driving = normalize_driving(j.value("driving", json()));
    c.initial = normalize_initial(j.value("initial", json()));
    try {
        c.flow = flow_from(j.value("flow", json::object()));
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        bad(std::string("flow: ") + e.what());
    }
    if (j.contains("cascade")) {
        json cj = j.at("cascade");
        if (cj.is_object() && cj.contains("tolerance_factor")) {
            c.cascade_tolerance_factor = num(cj, "tolerance_factor", 1e-7, "cascade");
            cj.erase("tolerance_factor");
        }
        c.cascade = schedule_from(cj, "cascade");
    }
    if (j.contains("cascade_alt")) c.cascade_alt = schedule_from(j.at("cascade_alt"), "cascade_alt");
    if (j.contains("nef")) {
        allow_keys(j.at("nef"), "nef", {"eps"});
        if (j.at("nef").contains("eps")) c.nef_eps = num_list(j.at("nef").at("eps"), "nef.eps");
        for (std::size_t k = 0; k < c.nef_eps.size(); ++k)
            if (!(c.nef_eps[k] > 0.0) || (k && !(c.nef_eps[k] < c.nef_eps[k - 1])))
                bad("nef.eps must be positive and strictly decreasing");
    }
    if (j.contains("checks")) {
        if (!j.at("checks").is_array()) bad("checks must be an array of names");
        const auto known = known_checks();
        for (const auto& v : j.at("checks")) {
            if (!v.is_string()) bad("checks must be an array of names");
            const auto s = v.get<std::string>();
            if (std::find(known.begin(), known.end(), s) == known.end()) bad("unknown check '" + s + "'");
            c.checks.push_back(s);
        }
    }
    c.out = str(j, "out", c.out, "config");
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer()) bad("seed must be an integer");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
    json src{{"name", c.name},
             {"grid", {{"n", c.n}, {"resolution", c.resolution}, {"backend", backend_name(c.backend)}}},
             {"metric", c.metric},
             {"volume", c.volume},
             {"driving", c.driving},
             {"initial", c.initial},
             {"flow", flow_json(c.flow)},
             {"checks", c.checks},
             {"out", c.out},
             {"seed", c.seed}};
    if (c.cascade) src["cascade"] = {{"deltas", c.cascade->deltas}, {"tolerance_factor", c.cascade_tolerance_factor}};
    if (c.cascade_alt) src["cascade_alt"] = {{"deltas", c.cascade_alt->deltas}};
    if (c.metric.at("kind") == "nef") src["nef"] = {{"eps", c.nef_eps}};
    if (j.contains("acceptance")) src["acceptance"] = j.at("acceptance");
    c.source = src;
    return c;
}

RunConfig RunConfig::load(const fs::path& path) { return from_json(read_json(path)); }

std::string RunConfig::hash() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(source.dump());
    return os.str();
}

TorusGrid RunConfig::grid() const { return TorusGrid(n, resolution, backend); }

bool RunConfig::is_nef() const { return metric.at("kind") == "nef"; }

FlowProblem RunConfig::problem() const {
    const TorusGrid g = grid();
    const double T = flow.T;
    const std::string mk = metric.at("kind");
    MetricPath path = MetricPath::constant(HermMat::identity(n), T);
    if (mk == "constant") path = MetricPath::constant(herm(metric.at("theta"), n, "metric.theta"), T);
    if (mk == "affine")
        path = MetricPath::affine(herm(metric.at("theta"), n, "metric.theta"), herm(metric.at("slope"), n, "metric.slope"),
                                  T);
    if (mk == "nef") path = MetricPath::nef(herm(metric.at("theta"), n, "metric.theta"), T, metric.at("eps").get<double>());

    VolumeForm vol = VolumeForm::uniform(g, volume.at("value").get<double>());
    if (volume.at("kind") == "cosine") {
        const double v = volume.at("value"), a = volume.at("amplitude");
        vol = VolumeForm(ScalarField::sample(g, [=](const Coord& x) { return v * (1.0 + a * std::cos(2 * pi * x[0])); }));
    }

    const std::string dk = driving.at("kind");
    DrivingTerm F = DrivingTerm::zero();
    if (dk == "constant") F = DrivingTerm::constant(driving.at("A"));
    if (dk == "linear") F = DrivingTerm::linear(driving.at("kappa"), driving.at("offset"));
    if (dk == "affine") F = DrivingTerm::affine(driving.at("kappa"), driving.at("b"), driving.at("beta"));
    if (dk == "tanh") F = DrivingTerm::tanh_term(driving.at("a"), driving.at("b"), driving.at("beta"));
    if (dk == "counterexample") F = DrivingTerm::counterexample();
    return FlowProblem{path, F, vol};
}

RoughPotential RunConfig::potential() const {
    const std::string k = initial.at("kind");
    auto center = [&] {
        const auto v = initial.at("center").get<std::vector<double>>();
        return Coord{v[0], v[1], v[2], v[3]};
    };
    RoughPotential p = RoughPotential::constant(n, 0.0);
    if (k == "constant") p = RoughPotential::constant(n, initial.at("value"));
    if (k == "fourier") {
        std::vector<FourierTerm> terms;
        for (const auto& t : initial.at("terms")) {
            const auto m = t.at("mode").get<std::vector<int>>();
            terms.push_back(FourierTerm{t.at("amplitude"), {m[0], m[1], m[2], m[3]}, t.at("phase")});
        }
        p = RoughPotential::fourier_sum(n, terms);
    }
    if (k == "random-fourier") {
        // seeded modes with sum |a| pi^2 |m|^2 = psh_fraction, so I + H phi >= 1 - psh_fraction
        std::mt19937_64 rng(seed);
        const int count = initial.at("count"), M = initial.at("max_mode");
        std::uniform_int_distribution<int> mode(-M, M);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<FourierTerm> terms;
        double weight = 0.0;
        while (static_cast<int>(terms.size()) < count) {
            std::array<int, 4> m{0, 0, 0, 0};
            for (int a = 0; a < 2 * n; ++a) m[a] = mode(rng);
            int sq = 0;
            for (int a : m) sq += a * a;
            const double amp = unit(rng), phase = 2 * pi * unit(rng);
            if (sq == 0) continue;
            terms.push_back(FourierTerm{amp, m, phase});
            weight += amp * pi * pi * sq;
        }
        const double scale = initial.at("psh_fraction").get<double>() / weight;
        for (auto& t : terms) t.amplitude *= scale;
        terms.push_back(FourierTerm{initial.at("value").get<double>(), {0, 0, 0, 0}, 0.0});
        p = RoughPotential::fourier_sum(n, terms);
    }
    if (k == "max-kink") p = RoughPotential::max_kink(n, initial.at("a"), initial.at("b"));
    if (k == "parabola-kink") p = RoughPotential::parabola_kink(n, initial.at("c"));
    if (k == "log-pole") p = RoughPotential::log_pole(n, initial.at("gamma"), center());
    if (k == "sqrt-log-pole") p = RoughPotential::sqrt_log_pole(n, initial.at("gamma"), center());
    if (k == "truncated-log-pole")
        p = RoughPotential::truncated_log_pole(n, initial.at("gamma"), center(), initial.at("r_cut"));
    if (k == "snapshot") {
        ScalarField f = read_field(initial.at("path").get<std::string>());
        if (f.grid.n() != n) throw MismatchedDiscretization("initial snapshot has dimension " + std::to_string(f.grid.n()));
        p = RoughPotential("snapshot", std::move(f), regularity_from_name(initial.at("tag")));
    }
    if (initial.contains("floor")) p.set_floor(initial.at("floor"));
    return p;
}

// ---------------------------------------------------------------- snapshots

void write_field(const fs::path& bin, const ScalarField& f, const json& meta) {
    std::ofstream os(bin, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + bin.string());
    for (double v : f.values) {
        std::uint64_t u = std::bit_cast<std::uint64_t>(v);
        if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
        os.write(reinterpret_cast<const char*>(&u), sizeof u);
    }
    json side = meta.is_object() ? meta : json::object();
    side["grid"] = {{"n", f.grid.n()}, {"resolution", f.grid.resolution()}, {"backend", backend_name(f.grid.backend())}};
    side["format"] = "binary64-le";
    side["count"] = f.size();
    write_json(fs::path(bin.string() + ".json"), side);
}

ScalarField read_field(const fs::path& bin) {
    const json side = read_json(fs::path(bin.string() + ".json"));
    const json& gj = side.at("grid");
    const TorusGrid g(gj.at("n").get<int>(), gj.at("resolution").get<int>(),
                      backend_from_name(gj.at("backend").get<std::string>()));
    std::ifstream is(bin, std::ios::binary);
    if (!is) throw ConfigError("cannot read " + bin.string());
    ScalarField f(g);
    for (double& v : f.values) {
        std::uint64_t u = 0;
        if (!is.read(reinterpret_cast<char*>(&u), sizeof u)) throw ConfigError(bin.string() + ": truncated snapshot");
        if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
        v = std::bit_cast<double>(u);
    }
    if (is.peek() != std::char_traits<char>::eof()) throw ConfigError(bin.string() + ": trailing bytes in snapshot");
    return f;
}

json to_json(const StepDiagnostics& d) {
    return {{"t", d.t},
            {"newton_iters", d.newton_iters},
            {"linear_iters", d.linear_iters},
            {"residual", d.residual},
            {"certified_residual", d.certified_residual},
            {"positivity_margin", number_json(d.positivity_margin)},
            {"min_damping", d.min_damping}};
}

StepDiagnostics diagnostics_from_json(const json& j) {
    auto get = [&](const char* k) {
        const json& v = j.at(k);
        if (v.is_number()) return v.get<double>();
        return v.get<std::string>() == "inf" ? kUnbounded : -kUnbounded;
    };
    StepDiagnostics d;
    d.t = get("t");
    d.newton_iters = j.at("newton_iters").get<int>();
    d.linear_iters = j.at("linear_iters").get<int>();
    d.residual = get("residual");
    d.certified_residual = get("certified_residual");
    d.positivity_margin = get("positivity_margin");
    d.min_damping = get("min_damping");
    return d;
}

void write_archive(const fs::path& dir, const FlowTrajectory& traj, const RunConfig& cfg, const json& extra) {
    fs::create_directories(dir / "snapshots");
    json snaps = json::array();
    for (std::size_t k = 0; k < traj.snapshots.size(); ++k) {
        const Snapshot& s = traj.snapshots[k];
        const std::string phi = "snapshots/" + index_name("phi", k);
        write_field(dir / phi, s.phi, {{"t", s.t}, {"config_hash", cfg.hash()}});
        json e{{"index", k}, {"t", s.t}, {"phi", phi}, {"diag", to_json(s.diag)}};
        if (s.has_phidot) {
            const std::string pd = "snapshots/" + index_name("phidot", k);
            write_field(dir / pd, s.phidot, {{"t", s.t}, {"config_hash", cfg.hash()}});
            e["phidot"] = pd;
        }
        snaps.push_back(e);
    }
    json steps = json::array();
    for (const auto& d : traj.steps) steps.push_back(to_json(d));
    json m{{"config_hash", cfg.hash()},
           {"config", cfg.to_json()},
           {"label", traj.label},
           {"schedule", traj.schedule},
           {"steps", steps},
           {"snapshots", snaps},
           {"notices", json::array()}};
    if (uniqueness_refused(traj.problem.F))
        m["notices"].push_back("NO-UNIQUENESS-CERTIFICATE: driving term '" + traj.problem.F.name +
                               "' is not smooth or has dF/ds unbounded below; distinct solutions may share this "
                               "initial datum (phi = 0 and phi = t^2 for the counterexample)");
    for (const auto& [k, v] : extra.items()) {
        if (k == "notices")
            for (const auto& n : v) m["notices"].push_back(n);
        else
            m[k] = v;
    }
    write_json(dir / "manifest.json", m);
}

Archive read_archive(const fs::path& dir) {
    Archive a;
    a.manifest = read_json(dir / "manifest.json");
    a.config = RunConfig::from_json(a.manifest.at("config"));
    if (a.config.hash() != a.manifest.at("config_hash").get<std::string>())
        throw ConfigError(dir.string() + ": config hash mismatch");
    FlowTrajectory& t = a.trajectory;
    t.grid = a.config.grid();
    t.problem = a.config.problem();
    if (a.manifest.contains("nef_eps")) {
        const double eps = a.manifest.at("nef_eps");
        t.problem.path =
            MetricPath::nef(herm(a.config.metric.at("theta"), a.config.n, "metric.theta"), a.config.flow.T, eps);
    }
    t.label = a.manifest.value("label", "");
    t.schedule = a.manifest.at("schedule").get<std::vector<double>>();
    for (const auto& d : a.manifest.at("steps")) t.steps.push_back(diagnostics_from_json(d));
    for (const auto& e : a.manifest.at("snapshots")) {
        Snapshot s;
        s.t = e.at("t");
        s.phi = read_field(dir / e.at("phi").get<std::string>());
        if (s.phi.grid != t.grid) throw MismatchedDiscretization(dir.string() + ": snapshot grid differs from config");
        if (e.contains("phidot")) {
            s.phidot = read_field(dir / e.at("phidot").get<std::string>());
            s.has_phidot = true;
        }
        s.diag = diagnostics_from_json(e.at("diag"));
        t.snapshots.push_back(std::move(s));
    }
    if (t.snapshots.empty()) throw ConfigError(dir.string() + ": archive has no snapshots");
    return a;
}

// ---------------------------------------------------------------- series

std::vector<std::string> series_quantities() {
    return {"sup", "inf", "osc", "mean", "min-phidot", "max-phidot", "sup-trace", "energy", "l1-initial", "sup-initial"};
}

std::vector<std::pair<double, double>> series(const FlowTrajectory& traj, const std::string& q) {
    const auto known = series_quantities();
    if (std::find(known.begin(), known.end(), q) == known.end())
        throw InvalidArgument("unknown series quantity '" + q + "'");
    std::vector<std::pair<double, double>> out;
    const ScalarField& init = traj.initial().phi;
    for (const auto& s : traj.snapshots) {
        double v = 0.0;
        if (q == "sup") v = norms(s.phi).sup;
        if (q == "inf") v = norms(s.phi).inf;
        if (q == "osc") v = norms(s.phi).osc;
        if (q == "mean") v = mean(s.phi);
        if (q == "min-phidot" || q == "max-phidot") {
            if (!s.has_phidot) continue;
            v = q == "min-phidot" ? norms(s.phidot).inf : norms(s.phidot).sup;
        }
        if (q == "sup-trace") {
            const HermitianField form = traj.problem.path.theta(s.t, traj.grid) + complex_hessian(s.phi);
            v = -kUnbounded;
            for (std::size_t i = 0; i < form.size(); ++i) v = std::max(v, form.at(i).trace());
        }
        if (q == "energy") v = energy(traj.problem.path.theta(s.t, traj.grid), s.phi, traj.problem.omega);
        if (q == "l1-initial") v = l1_distance(s.phi, init);
        if (q == "sup-initial") v = sup_distance(s.phi, init);
        out.emplace_back(s.t, v);
    }
    return out;
}

std::string series_csv(const std::vector<std::pair<double, double>>& s) {
    std::ostringstream os;
    os << std::setprecision(17) << "t,value\n";
    for (const auto& [t, v] : s) os << t << ',' << v << '\n';
    return os.str();
}

// ---------------------------------------------------------------- commands

std::vector<std::string> known_checks() {
    return {"comparison", "apriori", "time-derivative", "gradient-laplacian", "energy-monotonicity",
            "stability",  "uniqueness", "convergence"};
}

int exit_status_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidArgument*>(&e) ||
        dynamic_cast<const MismatchedDiscretization*>(&e) || dynamic_cast<const MissingSnapshots*>(&e) ||
        dynamic_cast<const PreconditionFailed*>(&e) || dynamic_cast<const HorizonTooLong*>(&e) ||
        dynamic_cast<const Unresolvable*>(&e) || dynamic_cast<const json::exception*>(&e) ||
        dynamic_cast<const fs::filesystem_error*>(&e))
        return kExitConfig;
    return kExitNumeric;
}

namespace {

json cascade_report(const CascadeResult& c) {
    json gaps = json::array();
    for (const auto& g : c.level_gaps) gaps.push_back(g);
    return {{"deltas", c.deltas},
            {"probe_times", c.probe_times},
            {"gap", c.gap},
            {"level_gaps", gaps},
            {"max_violation", c.max_violation},
            {"violation_time", c.violation_time},
            {"tolerance", c.tolerance},
            {"monotone", c.max_violation <= c.tolerance},
            {"osc0", c.osc0},
            {"collapsed", c.collapsed},
            {"ladder_shifts", c.ladder.shifts},
            {"ladder_margins", c.ladder.margins},
            {"clamp_floor", c.ladder.clamp_floor}};
}

int guarded(std::ostream& log, const std::string& what, const std::function<int()>& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        const int code = exit_status_for(e);
        log << what << ": " << (code == kExitConfig ? "error" : "numeric failure") << ": " << e.what() << '\n';
        return code;
    }
}

std::vector<MarginReport> run_check(const std::string& check, const std::vector<Archive>& as, double eps) {
    const Archive& a = as.front();
    const FlowTrajectory& t = a.trajectory;
    auto need_pair = [&] {
        if (as.size() < 2) throw InvalidArgument("check '" + check + "' needs two archives");
    };
    if (check == "comparison") {
        need_pair();
        const double lambda = std::max(0.0, t.problem.F.monotonicity_defect);
        return {check_comparison(t, as[1].trajectory, lambda)};
    }
    if (check == "apriori") return check_apriori_bounds(t, t.problem.F, t.problem.path, t.problem.omega);
    if (check == "time-derivative") {
        double e = eps;
        if (!(e > 0.0)) e = std::max(10.0 * a.config.flow.t_min, 1e-3 * a.config.flow.T);
        return check_time_derivative(t, e);
    }
    if (check == "gradient-laplacian") return check_gradient_laplacian(t);
    if (check == "energy-monotonicity") return {check_energy_monotonicity(t, t.problem.path, t.problem.omega)};
    if (check == "stability") {
        need_pair();
        if (as[1].trajectory.grid != t.grid)
            throw MismatchedDiscretization("stability: archives have resolutions " + std::to_string(t.grid.resolution()) +
                                           " and " + std::to_string(as[1].trajectory.grid.resolution()));
        return {check_stability(t.initial().phi, as[1].trajectory.initial().phi, t.problem, a.config.flow)};
    }
    if (check == "uniqueness") {
        if (!a.config.cascade || !a.config.cascade_alt)
            throw InvalidArgument("uniqueness needs 'cascade' and 'cascade_alt' schedules in the archive config");
        CascadeOptions o;
        o.tolerance_factor = a.config.cascade_tolerance_factor;
        return {check_uniqueness(a.config.potential(), t.problem, t.grid, a.config.flow, *a.config.cascade,
                                 *a.config.cascade_alt, o)};
    }
    if (check == "convergence") {
        const RegularizationSchedule s = a.config.cascade.value_or(RegularizationSchedule::geometric(0.25, 0.5, 4));
        CascadeOptions o;
        o.tolerance_factor = a.config.cascade_tolerance_factor;
        const RoughPotential p = a.config.potential();
        const CascadeResult c = run_cascade(p, s, t.grid, t.problem, a.config.flow, o);
        return check_convergence_modes(c, p, t.problem);
    }
    throw InvalidArgument("unknown check '" + check + "'");
}

}  // namespace

int cmd_run(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    if (cfg.is_nef()) return cmd_nef(cfg, out, log);
    const int code = guarded(log, "run", [&] {
        const TorusGrid g = cfg.grid();
        const FlowProblem P = cfg.problem();
        const RoughPotential p = cfg.potential();
        json extra = json::object();
        FlowTrajectory traj;
        if (p.tag() == Regularity::Smooth && !cfg.cascade) {
            traj = run(p.sample(g), P, cfg.flow);
            extra["kind"] = "run";
        } else {
            CascadeOptions o;
            o.tolerance_factor = cfg.cascade_tolerance_factor;
            const auto sched = cfg.cascade.value_or(RegularizationSchedule::geometric(0.25, 0.5, 4));
            CascadeResult c = run_cascade(p, sched, g, P, cfg.flow, o);
            traj = std::move(c.levels.back());
            extra["kind"] = "cascade";
            extra["cascade"] = cascade_report(c);
            log << "cascade: " << c.levels.size() << " levels, max violation " << fmt(c.max_violation)
                << " (tolerance " << fmt(c.tolerance) << ")\n";
        }
        traj.label = cfg.name;
        write_archive(out, traj, cfg, extra);
        double worst = 0.0;
        for (const auto& d : traj.steps) worst = std::max(worst, d.residual);
        log << "run " << cfg.name << " [" << cfg.hash() << "]: " << traj.steps.size() << " steps to T=" << fmt(cfg.flow.T)
            << ", max Newton residual " << fmt(worst) << ", archive " << out.string() << '\n';
        if (uniqueness_refused(P.F)) log << "NO-UNIQUENESS-CERTIFICATE for driving term '" << P.F.name << "'\n";
        return static_cast<int>(kExitOk);
    });
    if (code != kExitOk || cfg.checks.empty()) return code;
    return cmd_verify({out}, cfg.checks, out / "reports", log);
}

int cmd_verify(const std::vector<fs::path>& archives, const std::vector<std::string>& checks, const fs::path& out,
               std::ostream& log, double eps) {
    return guarded(log, "verify", [&] {
        if (archives.empty()) throw InvalidArgument("verify needs at least one archive");
        if (checks.empty()) throw InvalidArgument("verify needs at least one --check");
        const auto known = known_checks();
        for (const auto& c : checks)
            if (std::find(known.begin(), known.end(), c) == known.end()) throw InvalidArgument("unknown check '" + c + "'");
        std::vector<Archive> as;
        for (const auto& p : archives) as.push_back(read_archive(p));
        std::vector<MarginReport> all;
        for (const auto& c : checks) {
            auto r = run_check(c, as, eps);
            all.insert(all.end(), r.begin(), r.end());
        }
        fs::create_directories(out);
        json hashes = json::array();
        for (const auto& a : as) hashes.push_back(a.config.hash());
        json reports = json::array();
        bool ok = true;
        for (const auto& r : all) {
            json j = to_json(r);
            j["config_hashes"] = hashes;
            reports.push_back(j);
            ok = ok && r.passed();
            log << (r.passed() ? "PASS " : "FAIL ") << r.check << " margin " << fmt(r.margin);
            for (const auto& [k, v] : r.constants) log << ' ' << k << '=' << fmt(v);
            log << '\n';
        }
        write_json(out / "reports.json", reports);
        std::ofstream(out / "reports.csv") << reports_to_csv(all);
        return static_cast<int>(ok ? kExitOk : kExitNumeric);
    });
}

int cmd_series(const fs::path& archive, const std::string& quantity, std::ostream& csv, std::ostream& log) {
    return guarded(log, "series", [&] {
        const Archive a = read_archive(archive);
        csv << "# config_hash " << a.config.hash() << '\n' << series_csv(series(a.trajectory, quantity));
        return static_cast<int>(kExitOk);
    });
}

int cmd_regularize(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    return guarded(log, "regularize", [&] {
        const TorusGrid g = cfg.grid();
        const auto sched = cfg.cascade.value_or(RegularizationSchedule::geometric(0.25, 0.5, 4));
        const MollifyResult m = mollify_decreasing(cfg.potential(), sched, g);
        fs::create_directories(out / "levels");
        json levels = json::array();
        write_field(out / "initial.bin", m.initial, {{"config_hash", cfg.hash()}});
        for (std::size_t j = 0; j < m.levels.size(); ++j) {
            const std::string name = "levels/" + index_name("level", j);
            write_field(out / name, m.levels[j], {{"delta", m.deltas[j]}, {"config_hash", cfg.hash()}});
            levels.push_back({{"path", name},
                              {"delta", m.deltas[j]},
                              {"moment", m.moments[j]},
                              {"shift", m.shifts[j]},
                              {"blend", m.blend[j]},
                              {"psh_margin", m.margins[j]}});
        }
        write_json(out / "manifest.json", {{"config_hash", cfg.hash()},
                                           {"config", cfg.to_json()},
                                           {"kind", "regularize"},
                                           {"initial", "initial.bin"},
                                           {"levels", levels},
                                           {"blend_ceiling", m.blend_ceiling},
                                           {"clamp_floor", m.clamp_floor}});
        log << "regularize " << cfg.name << ": " << m.levels.size() << " levels written to " << out.string() << '\n';
        return static_cast<int>(kExitOk);
    });
}

int cmd_nef(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    return guarded(log, "nef", [&] {
        if (!cfg.is_nef()) throw InvalidArgument("nef needs metric.kind = nef");
        const TorusGrid g = cfg.grid();
        const FlowProblem P = cfg.problem();
        const HermMat theta0 = herm(cfg.metric.at("theta"), cfg.n, "metric.theta");
        const NefResult r = run_nef(uniform_form(g, theta0), cfg.nef_eps, cfg.potential().sample(g), P.F, P.omega,
                                    cfg.flow, cfg.cascade_tolerance_factor);
        json runs = json::array();
        for (std::size_t k = 0; k < r.trajectories.size(); ++k) {
            const std::string sub = "eps_" + std::to_string(k);
            write_archive(out / sub, r.trajectories[k], cfg, {{"kind", "nef"}, {"nef_eps", r.eps[k]}});
            runs.push_back({{"eps", r.eps[k]}, {"archive", sub}});
        }
        fs::create_directories(out / "limit");
        json limits = json::array();
        for (std::size_t k = 0; k < r.limit.size(); ++k) {
            const std::string name = "limit/" + index_name("limit", k);
            write_field(out / name, r.limit[k], {{"t", r.limit_times[k]}, {"config_hash", cfg.hash()}});
            limits.push_back({{"t", r.limit_times[k]}, {"path", name}});
        }
        json m{{"config_hash", cfg.hash()},
               {"config", cfg.to_json()},
               {"kind", "nef"},
               {"runs", runs},
               {"limit", limits},
               {"max_violation", r.max_violation},
               {"violation_time", r.violation_time},
               {"tolerance", r.tolerance},
               {"monotone", r.max_violation <= r.tolerance},
               {"earliest_time", r.earliest_time},
               {"witness_available", r.witness_available},
               {"witness_bound", r.witness_bound},
               {"witness_margin", r.witness_margin}};
        write_json(out / "manifest.json", m);
        log << "nef " << cfg.name << ": " << r.trajectories.size() << " eps levels, max violation "
            << fmt(r.max_violation) << " (tolerance " << fmt(r.tolerance) << ")\n";
        return static_cast<int>(kExitOk);
    });
}

}  // namespace cmaf
