#include "cmaflow/psh_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <numbers>
#include <random>
#include <tuple>

#include "cmaflow/errors.hpp"
#include "cmaflow/spectral.hpp"

namespace cmaf {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kGlueInner = 0.25;
constexpr double kGlueOuter = 0.45;

// f(r) = f0(r) for r <= r1, f(r1) + int_{r1}^r s f0' for r1 < r <= r2, constant beyond,
// with s the cubic smoothstep falling from 1 to 0 across [r1, r2].
class RadialProfile {
public:
    RadialProfile(std::function<double(double)> f0, std::function<double(double)> df0)
        : f0_(std::move(f0)), df0_(std::move(df0)) {
        const int intervals = 20000;
        step_ = (kGlueOuter - kGlueInner) / intervals;
        table_.resize(intervals + 1);
        table_[0] = f0_(kGlueInner);
        auto g = [&](double r) { return cutoff(r) * df0_(r); };
        for (int i = 0; i < intervals; ++i) {
            const double a = kGlueInner + i * step_;
            const double b = a + step_;
            table_[i + 1] = table_[i] + step_ / 6.0 * (g(a) + 4.0 * g(0.5 * (a + b)) + g(b));
        }
    }

    static double cutoff(double r) {
        if (r <= kGlueInner) return 1.0;
        if (r >= kGlueOuter) return 0.0;
        const double u = (r - kGlueInner) / (kGlueOuter - kGlueInner);
        return 1.0 - u * u * (3.0 - 2.0 * u);
    }

    double operator()(double r) const {
        if (r <= kGlueInner) return r > 0.0 ? f0_(r) : -std::numeric_limits<double>::infinity();
        if (r >= kGlueOuter) return table_.back();
        const double u = (r - kGlueInner) / step_;
        const auto i = std::min(static_cast<std::size_t>(u), table_.size() - 2);
        const double w = u - static_cast<double>(i);
        return (1.0 - w) * table_[i] + w * table_[i + 1];
    }

private:
    std::function<double(double)> f0_, df0_;
    double step_;
    std::vector<double> table_;
};

std::shared_ptr<const RadialProfile> log_profile() {
    static auto p = std::make_shared<const RadialProfile>([](double r) { return std::log(r); },
                                                          [](double r) { return 1.0 / r; });
    return p;
}

std::shared_ptr<const RadialProfile> sqrt_log_profile() {
    static auto p = std::make_shared<const RadialProfile>(
        [](double r) { return -std::sqrt(-std::log(r)); },
        [](double r) { return 1.0 / (2.0 * r * std::sqrt(-std::log(r))); });
    return p;
}

double dist_to_integers(double x) {
    double d = x - std::floor(x);
    return std::min(d, 1.0 - d);
}

}  // namespace

std::string regularity_name(Regularity r) {
    switch (r) {
        case Regularity::Smooth: return "smooth";
        case Regularity::Lipschitz: return "lipschitz";
        case Regularity::Bounded: return "bounded";
        case Regularity::UnboundedZeroLelong: return "unbounded-zero-lelong";
        case Regularity::UnboundedPositiveLelong: return "unbounded-lelong";
    }
    return "unknown";
}

Regularity regularity_from_name(const std::string& s) {
    for (Regularity r : {Regularity::Smooth, Regularity::Lipschitz, Regularity::Bounded,
                         Regularity::UnboundedZeroLelong, Regularity::UnboundedPositiveLelong})
        if (regularity_name(r) == s) return r;
    throw ConfigError("unknown regularity tag '" + s + "'");
}

RoughPotential::RoughPotential(std::string kind, int n, Regularity tag, Evaluator f)
    : kind_(std::move(kind)), n_(n), tag_(tag), eval_(std::move(f)) {
    if (n != 1 && n != 2) throw InvalidArgument("potential dimension must be 1 or 2");
}

RoughPotential::RoughPotential(std::string kind, ScalarField sampled, Regularity tag)
    : kind_(std::move(kind)), n_(sampled.grid.n()), tag_(tag), sampled_(std::move(sampled)) {}

RoughPotential RoughPotential::constant(int n, double c) {
    return RoughPotential("constant", n, Regularity::Smooth, [c](const Coord&) { return c; });
}

RoughPotential RoughPotential::fourier_sum(int n, std::vector<FourierTerm> terms) {
    return RoughPotential("fourier-sum", n, Regularity::Smooth, [terms = std::move(terms)](const Coord& x) {
        double v = 0.0;
        for (const auto& t : terms) {
            double arg = t.phase;
            for (int a = 0; a < 4; ++a) arg += 2.0 * kPi * t.mode[a] * x[a];
            v += t.amplitude * std::cos(arg);
        }
        return v;
    });
}

RoughPotential RoughPotential::max_kink(int n, double a, double b) {
    return RoughPotential("max-kink", n, Regularity::Lipschitz,
                          [a, b](const Coord& x) { return std::max(a * std::cos(2.0 * kPi * x[0]), b); });
}

RoughPotential RoughPotential::parabola_kink(int n, double c) {
    return RoughPotential("parabola-kink", n, Regularity::Lipschitz, [c](const Coord& x) {
        const double d = dist_to_integers(x[0]);
        return -2.0 * c * d * d;
    });
}

RoughPotential RoughPotential::log_pole(int n, double gamma, const Coord& center) {
    auto prof = log_profile();
    RoughPotential p("log-pole", n, Regularity::UnboundedPositiveLelong, [=](const Coord& x) {
        return gamma * (*prof)(torus_distance(x, center, n));
    });
    p.singular_ = center;
    return p;
}

RoughPotential RoughPotential::sqrt_log_pole(int n, double gamma, const Coord& center) {
    auto prof = sqrt_log_profile();
    RoughPotential p("sqrt-log-pole", n, Regularity::UnboundedZeroLelong, [=](const Coord& x) {
        return gamma * (*prof)(torus_distance(x, center, n));
    });
    p.singular_ = center;
    return p;
}

RoughPotential RoughPotential::truncated_log_pole(int n, double gamma, const Coord& center, double r_cut) {
    if (!(r_cut > 0.0 && r_cut < kGlueInner)) throw InvalidArgument("truncated log pole: r_cut must lie in (0, 1/4)");
    auto prof = log_profile();
    const double floor_value = std::log(r_cut);
    return RoughPotential("truncated-log-pole", n, Regularity::Bounded, [=](const Coord& x) {
        return gamma * std::max((*prof)(torus_distance(x, center, n)), floor_value);
    });
}

double RoughPotential::raw_value(const Coord& x) const {
    if (eval_) return eval_(x);
    return interpolate_linear(*sampled_, x);
}

double RoughPotential::value(const Coord& x) const {
    const double v = raw_value(x);
    if (std::isnan(v)) throw NumericFailure("potential '" + kind_ + "' evaluated to NaN");
    return std::max(v, floor_);
}

double RoughPotential::sampling_floor(const TorusGrid& g) const {
    if (!singular_ || !eval_) return floor_;
    // A single node far below its neighbours is not discretely psh, so the clamp level is
    // raised to the value half a cell away from the pole (max(phi, c) stays omega-psh).
    Coord probe = *singular_;
    probe[0] += 0.5 * g.spacing();
    return std::max(floor_, eval_(probe));
}

ScalarField RoughPotential::sample(const TorusGrid& g) const {
    if (g.n() != n_) throw MismatchedDiscretization("potential dimension does not match grid");
    if (sampled_ && sampled_->grid.resolution() == g.resolution()) {
        ScalarField out = *sampled_;
        out.grid = g;
        for (double& v : out.values) v = std::max(v, floor_);
        return out;
    }
    const double fl = sampling_floor(g);
    return ScalarField::sample(g, [this, fl](const Coord& x) { return std::max(value(x), fl); });
}

double psh_margin(const ScalarField& phi) {
    return psh_margin(HermitianField::constant(phi.grid, HermMat::identity(phi.grid.n())), phi);
}

double psh_margin(const HermitianField& theta, const ScalarField& phi) {
    HermitianField form = theta + complex_hessian(phi);
    return positivity(form).min_eigenvalue;
}

std::vector<double> default_lelong_radii(double spacing, int count) {
    std::vector<double> r(count);
    for (int k = 0; k < count; ++k) r[k] = 80.0 * spacing * std::pow(0.1, static_cast<double>(k) / (count - 1));
    return r;
}

namespace {

std::vector<Coord> sphere_directions(int n) {
    std::vector<Coord> dirs;
    if (n == 1) {
        const int K = 64;
        for (int k = 0; k < K; ++k) {
            const double a = 2.0 * kPi * k / K;
            dirs.push_back({std::cos(a), std::sin(a), 0.0, 0.0});
        }
    } else {
        const int E = 9, K = 16;
        for (int e = 0; e < E; ++e) {
            const double eta = 0.5 * kPi * e / (E - 1);
            for (int i = 0; i < K; ++i) {
                const double a = 2.0 * kPi * i / K;
                for (int j = 0; j < K; ++j) {
                    const double b = 2.0 * kPi * j / K;
                    dirs.push_back({std::cos(eta) * std::cos(a), std::cos(eta) * std::sin(a),
                                    std::sin(eta) * std::cos(b), std::sin(eta) * std::sin(b)});
                    if (e == 0 || e == E - 1) break;  // degenerate circles: one sample suffices
                }
            }
        }
    }
    return dirs;
}

double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

}  // namespace

LelongEstimate lelong_estimate(const RoughPotential& phi, const Coord& x, const std::vector<double>& radii,
                               double spacing) {
    if (radii.size() < 2) throw InvalidArgument("lelong_estimate: need at least two radii");
    for (std::size_t k = 1; k < radii.size(); ++k)
        if (!(radii[k] < radii[k - 1])) throw InvalidArgument("lelong_estimate: radii must be decreasing");
    if (radii.back() < 2.0 * spacing) throw InvalidArgument("lelong_estimate: smallest radius below 2 * spacing");

    const auto dirs = sphere_directions(phi.n());
    LelongEstimate est{0.0, 0.0, radii, {}, phi.floor()};
    std::vector<double> logr;
    bool any_unclamped = false;
    for (double r : radii) {
        double best = -std::numeric_limits<double>::infinity();
        for (const Coord& d : dirs) {
            Coord p{x[0] + r * d[0], x[1] + r * d[1], x[2] + r * d[2], x[3] + r * d[3]};
            const double raw = phi.raw_value(p);
            if (raw > phi.floor()) any_unclamped = true;
            best = std::max(best, phi.value(p));
        }
        est.circle_max.push_back(best);
        logr.push_back(std::log(r));
    }
    if (!any_unclamped) throw Unresolvable("lelong_estimate: every sample is clamped at the singular floor");
    est.raw_slope = ols_slope(logr, est.circle_max);
    est.value = std::max(0.0, est.raw_slope);
    return est;
}

RegularizationSchedule RegularizationSchedule::geometric(double first, double ratio, int count) {
    RegularizationSchedule s;
    for (int j = 0; j < count; ++j) s.deltas.push_back(first * std::pow(ratio, j));
    s.validate();
    return s;
}

void RegularizationSchedule::validate() const {
    if (deltas.empty()) throw InvalidArgument("regularization schedule is empty");
    for (std::size_t j = 0; j < deltas.size(); ++j) {
        if (!(deltas[j] > 0.0)) throw InvalidArgument("regularization radii must be positive");
        if (j > 0 && !(deltas[j] < deltas[j - 1]))
            throw InvalidArgument("regularization radii must be strictly decreasing");
    }
}

double mollifier_moment(int n, double delta) { return n * delta * delta; }

ScalarField gaussian_mollify(const ScalarField& f, double delta) {
    const TorusGrid& g = f.grid;
    auto fft = Spectral::get(g.n(), g.resolution());
    cvec hat(fft->complex_size());
    fft->forward(f.values.data(), hat.data());
    const double c = kPi * kPi * delta * delta;
    fft->for_each_mode([&](std::size_t k, const std::array<int, 4>& m) {
        const double m2 = static_cast<double>(m[0] * m[0] + m[1] * m[1] + m[2] * m[2] + m[3] * m[3]);
        hat[k] *= std::exp(-c * m2);
    });
    ScalarField out(g);
    fft->inverse(hat.data(), out.values.data());
    return out;
}

MollifyResult mollify_decreasing(const RoughPotential& phi0, const RegularizationSchedule& schedule,
                                 const TorusGrid& grid, const MollifyOptions& opts) {
    schedule.validate();
    if (schedule.deltas.back() < 2.0 * grid.spacing())
        throw Unresolvable("mollify_decreasing: smallest radius " + std::to_string(schedule.deltas.back()) +
                           " is below twice the grid spacing");
    const int n = grid.n();
    MollifyResult res;
    res.clamp_floor = phi0.sampling_floor(grid);
    res.initial = phi0.sample(grid);
    const std::size_t J = schedule.count();
    res.deltas = schedule.deltas;
    res.moments.resize(J);
    res.shifts.assign(J, 0.0);
    res.blend.assign(J, 0.0);
    res.margins.resize(J);
    res.levels.reserve(J);
    for (std::size_t j = 0; j < J; ++j) {
        res.moments[j] = mollifier_moment(n, schedule.deltas[j]);
        ScalarField psi = gaussian_mollify(res.initial, schedule.deltas[j]);
        psi += res.moments[j];
        res.levels.push_back(std::move(psi));
    }

    // Repair from the finest level upwards: level j must dominate level j+1, and the
    // finest level must dominate the sampled initial datum.
    const ScalarField* lower = &res.initial;
    for (std::size_t jj = J; jj-- > 0;) {
        ScalarField& psi = res.levels[jj];
        double shift = 0.0;
        for (std::size_t i = 0; i < psi.size(); ++i) shift = std::max(shift, (*lower)[i] - psi[i]);
        if (shift > opts.repair_limit_factor * res.moments[jj])
            throw RepairTooLarge("mollify_decreasing: monotonicity repair " + std::to_string(shift) +
                                 " exceeds " + std::to_string(opts.repair_limit_factor) + " m(delta) at level " +
                                 std::to_string(jj));
        if (shift > 0.0) psi += shift;
        res.shifts[jj] = shift;
        lower = &psi;
    }

    double min_margin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < J; ++j) {
        res.margins[j] = psh_margin(res.levels[j]);
        min_margin = std::min(min_margin, res.margins[j]);
    }
    const double s_last = opts.strictness * schedule.deltas.back() * schedule.deltas.back();
    if (opts.strictness > 0.0 && min_margin < s_last) {
        double ceiling = -std::numeric_limits<double>::infinity();
        for (const auto& lvl : res.levels) ceiling = std::max(ceiling, norms(lvl).sup);
        res.blend_ceiling = ceiling;
        for (std::size_t j = 0; j < J; ++j) {
            const double s = std::min(0.5, opts.strictness * schedule.deltas[j] * schedule.deltas[j]);
            res.blend[j] = s;
            for (double& v : res.levels[j].values) v += s * (ceiling - v);
            res.margins[j] = psh_margin(res.levels[j]);
        }
    }
    for (std::size_t j = 0; j < J; ++j) {
        if (res.margins[j] < -opts.tol_psh)
            throw PreconditionFailed("mollify_decreasing: level " + std::to_string(j) + " has psh margin " +
                                     std::to_string(res.margins[j]) + " (input not omega-psh?)");
    }
    return res;
}

namespace {

// Deterministic capacity dictionary. Entry 0 is the constant 1/2; later entries are
// 1/2 + s (g - mid g) with g a periodic Gaussian bump (three widths, both signs) or a
// seeded random low-mode trigonometric field, s chosen so that 0 <= psi <= 1 and
// I + H(psi) >= 0.1 I. Each entry stores det(I + H(psi)).
class CapacityDictionary {
public:
    CapacityDictionary(const TorusGrid& g, std::uint64_t seed) : grid_(g), seed_(seed) {}

    const std::vector<double>& density(std::size_t k) {
        while (densities_.size() <= k) densities_.push_back(build(densities_.size()));
        return densities_[k];
    }

    std::size_t memory() const { return densities_.size() * grid_.size(); }

private:
    std::vector<double> build(std::size_t k) const {
        const std::size_t P = grid_.size();
        if (k == 0) return std::vector<double>(P, 1.0);
        ScalarField g = (k - 1) % 4 == 3 ? random_field(k) : bump(k);
        const Norms nr = norms(g);
        const HermitianField H = complex_hessian(g);
        const double neg = std::max(0.0, -positivity(H).min_eigenvalue);
        double s = nr.osc > 0.0 ? 1.0 / nr.osc : 0.0;
        if (neg > 0.0) s = std::min(s, 0.9 / neg);
        std::vector<double> dens(P);
        const HermMat I = HermMat::identity(grid_.n());
        for (std::size_t i = 0; i < P; ++i) {
            const HermMat form = I + s * H.at(i);
            dens[i] = form.min_eigenvalue() >= 0.0 ? form.det() : 0.0;
        }
        return dens;
    }

    static double halton(std::size_t index, int base) {
        double f = 1.0, r = 0.0;
        while (index > 0) {
            f /= base;
            r += f * static_cast<double>(index % base);
            index /= base;
        }
        return r;
    }

    ScalarField bump(std::size_t k) const {
        static constexpr double widths[3] = {0.05, 0.1, 0.2};
        const double w = widths[(k - 1) % 4];
        const double sign = ((k - 1) / 4) % 2 == 0 ? 1.0 : -1.0;
        const int bases[4] = {2, 3, 5, 7};
        const int N = grid_.resolution();
        std::array<std::vector<double>, 4> prof;
        for (int a = 0; a < grid_.axes(); ++a) {
            const double c = halton(k, bases[a]);
            prof[a].resize(N);
            for (int i = 0; i < N; ++i) {
                double v = 0.0;
                for (int img = -2; img <= 2; ++img) {
                    const double d = static_cast<double>(i) / N - c - img;
                    v += std::exp(-d * d / (2.0 * w * w));
                }
                prof[a][i] = v;
            }
        }
        ScalarField out(grid_);
        for (std::size_t i = 0; i < grid_.size(); ++i) {
            const auto mi = grid_.multi_index(i);
            double v = sign;
            for (int a = 0; a < grid_.axes(); ++a) v *= prof[a][mi[a]];
            out[i] = v;
        }
        return out;
    }

    ScalarField random_field(std::size_t k) const {
        std::mt19937_64 rng(seed_ * 0x9E3779B97F4A7C15ULL + k);
        std::uniform_int_distribution<int> mode(-2, 2);
        std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
        std::normal_distribution<double> amp(0.0, 1.0);
        std::vector<FourierTerm> terms;
        for (int t = 0; t < 6; ++t) {
            FourierTerm term;
            for (int a = 0; a < grid_.axes(); ++a) term.mode[a] = mode(rng);
            term.amplitude = amp(rng);
            term.phase = phase(rng);
            terms.push_back(term);
        }
        return RoughPotential::fourier_sum(grid_.n(), terms).sample(grid_);
    }

    TorusGrid grid_;
    std::uint64_t seed_;
    std::vector<std::vector<double>> densities_;
};

constexpr std::size_t kCapacityCacheLimit = std::size_t{1} << 24;

}  // namespace

double capacity_lower_bound(const ScalarField& K, int dictionary_size, std::uint64_t seed) {
    if (dictionary_size < 1) throw InvalidArgument("capacity_lower_bound: dictionary_size must be >= 1");
    for (double v : K.values)
        if (v != 0.0 && v != 1.0) throw InvalidArgument("capacity_lower_bound: K must be an indicator");
    const TorusGrid g = K.grid.with_backend(Backend::Spectral);

    static std::mutex mutex;
    static std::map<std::tuple<int, int, std::uint64_t>, std::shared_ptr<CapacityDictionary>> cache;
    std::shared_ptr<CapacityDictionary> dict;
    {
        std::lock_guard<std::mutex> lock(mutex);
        auto key = std::make_tuple(g.n(), g.resolution(), seed);
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, std::make_shared<CapacityDictionary>(g, seed)).first;
        dict = it->second;
    }

    double best = 0.0;
    std::vector<double> integrand(K.size());
    std::lock_guard<std::mutex> lock(mutex);
    for (int k = 0; k < dictionary_size; ++k) {
        std::vector<double> local;
        const std::vector<double>* dens;
        if (dict->memory() + g.size() <= kCapacityCacheLimit) {
            dens = &dict->density(static_cast<std::size_t>(k));
        } else {
            CapacityDictionary scratch(g, seed);
            local = scratch.density(static_cast<std::size_t>(k));
            dens = &local;
        }
        for (std::size_t i = 0; i < K.size(); ++i) integrand[i] = K[i] * (*dens)[i];
        best = std::max(best, mean(integrand));
    }
    return best;
}

double energy(const HermitianField& theta, const ScalarField& phi, const VolumeForm& omega, double tol_psh) {
    (void)omega;  // total volume is 1 in the flat frame
    const int n = phi.grid.n();
    HermitianField form = theta + complex_hessian(phi);
    const auto pos = positivity(form);
    if (pos.min_eigenvalue < -tol_psh)
        throw NotKahler("energy: theta + dd^c phi below tolerance", pos.point, pos.min_eigenvalue);
    std::vector<double> integrand(phi.size(), 0.0);
    for (std::size_t i = 0; i < phi.size(); ++i) {
        const HermMat A = form.at(i);
        const HermMat B = theta.at(i);
        double s = 0.0;
        for (int j = 0; j <= n; ++j) s += mixed_density(A, B, j);
        integrand[i] = phi[i] * s;
    }
    return mean(integrand) / (n + 1);
}

}  // namespace cmaf
