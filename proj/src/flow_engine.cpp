#include "cmaflow/flow_engine.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cmaflow/errors.hpp"
#include "cmaflow/spectral.hpp"

namespace cmaf {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::vector<double> linspace(double a, double b, int count) {
    std::vector<double> out(count);
    for (int i = 0; i < count; ++i) out[i] = count == 1 ? a : a + (b - a) * i / (count - 1);
    return out;
}

/// At most `limit` grid coordinates taken with a fixed stride.
std::vector<Coord> sample_points(const TorusGrid& g, std::size_t limit = 64) {
    std::vector<Coord> pts;
    const std::size_t stride = std::max<std::size_t>(1, g.size() / limit);
    for (std::size_t i = 0; i < g.size(); i += stride) pts.push_back(g.coord(i));
    return pts;
}

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(6);
    os << x;
    return os.str();
}

/// Per-point z arguments of F; all zero when F ignores z.
struct PointCoords {
    std::vector<Coord> coords;
    bool used = false;

    PointCoords(const TorusGrid& g, const DrivingTerm& F) : used(!F.z_independent) {
        if (used) {
            coords.resize(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) coords[i] = g.coord(i);
        }
    }
    const Coord& operator[](std::size_t i) const {
        static const Coord origin{0, 0, 0, 0};
        return used ? coords[i] : origin;
    }
};

double trace_product_at(const HermitianField& a, std::size_t i, const HermitianField& b, int n) {
    if (n == 1) return a.d1[i] * b.d1[i];
    return a.d1[i] * b.d1[i] + a.d2[i] * b.d2[i] + 2.0 * (a.re12[i] * b.re12[i] + a.im12[i] * b.im12[i]);
}

/// Symbol arrays of H over the half spectrum.
struct HessianSymbols {
    std::vector<double> s11, s22, sre, sim;

    explicit HessianSymbols(const TorusGrid& g, const Spectral& fft) {
        const std::size_t m = fft.complex_size();
        s11.resize(m);
        if (g.n() == 2) {
            s22.resize(m);
            sre.resize(m);
            sim.resize(m);
        }
        fft.for_each_mode([&](std::size_t k, const std::array<int, 4>& mode) {
            const HermMat S = hessian_symbol(g, mode);
            s11[k] = S.a11;
            if (g.n() == 2) {
                s22[k] = S.a22;
                sre[k] = S.a12.real();
                sim[k] = S.a12.imag();
            }
        });
    }
};

/// Jacobian of the row-scaled residual, right-preconditioned by a Fourier multiplier.
class NewtonOperator {
public:
    NewtonOperator(const TorusGrid& g, std::shared_ptr<const Spectral> fft, const HessianSymbols& sym)
        : g_(g), fft_(std::move(fft)), sym_(sym), d_(g.size()), dc_(g.size()), dg_(g), precond_(fft_->complex_size()),
          hat_(fft_->complex_size()), tmp_(fft_->complex_size()) {}

    /// Row weights D = n / tr(G), G = (theta + H u)^{-1}, c = 1/dt + dF/ds.
    void assemble(const HermitianField& form, const std::vector<double>& c, double inv_dt) {
        const int n = g_.n();
        double cbar = 0.0, dsum = 0.0;
        HermMat gbar = HermMat::zero(n);
        for (std::size_t i = 0; i < g_.size(); ++i) {
            const HermMat G = form.at(i).inverse();
            const double D = n / G.trace();
            d_[i] = D;
            dc_[i] = D * c[i];
            dg_.set(i, D * G);
            cbar += dc_[i];
            dsum += D;
            gbar += D * G;
        }
        const double inv = 1.0 / static_cast<double>(g_.size());
        cbar *= inv;
        gbar = gbar * inv;
        if (!(cbar > 0.0)) cbar = dsum * inv * inv_dt;
        fft_->for_each_mode([&](std::size_t k, const std::array<int, 4>&) {
            HermMat S = HermMat::zero(n);
            S.a11 = sym_.s11[k];
            if (n == 2) {
                S.a22 = sym_.s22[k];
                S.a12 = {sym_.sre[k], sym_.sim[k]};
            }
            precond_[k] = 1.0 / (cbar - gbar.trace_product(S));
        });
    }

    /// w = P^{-1} y and Hw = H(w).
    void precondition(const std::vector<double>& y, std::vector<double>& w, HermitianField& Hw) {
        fft_->forward(y.data(), hat_.data());
        for (std::size_t k = 0; k < hat_.size(); ++k) hat_[k] *= precond_[k];
        w.resize(g_.size());
        fft_->inverse(hat_.data(), w.data());
        apply(sym_.s11, Hw.d1);
        if (g_.n() == 2) {
            apply(sym_.s22, Hw.d2);
            apply(sym_.sre, Hw.re12);
            apply(sym_.sim, Hw.im12);
        }
    }

    /// out = D J P^{-1} y.
    void operator()(const std::vector<double>& y, std::vector<double>& out) {
        if (Hw_.size() != g_.size()) Hw_ = HermitianField(g_);
        precondition(y, w_, Hw_);
        out.resize(g_.size());
        const int n = g_.n();
        for (std::size_t i = 0; i < g_.size(); ++i) out[i] = dc_[i] * w_[i] - trace_product_at(dg_, i, Hw_, n);
    }

    double weight(std::size_t i) const { return d_[i]; }

private:
    void apply(const std::vector<double>& symbol, std::vector<double>& out) {
        for (std::size_t k = 0; k < hat_.size(); ++k) tmp_[k] = hat_[k] * symbol[k];
        out.resize(g_.size());
        fft_->inverse(tmp_.data(), out.data());
    }

    TorusGrid g_;
    std::shared_ptr<const Spectral> fft_;
    const HessianSymbols& sym_;
    std::vector<double> d_, dc_;
    HermitianField dg_;
    std::vector<double> precond_;
    cvec hat_, tmp_;
    std::vector<double> w_;
    HermitianField Hw_;
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Restarted GMRES for A y = b from y = 0. Returns the number of operator applications.
template <class Op>
int gmres(Op& A, const std::vector<double>& b, std::vector<double>& y, int restart, double rtol, int max_iters) {
    const std::size_t P = b.size();
    y.assign(P, 0.0);
    const double bnorm = std::sqrt(dot(b, b));
    if (bnorm == 0.0) return 0;
    const double target = rtol * bnorm;
    int iters = 0;
    std::vector<double> r = b, w;
    std::vector<std::vector<double>> V;
    std::vector<std::vector<double>> Hm;
    while (iters < max_iters) {
        if (iters > 0) {
            A(y, w);
            for (std::size_t i = 0; i < P; ++i) r[i] = b[i] - w[i];
        }
        const double beta = std::sqrt(dot(r, r));
        if (beta <= target) break;
        const int m = restart;
        V.assign(1, r);
        for (double& v : V[0]) v /= beta;
        Hm.assign(m + 1, std::vector<double>(m, 0.0));
        std::vector<double> cs(m), sn(m), gvec(m + 1, 0.0);
        gvec[0] = beta;
        int j = 0;
        for (; j < m && iters < max_iters; ++j) {
            A(V[j], w);
            ++iters;
            for (int i = 0; i <= j; ++i) {
                Hm[i][j] = dot(w, V[i]);
                for (std::size_t p = 0; p < P; ++p) w[p] -= Hm[i][j] * V[i][p];
            }
            Hm[j + 1][j] = std::sqrt(dot(w, w));
            for (int i = 0; i < j; ++i) {
                const double t = cs[i] * Hm[i][j] + sn[i] * Hm[i + 1][j];
                Hm[i + 1][j] = -sn[i] * Hm[i][j] + cs[i] * Hm[i + 1][j];
                Hm[i][j] = t;
            }
            const double rho = std::hypot(Hm[j][j], Hm[j + 1][j]);
            cs[j] = rho == 0.0 ? 1.0 : Hm[j][j] / rho;
            sn[j] = rho == 0.0 ? 0.0 : Hm[j + 1][j] / rho;
            const double hnext = Hm[j + 1][j];
            Hm[j][j] = rho;
            Hm[j + 1][j] = 0.0;
            gvec[j + 1] = -sn[j] * gvec[j];
            gvec[j] = cs[j] * gvec[j];
            const bool done = std::abs(gvec[j + 1]) <= target || hnext == 0.0;
            if (!done) {
                V.push_back(w);
                for (double& v : V.back()) v /= hnext;
            }
            if (done) {
                ++j;
                break;
            }
        }
        std::vector<double> coef(j, 0.0);
        for (int i = j - 1; i >= 0; --i) {
            double s = gvec[i];
            for (int k = i + 1; k < j; ++k) s -= Hm[i][k] * coef[k];
            coef[i] = Hm[i][i] == 0.0 ? 0.0 : s / Hm[i][i];
        }
        for (int i = 0; i < j; ++i)
            for (std::size_t p = 0; p < P; ++p) y[p] += coef[i] * V[i][p];
        if (std::abs(gvec[j]) <= target) break;
    }
    return iters;
}

struct StepProblem {
    const ScalarField& phi;
    double t;
    double inv_dt;
    HermitianField theta;
    const VolumeForm& omega;
    const DrivingTerm& F;
    PointCoords z;
    double h_scale = 0.0;  ///< n N^2 sup|phi|: rounding scale of H u
};

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kFractionToBoundary = 1e-2;
constexpr double kTightRtol = 1e-10;

struct ResidualEval {
    bool positive = false;
    double sup = 0.0;
    double margin = 0.0;
    double excess = 0.0;  ///< max of |R| minus its rounding floor
};

/// R(u + lambda v) and the positivity margin; stops early when the cone is left.
/// keep > 0 also rejects points where det or the first diagonal entry drop below keep times
/// their value at u (fraction to the boundary).
ResidualEval residual(const StepProblem& sp, const ScalarField& u, const HermitianField& Hu, const ScalarField* v,
                      const HermitianField* Hv, double lambda, std::vector<double>* R, double keep = 0.0) {
    ResidualEval out;
    out.margin = kUnbounded;
    const std::size_t P = u.size();
    const bool two = u.grid.n() == 2;
    const HermitianField& th = sp.theta;
    const double l = Hv ? lambda : 0.0;
    const HermitianField& hv = Hv ? *Hv : Hu;
    const std::vector<double>& logw = sp.omega.log_density().values;
    if (R) R->resize(P);
    double sup = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
        const double a = th.d1[i] + Hu.d1[i] + l * hv.d1[i];
        double det, e;
        if (two) {
            const double b = th.d2[i] + Hu.d2[i] + l * hv.d2[i];
            const double re = th.re12[i] + Hu.re12[i] + l * hv.re12[i];
            const double im = th.im12[i] + Hu.im12[i] + l * hv.im12[i];
            const double off = re * re + im * im;
            det = a * b - off;
            const double half = 0.5 * (a - b);
            e = 0.5 * (a + b) - std::sqrt(half * half + off);
            if (!(a > 0.0 && det > 0.0)) e = std::min(e, 0.0);
        } else {
            det = a;
            e = a;
        }
        if (!(e > 0.0)) {
            out.margin = e;
            return out;
        }
        if (keep > 0.0) {
            const double a0 = th.d1[i] + Hu.d1[i];
            double det0 = a0;
            if (two) {
                const double re0 = th.re12[i] + Hu.re12[i], im0 = th.im12[i] + Hu.im12[i];
                det0 = a0 * (th.d2[i] + Hu.d2[i]) - re0 * re0 - im0 * im0;
            }
            if (a < keep * a0 || det < keep * det0) {
                out.margin = 0.0;
                return out;
            }
        }
        out.margin = std::min(out.margin, e);
        const double ui = v ? u[i] + lambda * (*v)[i] : u[i];
        const double r = (ui - sp.phi[i]) * sp.inv_dt - std::log(det) + logw[i] + sp.F.value(sp.t, sp.z[i], ui);
        if (R) (*R)[i] = r;
        const double ar = std::abs(r);
        // rounding floor: the time quotient and log det of a Hessian with entries ~ N^2 sup|u|
        const double floor = 16.0 * kEps * ((std::abs(ui) + std::abs(sp.phi[i])) * sp.inv_dt + sp.h_scale / det);
        out.excess = std::max(out.excess, ar - floor);
        if (!(ar <= sup)) sup = std::isnan(ar) ? kUnbounded : ar;
    }
    out.positive = true;
    out.sup = sup;
    return out;
}

void require_same(const TorusGrid& a, const TorusGrid& b, const std::string& what) {
    if (a != b) throw MismatchedDiscretization(what + ": grids differ");
}

bool close_time(double a, double b, double rtol = 1e-9) {
    return std::abs(a - b) <= rtol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

// ---------------------------------------------------------------- driving terms

DrivingTerm DrivingTerm::zero() {
    DrivingTerm F;
    F.name = "zero";
    F.value = [](double, const Coord&, double) { return 0.0; };
    F.ds = F.value;
    F.dt_partial = F.value;
    return F;
}

DrivingTerm DrivingTerm::constant(double A) {
    DrivingTerm F = zero();
    F.name = "constant";
    F.value = [A](double, const Coord&, double) { return A; };
    return F;
}

DrivingTerm DrivingTerm::linear(double kappa, double offset) {
    DrivingTerm F;
    F.name = "linear";
    F.value = [kappa, offset](double, const Coord&, double s) { return kappa * s + offset; };
    F.ds = [kappa](double, const Coord&, double) { return kappa; };
    F.dt_partial = [](double, const Coord&, double) { return 0.0; };
    F.monotonicity_defect = std::max(0.0, -kappa);
    return F;
}

DrivingTerm DrivingTerm::affine(double kappa, double b, double beta) {
    DrivingTerm F;
    F.name = "affine";
    F.value = [kappa, b, beta](double t, const Coord& z, double s) {
        return kappa * s + b * std::cos(kTwoPi * z[0]) + beta * t;
    };
    F.ds = [kappa](double, const Coord&, double) { return kappa; };
    F.dt_partial = [beta](double, const Coord&, double) { return beta; };
    F.monotonicity_defect = std::max(0.0, -kappa);
    F.time_bound = std::abs(beta);
    F.z_independent = b == 0.0;
    return F;
}

DrivingTerm DrivingTerm::tanh_term(double a, double b, double beta) {
    DrivingTerm F;
    F.name = "tanh";
    F.value = [a, b, beta](double t, const Coord& z, double s) {
        return a * std::tanh(s) + b * std::sin(kTwoPi * z[0]) + beta * t;
    };
    F.ds = [a](double, const Coord&, double s) {
        const double c = std::cosh(s);
        return a / (c * c);
    };
    F.dt_partial = [beta](double, const Coord&, double) { return beta; };
    F.monotonicity_defect = std::max(0.0, -a);
    F.time_bound = std::abs(beta);
    F.z_independent = b == 0.0;
    return F;
}

DrivingTerm DrivingTerm::counterexample() {
    DrivingTerm F;
    F.name = "counterexample";
    F.value = [](double, const Coord&, double s) { return -2.0 * std::copysign(std::sqrt(std::abs(s)), s); };
    F.ds = [](double, const Coord&, double s) {
        const double a = std::abs(s);
        return a > 0.0 ? -1.0 / std::sqrt(a) : -kUnbounded;
    };
    F.dt_partial = [](double, const Coord&, double) { return 0.0; };
    F.monotonicity_defect = kUnbounded;
    F.time_bound = 0.0;
    F.smooth = false;
    return F;
}

void DrivingTerm::verify(const TorusGrid& g, double T, double s_lo, double s_hi, int t_samples, int s_samples) const {
    if (!value || !ds || !dt_partial) throw ConfigError("driving term '" + name + "' is incomplete");
    if (!(monotonicity_defect >= 0.0)) throw ConfigError("driving term '" + name + "': C must be >= 0");
    const auto pts = z_independent ? std::vector<Coord>{Coord{0, 0, 0, 0}} : sample_points(g);
    for (double t : linspace(0.0, T, t_samples))
        for (const Coord& z : pts)
            for (double s : linspace(s_lo, s_hi, s_samples)) {
                const double d = ds(t, z, s);
                if (std::isfinite(monotonicity_defect) && d < -monotonicity_defect - 1e-12 * (1.0 + std::abs(d)))
                    throw ConfigError("driving term '" + name + "': dF/ds = " + fmt(d) + " < -C at t=" + fmt(t) +
                                      ", s=" + fmt(s));
                const double dt = dt_partial(t, z, s);
                if (std::isfinite(time_bound) && std::abs(dt) > time_bound * (1.0 + 1e-12) + 1e-300)
                    throw ConfigError("driving term '" + name + "': |dF/dt| = " + fmt(std::abs(dt)) +
                                      " exceeds C' at t=" + fmt(t));
                if (!std::isfinite(value(t, z, s)))
                    throw ConfigError("driving term '" + name + "': non-finite value at s=" + fmt(s));
            }
}

// ---------------------------------------------------------------- schedule

void FlowConfig::validate() const {
    if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("flow config: T must be positive");
    if (!(t_min > 0.0) || t_min > T) throw ConfigError("flow config: need 0 < t_min <= T");
    if (!(ratio > 1.0 && ratio <= 2.0)) throw ConfigError("flow config: ratio must lie in (1, 2]");
    if (!(dt_max > 0.0)) throw ConfigError("flow config: dt_max must be positive");
    if (!(newton_tol > 0.0) || max_newton < 1) throw ConfigError("flow config: bad Newton settings");
    if (!(damping > 0.0 && damping < 1.0) || !(min_damping > 0.0)) throw ConfigError("flow config: bad damping");
    if (gmres_restart < 1 || gmres_max_iters < 1 || !(gmres_rtol > 0.0))
        throw ConfigError("flow config: bad linear solver settings");
    for (double p : probe_times)
        if (!(p >= 0.0 && p <= T * (1.0 + 1e-12))) throw ConfigError("flow config: probe time outside [0, T]");
}

std::vector<double> FlowConfig::schedule() const {
    validate();
    std::vector<double> ts{0.0};
    double t = t_min;
    while (true) {
        if (t >= T * (1.0 - 1e-12)) {
            ts.push_back(T);
            break;
        }
        ts.push_back(t);
        t = std::min(t * ratio, t + dt_max);
    }
    for (double p : probe_times) ts.push_back(std::min(p, T));
    std::sort(ts.begin(), ts.end());
    std::vector<double> out;
    for (double x : ts)
        if (out.empty() || !close_time(x, out.back(), 1e-12)) out.push_back(x);
    return out;
}

// ---------------------------------------------------------------- trajectory

const Snapshot* FlowTrajectory::find(double t, double rtol) const {
    for (const auto& s : snapshots)
        if (close_time(s.t, t, rtol)) return &s;
    return nullptr;
}

const Snapshot& FlowTrajectory::at(double t) const {
    if (const Snapshot* s = find(t)) return *s;
    throw MissingSnapshots("trajectory has no snapshot at t=" + fmt(t));
}

std::vector<double> FlowTrajectory::times() const {
    std::vector<double> out;
    for (const auto& s : snapshots) out.push_back(s.t);
    return out;
}

ScalarField flow_rhs(const FlowProblem& problem, double t, const ScalarField& phi) {
    const TorusGrid& g = phi.grid;
    const HermitianField form = problem.path.theta(t, g) + complex_hessian(phi);
    ScalarField out = log_ma_ratio(form, problem.omega);
    const PointCoords z(g, problem.F);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= problem.F.value(t, z[i], phi[i]);
    return out;
}

double pde_residual(const FlowProblem& problem, double t, const ScalarField& phi, const ScalarField& phidot) {
    const ScalarField rhs = flow_rhs(problem, t, phi);
    double sup = 0.0;
    for (std::size_t i = 0; i < rhs.size(); ++i) sup = std::max(sup, std::abs(phidot[i] - rhs[i]));
    return sup;
}

// ---------------------------------------------------------------- step

ScalarField step(const ScalarField& phi, double t_from, double t_to, const MetricPath& path, const DrivingTerm& F,
                 const VolumeForm& omega_form, const FlowConfig& cfg, StepDiagnostics* diag,
                 const ScalarField* initial_guess) {
    const TorusGrid& g = phi.grid;
    require_same(g, omega_form.grid(), "step");
    if (path.n() != g.n()) throw MismatchedDiscretization("step: metric path dimension differs from grid");
    if (!(t_to > t_from)) throw InvalidArgument("step: need t_to > t_from");
    phi.require_finite("step input");

    StepProblem sp{phi, t_to, 1.0 / (t_to - t_from), path.theta(t_to, g), omega_form, F, PointCoords(g, F)};
    {
        const Norms nm = norms(phi);
        const double N = g.resolution();
        sp.h_scale = g.n() * N * N * std::max(std::abs(nm.sup), std::abs(nm.inf));
    }
    StepDiagnostics d;
    d.t = t_to;

    const HermitianField Hphi = complex_hessian(phi);
    const auto start = residual(sp, phi, Hphi, nullptr, nullptr, 0.0, nullptr);

    ScalarField u = phi;
    HermitianField Hu = Hphi;
    bool inside = start.positive;
    if (initial_guess) {
        require_same(initial_guess->grid, g, "step guess");
        HermitianField Hg = complex_hessian(*initial_guess);
        if (residual(sp, *initial_guess, Hg, nullptr, nullptr, 0.0, nullptr).positive) {
            u = *initial_guess;
            Hu = std::move(Hg);
            inside = true;
        }
    }
    const double margin0 = inside ? start.margin : positivity(sp.theta + Hphi).min_eigenvalue;
    if (!inside && margin0 >= -kDefaultTolPsh) {
        // degenerate start: theta + (1 - l) H phi = l theta + (1 - l)(theta + H phi)
        ScalarField half = phi;
        for (double& x : half.values) x *= 0.5;
        HermitianField Hh = complex_hessian(half);
        if (residual(sp, half, Hh, nullptr, nullptr, 0.0, nullptr).positive) {
            u = std::move(half);
            Hu = std::move(Hh);
            inside = true;
        }
    }
    if (!inside)
        throw ConeExit("step: theta + H(phi) is not positive at t=" + fmt(t_to) + " (min eigenvalue " +
                           fmt(margin0) + ")",
                       t_to);

    auto fft = Spectral::get(g.n(), g.resolution());
    const HessianSymbols sym(g, *fft);
    NewtonOperator op(g, fft, sym);
    std::vector<double> R, Rtrial, c(g.size()), b(g.size()), y;
    ScalarField v(g);
    HermitianField Hv(g);

    ResidualEval cur = residual(sp, u, Hu, nullptr, nullptr, 0.0, &R);
    int it = 0;
    while (cur.sup > cfg.newton_tol && cur.excess > cfg.newton_tol) {
        if (it >= cfg.max_newton)
            throw NewtonDiverged("step: Newton did not converge in " + std::to_string(cfg.max_newton) +
                                     " iterations at t=" + fmt(t_to) + " (residual " + fmt(cur.sup) + ")",
                                 cur.sup);
        ++it;
        HermitianField form = sp.theta + Hu;
        for (std::size_t i = 0; i < g.size(); ++i) c[i] = sp.inv_dt + F.ds(t_to, sp.z[i], u[i]);
        op.assemble(form, c, sp.inv_dt);
        for (std::size_t i = 0; i < g.size(); ++i) b[i] = -op.weight(i) * R[i];
        d.linear_iters += gmres(op, b, y, cfg.gmres_restart, cfg.gmres_rtol, cfg.gmres_max_iters);
        op.precondition(y, v.values, Hv);

        double lambda = 1.0;
        ResidualEval trial;
        auto damp = [&] {
            lambda = 1.0;
            while (lambda >= cfg.min_damping) {
                trial = residual(sp, u, Hu, &v, &Hv, lambda, &Rtrial, kFractionToBoundary);
                if (trial.positive) break;
                lambda *= cfg.damping;
            }
        };
        damp();
        if (lambda < 0.5 && cfg.gmres_rtol > kTightRtol) {
            // near-degenerate forms amplify the Krylov error in H v; solve accurately and retry
            d.linear_iters += gmres(op, b, y, cfg.gmres_restart, kTightRtol, 10 * cfg.gmres_max_iters);
            op.precondition(y, v.values, Hv);
            damp();
        }
        if (!trial.positive)
            throw ConeExit("step: no damping factor >= " + fmt(cfg.min_damping) + " keeps theta + H positive at t=" +
                               fmt(t_to),
                           t_to);
        // prefer a decrease of the residual among a few further halvings
        double best_lambda = lambda;
        ResidualEval best = trial;
        std::vector<double> Rbest = Rtrial;
        for (int extra = 0; extra < 4 && !(best.sup < cur.sup); ++extra) {
            const double l = best_lambda * cfg.damping;
            if (l < cfg.min_damping) break;
            ResidualEval e = residual(sp, u, Hu, &v, &Hv, l, &Rtrial, kFractionToBoundary);
            if (!e.positive) break;
            best_lambda = l;
            if (e.sup < best.sup) {
                best = e;
                Rbest = Rtrial;
            } else if (!(best.sup < cur.sup)) {
                best = e;
                Rbest = Rtrial;
            }
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            u[i] += best_lambda * v[i];
            Hu.d1[i] += best_lambda * Hv.d1[i];
            if (g.n() == 2) {
                Hu.d2[i] += best_lambda * Hv.d2[i];
                Hu.re12[i] += best_lambda * Hv.re12[i];
                Hu.im12[i] += best_lambda * Hv.im12[i];
            }
        }
        d.min_damping = std::min(d.min_damping, best_lambda);
        // refresh H(u) from u now and then so rounding in the running sum does not accumulate
        if (it % 8 == 0) Hu = complex_hessian(u);
        cur = residual(sp, u, Hu, nullptr, nullptr, 0.0, &R);
        if (!cur.positive) throw ConeExit("step: iterate left the cone at t=" + fmt(t_to), t_to);
    }
    d.newton_iters = it;
    d.residual = cur.sup;
    d.positivity_margin = cur.margin;
    u.require_finite("step output");
    if (diag) *diag = d;
    return u;
}

// ---------------------------------------------------------------- run

FlowTrajectory run(const ScalarField& phi0, const MetricPath& path, const DrivingTerm& F, const VolumeForm& omega_form,
                   const FlowConfig& cfg, const StepObserver& observer) {
    return run(phi0, FlowProblem{path, F, omega_form}, cfg, observer);
}

FlowTrajectory run(const ScalarField& phi0, const FlowProblem& problem, const FlowConfig& cfg,
                   const StepObserver& observer) {
    const TorusGrid& g = phi0.grid;
    require_same(g, problem.omega.grid(), "run");
    phi0.require_finite("initial potential");
    const auto times = cfg.schedule();

    const Norms nm = norms(phi0);
    problem.F.verify(g, cfg.T, nm.inf - 1.0, nm.sup + 1.0);

    // psh check of the start; nef paths only need the first step target inside the cone
    const HermitianField H0 = complex_hessian(phi0);
    const double margin0 = positivity(problem.path.theta(0.0, g) + H0).min_eigenvalue;
    if (problem.path.kind() == MetricKind::Nef) {
        const double m1 = positivity(problem.path.theta(times[1], g) + H0).min_eigenvalue;
        if (!(m1 > 0.0)) throw ConeExit("run: initial potential is outside the cone at the first step", times[1]);
    } else if (margin0 < -kDefaultTolPsh) {
        throw PreconditionFailed("run: initial potential is not theta_0-psh (margin " + fmt(margin0) +
                                 "); rough data go through run_cascade");
    }

    FlowTrajectory traj;
    traj.grid = g;
    traj.problem = problem;
    traj.schedule = times;

    auto keep = [&](std::size_t k) {
        if (cfg.store_all || k == 0 || k + 1 == times.size()) return true;
        for (double p : cfg.probe_times)
            if (close_time(p, times[k], 1e-12)) return true;
        return false;
    };

    Snapshot s0;
    s0.t = 0.0;
    s0.phi = phi0;
    s0.diag.positivity_margin = margin0;
    if (margin0 > 0.0) {
        s0.phidot = flow_rhs(problem, 0.0, phi0);
        s0.has_phidot = true;
    } else {
        s0.phidot = ScalarField(g);
    }
    traj.steps.push_back(s0.diag);
    if (observer) observer(0, 0.0, phi0);

    ScalarField phi = phi0;
    ScalarField phidot = s0.phidot;
    bool have_rate = s0.has_phidot;
    traj.snapshots.push_back(std::move(s0));

    for (std::size_t k = 1; k < times.size(); ++k) {
        const double dt = times[k] - times[k - 1];
        StepDiagnostics d;
        ScalarField guess;
        const ScalarField* gp = nullptr;
        if (have_rate) {
            guess = phi;
            for (std::size_t i = 0; i < g.size(); ++i) guess[i] += dt * phidot[i];
            gp = &guess;
        }
        ScalarField next = step(phi, times[k - 1], times[k], problem.path, problem.F, problem.omega, cfg, &d, gp);

        // phidot from the right-hand side, via the Monge-Ampere density of the snapshot
        const ScalarField dens = ma_density(problem.path.theta(times[k], g), next, problem.omega);
        const PointCoords z(g, problem.F);
        ScalarField rate(g);
        double cert = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            rate[i] = std::log(dens[i]) - problem.F.value(times[k], z[i], next[i]);
            cert = std::max(cert, std::abs((next[i] - phi[i]) / dt - rate[i]));
        }
        d.certified_residual = cert;
        traj.steps.push_back(d);
        phi = std::move(next);
        phidot = std::move(rate);
        have_rate = true;
        if (observer) observer(k, times[k], phi);
        if (keep(k)) {
            Snapshot s;
            s.t = times[k];
            s.phi = phi;
            s.phidot = phidot;
            s.has_phidot = true;
            s.diag = d;
            traj.snapshots.push_back(std::move(s));
        }
    }
    return traj;
}

// ---------------------------------------------------------------- cascade

CascadeResult run_cascade(const RoughPotential& phi0, const RegularizationSchedule& schedule, const TorusGrid& grid,
                          const FlowProblem& problem, const FlowConfig& cfg, const CascadeOptions& opts) {
    if (phi0.n() != grid.n()) throw MismatchedDiscretization("run_cascade: potential and grid dimensions differ");
    CascadeResult res;
    res.probe_times = cfg.probe_times.empty() ? std::vector<double>{cfg.T} : cfg.probe_times;
    FlowConfig level_cfg = cfg;
    level_cfg.probe_times = res.probe_times;

    const ScalarField sampled = phi0.sample(grid);
    res.osc0 = norms(sampled).osc;
    res.tolerance = std::max(opts.tolerance_factor * res.osc0, 1e-12);

    std::vector<ScalarField> levels0;
    if (opts.collapse_smooth && phi0.tag() == Regularity::Smooth &&
        psh_margin(problem.path.theta(0.0, grid), sampled) > 0.0) {
        res.collapsed = true;
        levels0.push_back(sampled);
        res.ladder.initial = sampled;
        res.ladder.levels = levels0;
        res.ladder.clamp_floor = phi0.sampling_floor(grid);
    } else {
        res.ladder = mollify_decreasing(phi0, schedule, grid, opts.mollify);
        levels0 = res.ladder.levels;
        res.deltas = res.ladder.deltas;
    }

    std::vector<ScalarField> prev_steps, cur_steps;
    for (std::size_t j = 0; j < levels0.size(); ++j) {
        const bool last = j + 1 == levels0.size();
        FlowConfig c = level_cfg;
        c.store_all = last ? cfg.store_all : false;
        cur_steps.clear();
        auto observer = [&](std::size_t k, double t, const ScalarField& phi) {
            if (!last) cur_steps.push_back(phi);
            if (j == 0) return;
            const ScalarField& upper = prev_steps[k];
            double worst = -kUnbounded;
            std::size_t where = 0;
            for (std::size_t i = 0; i < phi.size(); ++i) {
                const double dv = phi[i] - upper[i];
                if (dv > worst) {
                    worst = dv;
                    where = i;
                }
            }
            if (worst > res.max_violation) {
                res.max_violation = worst;
                res.violation_time = t;
            }
            if (worst > res.tolerance)
                throw MonotonicityViolated("run_cascade: level " + std::to_string(j) + " exceeds level " +
                                               std::to_string(j - 1) + " by " + fmt(worst) + " at t=" + fmt(t),
                                           t, where, worst);
        };
        FlowTrajectory tr = run(levels0[j], problem, c, observer);
        tr.label = "level " + std::to_string(j);
        res.levels.push_back(std::move(tr));
        prev_steps = std::move(cur_steps);
        cur_steps = {};
    }

    const std::size_t J = res.levels.size();
    res.level_gaps.assign(res.probe_times.size(), {});
    for (std::size_t p = 0; p < res.probe_times.size(); ++p) {
        const double t = res.probe_times[p];
        const ScalarField& top = res.levels[J - 1].at(t).phi;
        res.limit.push_back(top);
        for (std::size_t j = 1; j < J; ++j)
            res.level_gaps[p].push_back(sup_distance(res.levels[j].at(t).phi, res.levels[j - 1].at(t).phi));
        const auto& lg = res.level_gaps[p];
        ScalarField ext = top;
        double gap = 0.0;
        if (J == 1) {
            gap = res.collapsed ? 0.0 : (res.ladder.moments.empty() ? 0.0 : res.ladder.moments.back());
        } else if (J == 2) {
            gap = lg.back();
        } else {
            const double dJ = lg[lg.size() - 1], dJm = lg[lg.size() - 2];
            const double q = std::clamp(dJm > 0.0 ? dJ / dJm : 0.0, 0.0, 0.9);
            gap = dJ * q / (1.0 - q);
            const ScalarField& below = res.levels[J - 2].at(t).phi;
            for (std::size_t i = 0; i < ext.size(); ++i) ext[i] += (top[i] - below[i]) * q / (1.0 - q);
        }
        res.gap.push_back(gap);
        res.extrapolated.push_back(std::move(ext));
    }
    return res;
}

// ---------------------------------------------------------------- reductions

double ExponentialRescale::original_time(double s) const {
    if (rate == 0.0) return s;
    return -std::expm1(-rate * s) / rate;
}

double ExponentialRescale::reduced_time(double tau) const {
    if (rate == 0.0) return tau;
    const double arg = -rate * tau;
    if (!(arg > -1.0)) throw HorizonTooLong("rescale: time " + fmt(tau) + " is not reached by the reduced problem");
    return -std::log1p(arg) / rate;
}

ScalarField ExponentialRescale::to_reduced(const ScalarField& phi, double s) const {
    return std::exp(rate * s) * phi;
}

ScalarField ExponentialRescale::to_original(const ScalarField& phi_reduced, double s) const {
    return std::exp(-rate * s) * phi_reduced;
}

FlowTrajectory ExponentialRescale::pull_back(const FlowTrajectory& reduced, const FlowProblem& original) const {
    FlowTrajectory out;
    out.grid = reduced.grid;
    out.problem = original;
    out.label = reduced.label.empty() ? "pulled back" : reduced.label + " (pulled back)";
    for (double s : reduced.schedule) out.schedule.push_back(original_time(s));
    for (const auto& st : reduced.steps) {
        StepDiagnostics d = st;
        d.t = original_time(st.t);
        out.steps.push_back(d);
    }
    for (const auto& snap : reduced.snapshots) {
        Snapshot s = snap;
        s.t = original_time(snap.t);
        s.phi = to_original(snap.phi, snap.t);
        if (snap.has_phidot)
            for (std::size_t i = 0; i < s.phidot.size(); ++i) s.phidot[i] = snap.phidot[i] - rate * snap.phi[i];
        out.snapshots.push_back(std::move(s));
    }
    return out;
}

namespace {

ReducedProblem rescale_problem(const FlowProblem& problem, double r) {
    const MetricPath& path = problem.path;
    const int n = path.n();
    ExponentialRescale tr;
    tr.rate = r;
    tr.n = n;
    tr.horizon = path.horizon();
    tr.reduced_horizon = tr.reduced_time(tr.horizon);

    const DrivingTerm F = problem.F;
    DrivingTerm Ft;
    Ft.name = F.name + " (rescaled)";
    Ft.value = [F, tr, r, n](double t, const Coord& z, double s) {
        const double e = std::exp(-r * t);
        return -r * s + r * n * t + F.value(tr.original_time(t), z, e * s);
    };
    Ft.ds = [F, tr, r](double t, const Coord& z, double s) {
        const double e = std::exp(-r * t);
        return -r + e * F.ds(tr.original_time(t), z, e * s);
    };
    Ft.dt_partial = [F, tr, r, n](double t, const Coord& z, double s) {
        const double e = std::exp(-r * t);
        const double tau = tr.original_time(t);
        return n * r + e * F.dt_partial(tau, z, e * s) - r * e * s * F.ds(tau, z, e * s);
    };
    // r < 0 is certified monotone by the caller; r > 0 adds -r s
    Ft.monotonicity_defect = r > 0.0 ? r + F.monotonicity_defect : 0.0;
    Ft.time_bound = kUnbounded;
    Ft.smooth = F.smooth;
    Ft.z_independent = F.z_independent;

    MetricPath pt;
    if (path.is_uniform()) {
        pt = MetricPath::uniform_custom(
            [path, tr, r](double t) { return std::exp(r * t) * path.uniform_theta(tr.original_time(t)); },
            [path, tr, r](double t) {
                const double tau = tr.original_time(t);
                return r * (std::exp(r * t) * path.uniform_theta(tau)) + path.uniform_theta_dot(tau);
            },
            tr.reduced_horizon, n);
    } else {
        pt = MetricPath::custom(
            [path, tr, r](double t, const TorusGrid& g) {
                HermitianField th = path.theta(tr.original_time(t), g);
                const double e = std::exp(r * t);
                for (auto* v : {&th.d1, &th.d2, &th.re12, &th.im12})
                    for (double& x : *v) x *= e;
                return th;
            },
            [path, tr, r](double t, const TorusGrid& g) {
                const double tau = tr.original_time(t);
                HermitianField th = path.theta(tau, g);
                const double e = r * std::exp(r * t);
                for (auto* v : {&th.d1, &th.d2, &th.re12, &th.im12})
                    for (double& x : *v) x *= e;
                th += path.theta_dot(tau, g);
                return th;
            },
            tr.reduced_horizon, n);
    }
    ReducedProblem out{FlowProblem{pt.with_kind(MetricKind::Rescaled), Ft, problem.omega}, tr, 0.0};

    // sampled dF~/ds over the reduced horizon
    const TorusGrid coarse(n, 8);
    const auto pts = F.z_independent ? std::vector<Coord>{Coord{0, 0, 0, 0}} : sample_points(coarse, 16);
    double worst = kUnbounded;
    for (double t : linspace(0.0, tr.reduced_horizon, 33))
        for (const Coord& z : pts)
            for (double s : linspace(-10.0, 10.0, 41)) worst = std::min(worst, Ft.ds(t, z, s));
    out.min_ds = worst;
    return out;
}

}  // namespace

ReducedProblem monotone_reduction(const FlowProblem& problem, std::optional<double> B) {
    const double C = problem.F.monotonicity_defect;
    const double T = problem.path.horizon();
    const double best = std::exp(-1.0) / T;  // max over B < 0 of -B e^{BT}
    const double slack = 4.0 * DBL_EPSILON;
    if (!std::isfinite(C) || C > best * (1.0 + slack))
        throw HorizonTooLong("monotone_reduction: C = " + fmt(C) + " exceeds 1/(eT) = " + fmt(best) +
                             "; no admissible B for T = " + fmt(T));
    const double b = B.value_or(-1.0 / T);
    if (!(b < 0.0)) throw PreconditionFailed("monotone_reduction: B must be negative");
    const double reach = -b * std::exp(b * T);
    if (reach < C * (1.0 - slack))
        throw PreconditionFailed("monotone_reduction: -B e^{BT} = " + fmt(reach) + " < C = " + fmt(C) +
                                 " for B = " + fmt(b) + " (B = -1/T is admissible)");
    ReducedProblem out = rescale_problem(problem, b);
    if (out.min_ds < -1e-12) throw CertificateFailed("dF~/ds >= 0", 0.0, out.min_ds);
    return out;
}

ReducedProblem uniqueness_rescale(const FlowProblem& problem, double A) {
    const DrivingTerm& F = problem.F;
    if (!F.smooth)
        throw PreconditionFailed("uniqueness_rescale: driving term '" + F.name +
                                 "' is not smooth; no uniqueness certificate");
    if (!std::isfinite(F.time_bound))
        throw PreconditionFailed("uniqueness_rescale: no bound C' on dF/dt declared");
    if (!(A > F.time_bound))
        throw PreconditionFailed("uniqueness_rescale: need A > C' = " + fmt(F.time_bound) + ", got " + fmt(A));
    const double T = problem.path.horizon();
    if (!(A * T < 1.0))
        throw HorizonTooLong("uniqueness_rescale: A T = " + fmt(A * T) + " >= 1, the rescaled time does not reach T");
    ReducedProblem out = rescale_problem(problem, A);
    const TorusGrid coarse(problem.path.n(), 8);
    for (double t : linspace(0.0, out.transform.reduced_horizon, 65)) {
        const double m = positivity(out.problem.path.theta_dot(t, coarse)).min_eigenvalue;
        if (m < -1e-12) throw CertificateFailed("theta~ non-decreasing", t, m);
    }
    return out;
}

double pullback_residual(const FlowTrajectory& reduced, const ExponentialRescale& transform,
                         const FlowProblem& original) {
    if (reduced.snapshots.size() != reduced.schedule.size())
        throw MissingSnapshots("pullback_residual: the reduced trajectory must keep every step");
    double worst = 0.0;
    const double r = transform.rate;
    for (std::size_t k = 1; k < reduced.snapshots.size(); ++k) {
        const Snapshot& a = reduced.snapshots[k - 1];
        const Snapshot& b = reduced.snapshots[k];
        const double s = b.t;
        const ScalarField phi = transform.to_original(b.phi, s);
        const ScalarField rhs = flow_rhs(original, transform.original_time(s), phi);
        for (std::size_t i = 0; i < rhs.size(); ++i) {
            const double D = (b.phi[i] - a.phi[i]) / (b.t - a.t);
            worst = std::max(worst, std::abs(D - r * b.phi[i] - rhs[i]));
        }
    }
    return worst;
}

// ---------------------------------------------------------------- nef start

namespace {

bool is_constant_field(const HermitianField& h) {
    for (std::size_t i = 1; i < h.size(); ++i)
        if (h.d1[i] != h.d1[0] || h.d2[i] != h.d2[0] || h.re12[i] != h.re12[0] || h.im12[i] != h.im12[0])
            return false;
    return true;
}

MetricPath nef_path(const HermitianField& theta0, double T, double eps) {
    if (is_constant_field(theta0)) return MetricPath::nef(theta0.at(0), T, eps);
    const int n = theta0.grid.n();
    return MetricPath::custom(
               [theta0, eps, n](double t, const TorusGrid& g) {
                   if (g != theta0.grid) throw MismatchedDiscretization("nef path: grid differs from theta0");
                   HermitianField th = theta0;
                   th += HermMat::scalar(n, t + eps);
                   return th;
               },
               [n](double, const TorusGrid& g) { return HermitianField::constant(g, HermMat::identity(n)); }, T, n)
        .with_kind(MetricKind::Nef);
}

}  // namespace

NefResult run_nef(const HermitianField& theta0, const std::vector<double>& eps_schedule, const ScalarField& phi0,
                  const DrivingTerm& F, const VolumeForm& omega_form, const FlowConfig& cfg,
                  double tolerance_factor) {
    const TorusGrid& g = phi0.grid;
    require_same(g, theta0.grid, "run_nef");
    if (eps_schedule.empty()) throw InvalidArgument("run_nef: empty eps schedule");
    for (std::size_t i = 0; i < eps_schedule.size(); ++i)
        if (!(eps_schedule[i] > 0.0) || (i > 0 && !(eps_schedule[i] < eps_schedule[i - 1])))
            throw InvalidArgument("run_nef: eps schedule must be positive and strictly decreasing");
    const double floor = positivity(theta0).min_eigenvalue;
    if (floor < -1e-12) throw PreconditionFailed("run_nef: theta0 is not semi-positive (min eigenvalue " + fmt(floor) + ")");
    const HermitianField H0 = complex_hessian(phi0);
    const double m0 = positivity(theta0 + H0).min_eigenvalue;
    if (m0 + eps_schedule.front() < -kDefaultTolPsh)
        throw PreconditionFailed("run_nef: phi0 is not (theta0 + eps0)-psh");

    NefResult res;
    res.eps = eps_schedule;
    res.earliest_time = std::max(0.0, -m0);
    res.tolerance = std::max(tolerance_factor * norms(phi0).osc, 1e-12);
    for (double eps : eps_schedule) {
        try {
            FlowTrajectory tr = run(phi0, FlowProblem{nef_path(theta0, cfg.T, eps), F, omega_form}, cfg);
            tr.label = "eps " + fmt(eps);
            res.trajectories.push_back(std::move(tr));
        } catch (const ConeExit& e) {
            throw ConeExit(std::string(e.what()) + "; earliest admissible time " + fmt(res.earliest_time),
                           res.earliest_time);
        }
    }

    // phi_{t, eps} decreases as eps decreases
    for (std::size_t j = 1; j < res.trajectories.size(); ++j) {
        const auto& big = res.trajectories[j - 1];
        const auto& small = res.trajectories[j];
        for (std::size_t k = 0; k < small.snapshots.size(); ++k) {
            const Snapshot& s = small.snapshots[k];
            const Snapshot& b = big.snapshots[k];
            double worst = -kUnbounded;
            std::size_t where = 0;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (s.phi[i] - b.phi[i] > worst) {
                    worst = s.phi[i] - b.phi[i];
                    where = i;
                }
            if (worst > res.max_violation) {
                res.max_violation = worst;
                res.violation_time = s.t;
            }
            if (worst > res.tolerance)
                throw MonotonicityViolated("run_nef: eps " + fmt(res.eps[j]) + " exceeds eps " + fmt(res.eps[j - 1]) +
                                               " by " + fmt(worst) + " at t=" + fmt(s.t),
                                           s.t, where, worst);
        }
    }

    // linear extrapolation in eps
    const auto& last = res.trajectories.back();
    for (std::size_t k = 0; k < last.snapshots.size(); ++k) {
        ScalarField lim = last.snapshots[k].phi;
        if (res.trajectories.size() > 1) {
            const std::size_t J = res.eps.size() - 1;
            const double w = res.eps[J] / (res.eps[J - 1] - res.eps[J]);
            const ScalarField& prev = res.trajectories[J - 1].snapshots[k].phi;
            for (std::size_t i = 0; i < lim.size(); ++i) lim[i] += w * (lim[i] - prev[i]);
        }
        res.limit_times.push_back(last.snapshots[k].t);
        res.limit.push_back(std::move(lim));
    }

    // lower-bound witness: eps = 0 flow with F replaced by its sup along the trajectories
    double A = -kUnbounded;
    const PointCoords z(g, F);
    for (const auto& tr : res.trajectories)
        for (const auto& s : tr.snapshots)
            for (std::size_t i = 0; i < g.size(); ++i) A = std::max(A, F.value(s.t, z[i], s.phi[i]));
    res.witness_bound = A;
    const auto times = cfg.schedule();
    HermitianField first = theta0;
    first += HermMat::scalar(g.n(), times[1]);
    first += H0;
    const double m1 = positivity(first).min_eigenvalue;
    if (m1 > 0.0) {
        FlowConfig wc = cfg;
        FlowTrajectory w = run(phi0, FlowProblem{nef_path(theta0, cfg.T, 0.0), DrivingTerm::constant(A), omega_form}, wc);
        w.label = "witness";
        double margin = kUnbounded;
        for (std::size_t k = 0; k < w.snapshots.size(); ++k)
            for (std::size_t i = 0; i < g.size(); ++i)
                margin = std::min(margin, last.snapshots[k].phi[i] - w.snapshots[k].phi[i]);
        res.witness_margin = margin;
        res.witness_available = true;
        res.witness = std::move(w);
    }
    return res;
}

}  // namespace cmaf
