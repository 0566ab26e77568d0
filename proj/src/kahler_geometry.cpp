#include "cmaflow/kahler_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cmaflow/errors.hpp"

namespace cmaf {

namespace {

void require_same_grid(const TorusGrid& a, const TorusGrid& b) {
    if (a.n() != b.n() || a.resolution() != b.resolution())
        throw MismatchedDiscretization("forms live on different grids");
}

}  // namespace

VolumeForm::VolumeForm(ScalarField density) : density_(std::move(density)) {
    density_.require_finite("volume form");
    const auto [lo, hi] = std::minmax_element(density_.values.begin(), density_.values.end());
    min_ = *lo;
    max_ = *hi;
    if (!(min_ > 0.0)) throw InvalidArgument("volume form density must be strictly positive");
    log_density_ = ScalarField(density_.grid);
    for (std::size_t i = 0; i < density_.size(); ++i) log_density_[i] = std::log(density_[i]);
}

VolumeForm VolumeForm::uniform(const TorusGrid& g, double value) { return VolumeForm(ScalarField(g, value)); }

std::string metric_kind_name(MetricKind k) {
    switch (k) {
        case MetricKind::Constant: return "constant";
        case MetricKind::Affine: return "affine";
        case MetricKind::Nef: return "nef";
        case MetricKind::Custom: return "custom";
        case MetricKind::Rescaled: return "rescaled";
    }
    return "unknown";
}

MetricPath MetricPath::constant(const HermMat& omega, double T) {
    MetricPath p;
    p.kind_ = MetricKind::Constant;
    p.n_ = omega.n;
    p.T_ = T;
    p.uniform_theta_ = [omega](double) { return omega; };
    p.uniform_theta_dot_ = [n = omega.n](double) { return HermMat::zero(n); };
    p.nef_base_ = HermMat::identity(omega.n);
    return p;
}

MetricPath MetricPath::affine(const HermMat& base, const HermMat& slope, double T) {
    if (base.n != slope.n) throw InvalidArgument("affine path: dimension mismatch");
    MetricPath p;
    p.kind_ = MetricKind::Affine;
    p.n_ = base.n;
    p.T_ = T;
    p.uniform_theta_ = [base, slope](double t) { return base + t * slope; };
    p.uniform_theta_dot_ = [slope](double) { return slope; };
    p.nef_base_ = HermMat::identity(base.n);
    return p;
}

MetricPath MetricPath::nef(const HermMat& theta0, double T, double eps) {
    if (theta0.min_eigenvalue() < -1e-12) throw InvalidArgument("nef path: theta0 must be semi-positive");
    if (eps < 0.0) throw InvalidArgument("nef path: eps must be non-negative");
    MetricPath p;
    p.kind_ = MetricKind::Nef;
    p.n_ = theta0.n;
    p.T_ = T;
    const HermMat I = HermMat::identity(theta0.n);
    p.uniform_theta_ = [theta0, I, eps](double t) { return theta0 + (t + eps) * I; };
    p.uniform_theta_dot_ = [I](double) { return I; };
    p.nef_base_ = theta0;
    p.nef_eps_ = eps;
    return p;
}

MetricPath MetricPath::uniform_custom(UniformFn theta, UniformFn theta_dot, double T, int n) {
    MetricPath p;
    p.kind_ = MetricKind::Custom;
    p.n_ = n;
    p.T_ = T;
    p.uniform_theta_ = std::move(theta);
    p.uniform_theta_dot_ = std::move(theta_dot);
    p.nef_base_ = HermMat::identity(n);
    return p;
}

MetricPath MetricPath::custom(FieldFn theta, FieldFn theta_dot, double T, int n) {
    MetricPath p;
    p.kind_ = MetricKind::Custom;
    p.n_ = n;
    p.T_ = T;
    p.field_theta_ = std::move(theta);
    p.field_theta_dot_ = std::move(theta_dot);
    p.nef_base_ = HermMat::identity(n);
    return p;
}

HermMat MetricPath::uniform_theta(double t) const {
    if (!uniform_theta_) throw InvalidArgument("metric path is not uniform in space");
    return uniform_theta_(t);
}

HermMat MetricPath::uniform_theta_dot(double t) const {
    if (!uniform_theta_dot_) throw InvalidArgument("metric path is not uniform in space");
    return uniform_theta_dot_(t);
}

HermitianField MetricPath::theta(double t, const TorusGrid& g) const {
    if (uniform_theta_) return HermitianField::constant(g, uniform_theta_(t));
    return field_theta_(t, g);
}

HermitianField MetricPath::theta_dot(double t, const TorusGrid& g) const {
    if (uniform_theta_dot_) return HermitianField::constant(g, uniform_theta_dot_(t));
    return field_theta_dot_(t, g);
}

PositivityInfo positivity(const HermitianField& form) {
    PositivityInfo info{std::numeric_limits<double>::infinity(), 0};
    for (std::size_t i = 0; i < form.size(); ++i) {
        const double e = form.at(i).min_eigenvalue();
        if (!(e >= info.min_eigenvalue)) {
            info.min_eigenvalue = e;
            info.point = i;
            if (std::isnan(e)) break;
        }
    }
    return info;
}

void require_kahler(const HermitianField& form, const std::string& what) {
    const auto info = positivity(form);
    if (!(info.min_eigenvalue > 0.0))
        throw NotKahler(what + ": form not positive definite (min eigenvalue " +
                            std::to_string(info.min_eigenvalue) + " at point " + std::to_string(info.point) +
                            ")",
                        info.point, info.min_eigenvalue);
}

ScalarField ma_density(const HermitianField& theta, const ScalarField& phi, const VolumeForm& omega) {
    require_same_grid(theta.grid, phi.grid);
    require_same_grid(theta.grid, omega.grid());
    HermitianField form = theta + complex_hessian(phi);
    require_kahler(form, "ma_density");
    ScalarField out(phi.grid);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = form.at(i).det() / omega.density()[i];
    return out;
}

ScalarField log_ma_ratio(const HermitianField& form, const VolumeForm& omega) {
    require_same_grid(form.grid, omega.grid());
    require_kahler(form, "log_ma_ratio");
    ScalarField out(form.grid);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(form.at(i).det()) - omega.log_density()[i];
    return out;
}

ScalarField trace_with_respect_to(const HermitianField& base, const HermitianField& alpha) {
    require_same_grid(base.grid, alpha.grid);
    ScalarField out(base.grid);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const HermMat b = base.at(i);
        if (!(b.min_eigenvalue() > 0.0))
            throw NotKahler("trace_with_respect_to: base not positive definite at point " + std::to_string(i), i,
                            b.min_eigenvalue());
        out[i] = b.inverse().trace_product(alpha.at(i));
    }
    return out;
}

double mixed_density(const HermMat& A, const HermMat& B, int j) {
    if (A.n != B.n) throw InvalidArgument("mixed_density: dimension mismatch");
    if (j < 0 || j > A.n) throw InvalidArgument("mixed_density: j out of range");
    if (A.n == 1) return j == 1 ? A.a11 : B.a11;
    if (j == 0) return B.det();
    if (j == 2) return A.det();
    return 0.5 * (A.a11 * B.a22 + A.a22 * B.a11 - 2.0 * std::real(A.a12 * std::conj(B.a12)));
}

ScalarField mixed_density(const HermitianField& A, const HermitianField& B, int j) {
    require_same_grid(A.grid, B.grid);
    if (j < 0 || j > A.grid.n()) throw InvalidArgument("mixed_density: j out of range");
    ScalarField out(A.grid);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mixed_density(A.at(i), B.at(i), j);
    return out;
}

namespace {

struct TraceSlacks {
    double lower;
    double upper;
};

TraceSlacks trace_slacks(const HermMat& w, const HermMat& wp) {
    const int n = w.n;
    const double ratio = wp.det() / w.det();
    const double tr = w.inverse().trace_product(wp) / n;
    const double tr_back = wp.inverse().trace_product(w);
    const double lower = tr - std::pow(ratio, 1.0 / n);
    const double upper = ratio * std::pow(tr_back, n - 1) - tr;
    return {lower, upper};
}

}  // namespace

TraceInequalityReport check_trace_inequality(const HermMat& omega1, const HermMat& omega2) {
    if (!(omega1.min_eigenvalue() > 0.0) || !(omega2.min_eigenvalue() > 0.0))
        throw NotKahler("check_trace_inequality: forms must be positive definite", 0,
                        std::min(omega1.min_eigenvalue(), omega2.min_eigenvalue()));
    const auto s = trace_slacks(omega1, omega2);
    return {s.lower, s.upper, 0, 0, s.lower >= -1e-10 && s.upper >= -1e-10};
}

TraceInequalityReport check_trace_inequality(const HermitianField& omega1, const HermitianField& omega2) {
    require_same_grid(omega1.grid, omega2.grid);
    require_kahler(omega1, "check_trace_inequality");
    require_kahler(omega2, "check_trace_inequality");
    TraceInequalityReport r{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 0, 0,
                            true};
    for (std::size_t i = 0; i < omega1.size(); ++i) {
        const auto s = trace_slacks(omega1.at(i), omega2.at(i));
        if (s.lower < r.lower_slack) {
            r.lower_slack = s.lower;
            r.lower_point = i;
        }
        if (s.upper < r.upper_slack) {
            r.upper_slack = s.upper;
            r.upper_point = i;
        }
    }
    r.passed = r.lower_slack >= -1e-10 && r.upper_slack >= -1e-10;
    return r;
}

namespace {

// Extreme eigenvalues and determinants of theta_t over the grid (or the single matrix).
struct Extremes {
    double min_eig = std::numeric_limits<double>::infinity();
    double max_eig = -std::numeric_limits<double>::infinity();
    double max_norm_dot = 0.0;
    double min_mono = std::numeric_limits<double>::infinity();
    double delta = 1.0;
};

Extremes extremes_at(const MetricPath& path, const VolumeForm& omega, double t) {
    Extremes e;
    auto visit = [&](const HermMat& th, const HermMat& dot, double dens) {
        e.min_eig = std::min(e.min_eig, th.min_eigenvalue());
        e.max_eig = std::max(e.max_eig, th.max_eigenvalue());
        e.max_norm_dot = std::max(e.max_norm_dot, dot.norm());
        e.min_mono = std::min(e.min_mono, (th - t * dot).min_eigenvalue());
        const double d = th.det();
        const double ratio = d > 0.0 ? std::max(d / dens, dens / d) : std::numeric_limits<double>::infinity();
        e.delta = std::max(e.delta, ratio);
    };
    if (path.is_uniform()) {
        const HermMat th = path.uniform_theta(t);
        const HermMat dot = path.uniform_theta_dot(t);
        visit(th, dot, omega.min());
        visit(th, dot, omega.max());
    } else {
        const TorusGrid& g = omega.grid();
        const HermitianField th = path.theta(t, g);
        const HermitianField dot = path.theta_dot(t, g);
        for (std::size_t i = 0; i < g.size(); ++i) visit(th.at(i), dot.at(i), omega.density()[i]);
    }
    return e;
}

}  // namespace

double volume_delta(const MetricPath& path, const VolumeForm& omega, int samples, double t0) {
    if (samples < 2) throw InvalidArgument("volume_delta: need at least two samples");
    const double T = path.horizon();
    double delta = 1.0;
    for (int k = 0; k < samples; ++k) {
        const double t = t0 + (T - t0) * k / (samples - 1);
        delta = std::max(delta, extremes_at(path, omega, t).delta);
    }
    return delta;
}

MetricCertificate certify_metric_path(const MetricPath& path, const VolumeForm& omega, int samples,
                                      bool throw_on_failure) {
    if (samples < 2) throw InvalidArgument("certify_metric_path: need at least two samples");
    MetricCertificate c;
    c.lower_bound_exempt = path.kind() == MetricKind::Nef;
    const double T = path.horizon();
    const double dt = T / (samples - 1);
    double lower = std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
    double mono = std::numeric_limits<double>::infinity();
    double floor = std::numeric_limits<double>::infinity();
    double lip = 0.0;
    double t_lower = 0.0, t_upper = 0.0, t_mono = 0.0;
    for (int k = 0; k < samples; ++k) {
        const double t = dt * k;
        const Extremes e = extremes_at(path, omega, t);
        if (e.min_eig - 0.5 < lower) {
            lower = e.min_eig - 0.5;
            t_lower = t;
        }
        if (2.0 - e.max_eig < upper) {
            upper = 2.0 - e.max_eig;
            t_upper = t;
        }
        if (e.min_mono < mono) {
            mono = e.min_mono;
            t_mono = t;
        }
        floor = std::min(floor, e.min_eig);
        lip = std::max(lip, e.max_norm_dot);
        c.delta = std::max(c.delta, e.delta);
    }
    c.sandwich_lower_margin = lower;
    c.sandwich_upper_margin = upper;
    c.monotonicity_margin = mono;
    c.eigenvalue_floor = floor;
    c.lipschitz_allowance = lip * dt / 2.0;

    auto fail = [&](const std::string& what, double t, double margin) {
        c.passed = false;
        c.failures.push_back(what);
        c.worst_time = t;
        if (throw_on_failure) throw CertificateFailed(what, t, margin);
    };
    if (!c.lower_bound_exempt && lower - c.lipschitz_allowance < 0.0)
        fail("omega/2 <= theta_t", t_lower, lower - c.lipschitz_allowance);
    if (c.lower_bound_exempt && floor < -1e-12) fail("theta_t >= 0", t_lower, floor);
    if (upper - c.lipschitz_allowance < 0.0) fail("theta_t <= 2 omega", t_upper, upper - c.lipschitz_allowance);
    if (mono < -1e-12) fail("theta_t - t theta_dot_t >= 0", t_mono, mono);
    return c;
}

}  // namespace cmaf
