#include "cmaflow/torus_grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cmaflow/errors.hpp"
#include "cmaflow/spectral.hpp"

namespace cmaf {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

void require_same_grid(const TorusGrid& a, const TorusGrid& b) {
    if (a.n() != b.n() || a.resolution() != b.resolution())
        throw MismatchedDiscretization("fields live on different grids");
}

// Neumaier-compensated sum.
double compensated_sum(const double* v, std::size_t count) {
    double sum = 0.0;
    double c = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double t = sum + v[i];
        if (std::abs(sum) >= std::abs(v[i]))
            c += (sum - t) + v[i];
        else
            c += (v[i] - t) + sum;
        sum = t;
    }
    return sum + c;
}

// Transform of phi with its mean removed; derivatives never see the zero mode.
cvec forward_centered(const ScalarField& phi, const Spectral& fft) {
    const double m = mean(phi);
    std::vector<double> centered(phi.values);
    for (double& v : centered) v -= m;
    cvec hat(fft.complex_size());
    fft.forward(centered.data(), hat.data());
    return hat;
}

template <class Symbol>
std::vector<double> apply_symbol(const cvec& hat, const Spectral& fft, Symbol sym) {
    cvec work(hat.size());
    fft.for_each_mode([&](std::size_t k, const std::array<int, 4>& m) { work[k] = hat[k] * sym(m); });
    std::vector<double> out(fft.real_size());
    fft.inverse(work.data(), out.data());
    return out;
}

// Second difference along one axis.
double fd_second(const ScalarField& f, std::size_t i, int a, double inv_h2) {
    const TorusGrid& g = f.grid;
    return (f[g.shifted(i, a, 1)] - 2.0 * f[i] + f[g.shifted(i, a, -1)]) * inv_h2;
}

// Product of centered first differences along axes a != b.
double fd_mixed(const ScalarField& f, std::size_t i, int a, int b, double inv_4h2) {
    const TorusGrid& g = f.grid;
    const std::size_t ap = g.shifted(i, a, 1);
    const std::size_t am = g.shifted(i, a, -1);
    return (f[g.shifted(ap, b, 1)] - f[g.shifted(ap, b, -1)] - f[g.shifted(am, b, 1)] +
            f[g.shifted(am, b, -1)]) *
           inv_4h2;
}

}  // namespace

std::string backend_name(Backend b) { return b == Backend::Spectral ? "spectral" : "fd"; }

Backend backend_from_name(const std::string& name) {
    if (name == "spectral") return Backend::Spectral;
    if (name == "fd" || name == "finite-difference") return Backend::FiniteDifference;
    throw ConfigError("unknown derivative backend '" + name + "'");
}

TorusGrid::TorusGrid(int n, int resolution, Backend backend)
    : n_(n), resolution_(resolution), backend_(backend) {
    if (n != 1 && n != 2) throw InvalidArgument("complex dimension must be 1 or 2");
    if (resolution < 8 || !is_power_of_two(resolution))
        throw InvalidArgument("resolution must be a power of two >= 8");
    size_ = 1;
    for (int a = 0; a < 2 * n; ++a) size_ *= static_cast<std::size_t>(resolution);
    std::size_t s = 1;
    stride_ = {0, 0, 0, 0};
    for (int a = 2 * n - 1; a >= 0; --a) {
        stride_[a] = s;
        s *= static_cast<std::size_t>(resolution);
    }
}

std::array<int, 4> TorusGrid::multi_index(std::size_t index) const {
    std::array<int, 4> mi{0, 0, 0, 0};
    for (int a = 0; a < axes(); ++a)
        mi[a] = static_cast<int>((index / stride_[a]) % static_cast<std::size_t>(resolution_));
    return mi;
}

std::size_t TorusGrid::flat_index(const std::array<int, 4>& mi) const {
    std::size_t idx = 0;
    for (int a = 0; a < axes(); ++a) {
        int c = mi[a] % resolution_;
        if (c < 0) c += resolution_;
        idx += static_cast<std::size_t>(c) * stride_[a];
    }
    return idx;
}

Coord TorusGrid::coord(std::size_t index) const {
    const auto mi = multi_index(index);
    Coord c{0.0, 0.0, 0.0, 0.0};
    for (int a = 0; a < axes(); ++a) c[a] = mi[a] * spacing();
    return c;
}

std::size_t TorusGrid::shifted(std::size_t index, int axis, int step) const {
    const auto N = static_cast<long long>(resolution_);
    const auto c = static_cast<long long>((index / stride_[axis]) % static_cast<std::size_t>(N));
    long long nc = (c + step) % N;
    if (nc < 0) nc += N;
    return static_cast<std::size_t>(static_cast<long long>(index) +
                                    (nc - c) * static_cast<long long>(stride_[axis]));
}

double torus_distance(const Coord& a, const Coord& b, int n) {
    double s = 0.0;
    for (int k = 0; k < 2 * n; ++k) {
        double d = std::abs(a[k] - b[k]);
        d -= std::floor(d);
        d = std::min(d, 1.0 - d);
        s += d * d;
    }
    return std::sqrt(s);
}

ScalarField::ScalarField(const TorusGrid& g, std::vector<double> v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.size()) throw InvalidArgument("field length does not match grid");
}

ScalarField ScalarField::sample(const TorusGrid& g, const std::function<double(const Coord&)>& f) {
    ScalarField out(g);
    for (std::size_t i = 0; i < g.size(); ++i) out.values[i] = f(g.coord(i));
    return out;
}

bool ScalarField::finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void ScalarField::require_finite(const std::string& what) const {
    if (!finite()) throw NumericFailure(what + ": non-finite value");
}

ScalarField& ScalarField::operator+=(const ScalarField& o) {
    require_same_grid(grid, o.grid);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
}

ScalarField& ScalarField::operator-=(const ScalarField& o) {
    require_same_grid(grid, o.grid);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= o.values[i];
    return *this;
}

ScalarField& ScalarField::operator*=(double s) {
    for (double& v : values) v *= s;
    return *this;
}

ScalarField& ScalarField::operator+=(double c) {
    for (double& v : values) v += c;
    return *this;
}

ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
ScalarField operator*(double s, ScalarField a) { return a *= s; }
ScalarField operator+(ScalarField a, double c) { return a += c; }

HermitianField::HermitianField(const TorusGrid& g)
    : grid(g), d1(g.size(), 0.0), d2(g.size(), 0.0), re12(g.size(), 0.0), im12(g.size(), 0.0) {}

HermitianField HermitianField::constant(const TorusGrid& g, const HermMat& m) {
    HermitianField h(g);
    for (std::size_t i = 0; i < g.size(); ++i) h.set(i, m);
    return h;
}

bool HermitianField::finite() const {
    auto ok = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return ok(d1) && ok(d2) && ok(re12) && ok(im12);
}

HermitianField& HermitianField::operator+=(const HermitianField& o) {
    require_same_grid(grid, o.grid);
    for (std::size_t i = 0; i < size(); ++i) {
        d1[i] += o.d1[i];
        d2[i] += o.d2[i];
        re12[i] += o.re12[i];
        im12[i] += o.im12[i];
    }
    return *this;
}

HermitianField& HermitianField::operator+=(const HermMat& m) {
    for (std::size_t i = 0; i < size(); ++i) {
        d1[i] += m.a11;
        d2[i] += m.a22;
        re12[i] += m.a12.real();
        im12[i] += m.a12.imag();
    }
    return *this;
}

HermitianField operator+(HermitianField a, const HermitianField& b) { return a += b; }

HermitianField complex_hessian(const ScalarField& phi) {
    phi.require_finite("complex_hessian input");
    const TorusGrid& g = phi.grid;
    HermitianField H(g);
    if (g.backend() == Backend::Spectral) {
        auto fft = Spectral::get(g.n(), g.resolution());
        const cvec hat = forward_centered(phi, *fft);
        auto k = [](int m) { return kTwoPi * m; };
        H.d1 = apply_symbol(hat, *fft, [&](const std::array<int, 4>& m) {
            return -0.25 * (k(m[0]) * k(m[0]) + k(m[1]) * k(m[1]));
        });
        if (g.n() == 2) {
            H.d2 = apply_symbol(hat, *fft, [&](const std::array<int, 4>& m) {
                return -0.25 * (k(m[2]) * k(m[2]) + k(m[3]) * k(m[3]));
            });
            // first-derivative wavenumbers vanish at Nyquist so mixed symbols stay real-even
            auto f = [&](int m) { return fft->is_nyquist(m) ? 0.0 : k(m); };
            H.re12 = apply_symbol(hat, *fft, [&](const std::array<int, 4>& m) {
                return -0.25 * (f(m[0]) * f(m[2]) + f(m[1]) * f(m[3]));
            });
            H.im12 = apply_symbol(hat, *fft, [&](const std::array<int, 4>& m) {
                return -0.25 * (f(m[0]) * f(m[3]) - f(m[1]) * f(m[2]));
            });
        }
    } else {
        const double h = g.spacing();
        const double inv_h2 = 1.0 / (h * h);
        const double inv_4h2 = 0.25 * inv_h2;
        for (std::size_t i = 0; i < g.size(); ++i) {
            H.d1[i] = 0.25 * (fd_second(phi, i, 0, inv_h2) + fd_second(phi, i, 1, inv_h2));
            if (g.n() == 2) {
                H.d2[i] = 0.25 * (fd_second(phi, i, 2, inv_h2) + fd_second(phi, i, 3, inv_h2));
                H.re12[i] = 0.25 * (fd_mixed(phi, i, 0, 2, inv_4h2) + fd_mixed(phi, i, 1, 3, inv_4h2));
                H.im12[i] = 0.25 * (fd_mixed(phi, i, 0, 3, inv_4h2) - fd_mixed(phi, i, 1, 2, inv_4h2));
            }
        }
    }
    if (!H.finite()) throw NumericFailure("complex_hessian: non-finite output");
    return H;
}

ScalarField laplacian(const ScalarField& phi) {
    phi.require_finite("laplacian input");
    const TorusGrid& g = phi.grid;
    ScalarField out(g);
    if (g.backend() == Backend::Spectral) {
        auto fft = Spectral::get(g.n(), g.resolution());
        const cvec hat = forward_centered(phi, *fft);
        out.values = apply_symbol(hat, *fft, [&](const std::array<int, 4>& m) {
            double s = 0.0;
            for (int a = 0; a < g.axes(); ++a) s += (kTwoPi * m[a]) * (kTwoPi * m[a]);
            return -s;
        });
    } else {
        const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
        for (std::size_t i = 0; i < g.size(); ++i) {
            double s = 0.0;
            for (int a = 0; a < g.axes(); ++a) s += fd_second(phi, i, a, inv_h2);
            out.values[i] = s;
        }
    }
    out.require_finite("laplacian");
    return out;
}

ScalarField partial(const ScalarField& phi, int axis) {
    const TorusGrid& g = phi.grid;
    if (axis < 0 || axis >= g.axes()) throw InvalidArgument("axis out of range");
    ScalarField out(g);
    if (g.backend() == Backend::Spectral) {
        auto fft = Spectral::get(g.n(), g.resolution());
        const cvec hat = forward_centered(phi, *fft);
        cvec work(hat.size());
        fft->for_each_mode([&](std::size_t k, const std::array<int, 4>& m) {
            const bool nyq = fft->is_nyquist(m[axis]);
            work[k] = nyq ? std::complex<double>(0.0, 0.0)
                          : hat[k] * std::complex<double>(0.0, kTwoPi * m[axis]);
        });
        fft->inverse(work.data(), out.values.data());
    } else {
        const double inv_2h = 0.5 / g.spacing();
        for (std::size_t i = 0; i < g.size(); ++i)
            out.values[i] = (phi[g.shifted(i, axis, 1)] - phi[g.shifted(i, axis, -1)]) * inv_2h;
    }
    out.require_finite("partial derivative");
    return out;
}

ScalarField gradient_sq(const ScalarField& phi) {
    const TorusGrid& g = phi.grid;
    ScalarField beta(g);
    for (int a = 0; a < g.axes(); ++a) {
        const ScalarField d = partial(phi, a);
        for (std::size_t i = 0; i < g.size(); ++i) beta.values[i] += 0.25 * d[i] * d[i];
    }
    return beta;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return compensated_sum(v.data(), v.size()) / static_cast<double>(v.size());
}

double mean(const ScalarField& f) { return mean(f.values); }

Norms norms(const ScalarField& phi) {
    Norms r;
    const auto [lo, hi] = std::minmax_element(phi.values.begin(), phi.values.end());
    r.sup = *hi;
    r.inf = *lo;
    std::vector<double> a(phi.values.size());
    std::transform(phi.values.begin(), phi.values.end(), a.begin(), [](double v) { return std::abs(v); });
    r.l1 = mean(a);
    r.osc = r.sup - r.inf;
    return r;
}

double sup_distance(const ScalarField& a, const ScalarField& b) {
    require_same_grid(a.grid, b.grid);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::abs(a[i] - b[i]));
    return s;
}

double l1_distance(const ScalarField& a, const ScalarField& b) {
    require_same_grid(a.grid, b.grid);
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = std::abs(a[i] - b[i]);
    return mean(d);
}

double parabolic_holder_seminorm(const std::vector<TimedField>& snapshots, double alpha,
                                 std::size_t max_samples) {
    if (snapshots.size() < 2) throw InvalidArgument("Holder seminorm needs at least two snapshots");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    if (max_samples < 2) throw InvalidArgument("need at least two samples");
    const TorusGrid& g = snapshots.front().field->grid;
    for (const auto& s : snapshots) require_same_grid(g, s.field->grid);

    const std::size_t per = g.size();
    const std::size_t total = per * snapshots.size();
    const std::size_t stride = (total + max_samples - 1) / max_samples;

    struct Sample {
        double t;
        Coord x;
        double v;
    };
    std::vector<Sample> samples;
    samples.reserve(total / stride + 1);
    for (std::size_t k = 0; k < total; k += stride) {
        const auto& snap = snapshots[k / per];
        const std::size_t i = k % per;
        samples.push_back({snap.t, g.coord(i), (*snap.field)[i]});
    }

    double best = 0.0;
    for (std::size_t a = 0; a < samples.size(); ++a) {
        for (std::size_t b = a + 1; b < samples.size(); ++b) {
            const double rho = torus_distance(samples[a].x, samples[b].x, g.n()) +
                               std::sqrt(std::abs(samples[a].t - samples[b].t));
            if (rho <= 0.0) continue;
            best = std::max(best, std::abs(samples[a].v - samples[b].v) / std::pow(rho, alpha));
        }
    }
    return best;
}

ScalarField restrict_field(const ScalarField& fine, const TorusGrid& coarse) {
    const TorusGrid& g = fine.grid;
    if (g.n() != coarse.n() || g.resolution() % coarse.resolution() != 0)
        throw MismatchedDiscretization("coarse grid is not a subgrid of the fine grid");
    const int ratio = g.resolution() / coarse.resolution();
    ScalarField out(coarse);
    for (std::size_t i = 0; i < coarse.size(); ++i) {
        auto mi = coarse.multi_index(i);
        for (int a = 0; a < coarse.axes(); ++a) mi[a] *= ratio;
        out.values[i] = fine[g.flat_index(mi)];
    }
    return out;
}

double interpolate_linear(const ScalarField& f, const Coord& x) {
    const TorusGrid& g = f.grid;
    const int N = g.resolution();
    const int axes = g.axes();
    std::array<int, 4> base{0, 0, 0, 0};
    std::array<double, 4> frac{0, 0, 0, 0};
    for (int a = 0; a < axes; ++a) {
        double u = x[a] - std::floor(x[a]);
        u *= N;
        const int i = static_cast<int>(std::floor(u));
        base[a] = i;
        frac[a] = u - i;
    }
    double value = 0.0;
    for (int corner = 0; corner < (1 << axes); ++corner) {
        double w = 1.0;
        std::array<int, 4> mi = base;
        for (int a = 0; a < axes; ++a) {
            if (corner & (1 << a)) {
                mi[a] += 1;
                w *= frac[a];
            } else {
                w *= 1.0 - frac[a];
            }
        }
        if (w != 0.0) value += w * f[g.flat_index(mi)];
    }
    return value;
}

HermMat hessian_symbol(const TorusGrid& g, const std::array<int, 4>& mode) {
    const double h = g.spacing();
    const int N = g.resolution();
    auto nyq = [&](int m) { return m == N / 2 || m == -N / 2; };
    // pure second derivative symbol and first-derivative "wavenumber" per axis
    std::array<double, 4> sec{0, 0, 0, 0};
    std::array<double, 4> first{0, 0, 0, 0};
    for (int a = 0; a < g.axes(); ++a) {
        const double k = kTwoPi * mode[a];
        if (g.backend() == Backend::Spectral) {
            sec[a] = k * k;
            first[a] = nyq(mode[a]) ? 0.0 : k;
        } else {
            sec[a] = (2.0 - 2.0 * std::cos(k * h)) / (h * h);
            first[a] = std::sin(k * h) / h;
        }
    }
    HermMat S = HermMat::zero(g.n());
    S.a11 = -0.25 * (sec[0] + sec[1]);
    if (g.n() == 2) {
        S.a22 = -0.25 * (sec[2] + sec[3]);
        S.a12 = {-0.25 * (first[0] * first[2] + first[1] * first[3]),
                 -0.25 * (first[0] * first[3] - first[1] * first[2])};
    }
    return S;
}

}  // namespace cmaf
