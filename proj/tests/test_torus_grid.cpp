#include <cmath>
#include <numbers>

#include "cmaflow/errors.hpp"
#include "cmaflow/torus_grid.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cmaf;

namespace {
constexpr double pi = std::numbers::pi;

ScalarField cos_mode(const TorusGrid& g, double a) {
    return ScalarField::sample(g, [a](const Coord& c) { return a * std::cos(2 * pi * c[0]); });
}

double tent(double x) { return std::min(x, 1.0 - x); }
}  // namespace

TEST_CASE("grid validation and indexing") {
    CHECK_THROWS_AS(TorusGrid(3, 16), InvalidArgument);
    CHECK_THROWS_AS(TorusGrid(1, 4), InvalidArgument);
    CHECK_THROWS_AS(TorusGrid(1, 24), InvalidArgument);
    TorusGrid g(2, 8);
    CHECK(g.size() == 4096);
    for (std::size_t i : {0ul, 17ul, 4095ul}) CHECK(g.flat_index(g.multi_index(i)) == i);
    const std::size_t i = g.flat_index({7, 0, 3, 7});
    CHECK(g.multi_index(g.shifted(i, 0, 1))[0] == 0);
    CHECK(g.multi_index(g.shifted(i, 3, 1))[3] == 0);
    CHECK(g.multi_index(g.shifted(i, 1, -1))[1] == 7);
    CHECK(g.coord(g.flat_index({4, 0, 0, 0}))[0] == doctest::Approx(0.5));
}

TEST_CASE("complex_hessian of constants vanishes") {
    for (Backend b : {Backend::Spectral, Backend::FiniteDifference}) {
        TorusGrid g(2, 8, b);
        auto H = complex_hessian(ScalarField(g, 3.25));
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(H.at(i).norm() < 1e-12);
    }
}

TEST_CASE("complex_hessian of a single mode, n = 1") {
    TorusGrid g(1, 32);
    const double a = 0.7;
    auto H = complex_hessian(cos_mode(g, a));
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        err = std::max(err, std::abs(H.d1[i] - oracle::hessian_cos(a, g.coord(i)[0])));
    CHECK(err < 1e-11);
}

TEST_CASE("complex_hessian of separable modes, n = 2") {
    TorusGrid g(2, 16);
    const double a = 0.3, b = -0.2;
    auto phi = ScalarField::sample(
        g, [&](const Coord& c) { return a * std::cos(2 * pi * c[0]) + b * std::cos(2 * pi * c[3]); });
    auto H = complex_hessian(phi);
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Coord c = g.coord(i);
        err = std::max(err, std::abs(H.d1[i] + a * pi * pi * std::cos(2 * pi * c[0])));
        err = std::max(err, std::abs(H.d2[i] + b * pi * pi * std::cos(2 * pi * c[3])));
        err = std::max(err, std::abs(H.re12[i]) + std::abs(H.im12[i]));
    }
    CHECK(err < 1e-11);
}

TEST_CASE("complex_hessian off-diagonal of a mixed mode, n = 2") {
    // phi = cos(2 pi (x1 + x2)): H12 = 1/4 d_x1 d_x2 phi = -pi^2 cos, imaginary part 0
    // psi = cos(2 pi (x1 + y2)): H12 = i/4 d_x1 d_y2 psi = -i pi^2 cos
    TorusGrid g(2, 16);
    auto phi = ScalarField::sample(g, [](const Coord& c) { return std::cos(2 * pi * (c[0] + c[2])); });
    auto psi = ScalarField::sample(g, [](const Coord& c) { return std::cos(2 * pi * (c[0] + c[3])); });
    for (Backend b : {Backend::Spectral}) {
        phi.grid = psi.grid = g.with_backend(b);
        auto H = complex_hessian(phi);
        auto K = complex_hessian(psi);
        double err = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Coord c = g.coord(i);
            err = std::max(err, std::abs(H.re12[i] + pi * pi * std::cos(2 * pi * (c[0] + c[2]))));
            err = std::max(err, std::abs(H.im12[i]));
            err = std::max(err, std::abs(K.im12[i] + pi * pi * std::cos(2 * pi * (c[0] + c[3]))));
            err = std::max(err, std::abs(K.re12[i]));
        }
        CHECK(err < 1e-10);
    }
}

TEST_CASE("complex_hessian is linear and has zero mean diagonal") {
    TorusGrid g(2, 16);
    auto f = ScalarField::sample(g, [](const Coord& c) {
        return std::sin(2 * pi * c[0]) * std::cos(2 * pi * c[2]) + 0.3 * std::cos(4 * pi * c[1] + 1.0);
    });
    auto h = ScalarField::sample(g, [](const Coord& c) { return std::exp(std::cos(2 * pi * (c[3] - c[0]))); });
    const double a = 1.7, b = -0.4;
    auto lhs = complex_hessian(a * f + b * h);
    auto Hf = complex_hessian(f);
    auto Hh = complex_hessian(h);
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const HermMat d = lhs.at(i) - (a * Hf.at(i) + b * Hh.at(i));
        err = std::max(err, d.norm());
    }
    CHECK(err < 1e-11);
    CHECK(std::abs(mean(Hh.d1)) < 1e-10);
    CHECK(std::abs(mean(Hh.d2)) < 1e-10);
}

TEST_CASE("n = 1 Hessian is a quarter Laplacian and backends agree to O(h^2)") {
    double prev = 0.0;
    for (int N : {32, 64, 128}) {
        TorusGrid gs(1, N, Backend::Spectral);
        auto phi = ScalarField::sample(gs, [](const Coord& c) {
            return std::exp(0.5 * std::cos(2 * pi * c[0])) * std::sin(2 * pi * c[1]);
        });
        auto Hs = complex_hessian(phi);
        auto L = laplacian(phi);
        for (std::size_t i = 0; i < gs.size(); ++i) CHECK(Hs.d1[i] == doctest::Approx(0.25 * L[i]).epsilon(1e-12));
        ScalarField phid = phi;
        phid.grid = gs.with_backend(Backend::FiniteDifference);
        auto Hd = complex_hessian(phid);
        double err = 0.0;
        for (std::size_t i = 0; i < gs.size(); ++i) err = std::max(err, std::abs(Hs.d1[i] - Hd.d1[i]));
        if (prev > 0.0) CHECK(prev / err == doctest::Approx(4.0).epsilon(0.05));
        prev = err;
    }
}

TEST_CASE("gradient_sq oracles") {
    TorusGrid g(1, 32);
    const double a = 0.4;
    CHECK(norms(gradient_sq(ScalarField(g, 2.0))).sup < 1e-20);
    auto beta = gradient_sq(cos_mode(g, a));
    auto phi2 = ScalarField::sample(
        g, [&](const Coord& c) { return a * std::cos(2 * pi * c[0]) + a * std::cos(2 * pi * c[1]); });
    auto beta2 = gradient_sq(phi2);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Coord c = g.coord(i);
        CHECK(beta[i] == doctest::Approx(oracle::gradsq_cos(a, c[0])).epsilon(1e-10).scale(1e-10));
        CHECK(beta2[i] ==
              doctest::Approx(oracle::gradsq_cos(a, c[0]) + oracle::gradsq_cos(a, c[1])).scale(1e-10));
        CHECK(beta2[i] >= 0.0);
    }
}

TEST_CASE("norms") {
    auto n3 = norms(ScalarField(TorusGrid(1, 8), 3.0));
    CHECK(n3.sup == 3.0);
    CHECK(n3.inf == 3.0);
    CHECK(n3.l1 == 3.0);
    CHECK(n3.osc == 0.0);

    TorusGrid g(1, 64);
    auto nc = norms(cos_mode(g, 1.0));
    CHECK(nc.sup == doctest::Approx(1.0));
    CHECK(nc.inf == doctest::Approx(-1.0));
    CHECK(nc.osc == doctest::Approx(2.0));
    CHECK(nc.l1 == doctest::Approx(oracle::mean_abs_cos_N64).epsilon(1e-14));
    CHECK(std::abs(nc.l1 - 2.0 / pi) < 4.0 / (64.0 * 64.0));

    ScalarField spike(TorusGrid(1, 8), 0.0);
    spike[13] = -1.0;
    auto ns = norms(spike);
    CHECK(ns.osc == 1.0);
    CHECK(ns.l1 == 1.0 / 64.0);
}

TEST_CASE("parabolic Holder seminorm") {
    TorusGrid g(1, 8);
    ScalarField c(g, 1.5);
    CHECK(parabolic_holder_seminorm({{0.0, &c}, {0.5, &c}}, 0.5) == 0.0);

    ScalarField zero(g, 0.0), one(g, 1.0);
    CHECK(parabolic_holder_seminorm({{0.0, &zero}, {1.0, &one}}, 0.5) == doctest::Approx(1.0));

    // tent profile d(x) = dist(x, 0): exhaustive scan oracle on a small grid
    auto f = ScalarField::sample(g, [](const Coord& x) { return tent(x[0]); });
    double brute = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < g.size(); ++j) {
            const double rho = torus_distance(g.coord(i), g.coord(j), 1);
            if (rho > 0) brute = std::max(brute, std::abs(f[i] - f[j]) / std::sqrt(rho));
        }
    const double v = parabolic_holder_seminorm({{0.0, &f}, {0.0, &f}}, 0.5, 100000);
    CHECK(v == doctest::Approx(brute).epsilon(1e-14));
    CHECK(v <= std::sqrt(0.5) + 1e-14);
    CHECK(v >= std::sqrt(g.spacing()) - 1e-14);

    // stride subsampling is deterministic and bounded by the full scan
    const double sub = parabolic_holder_seminorm({{0.0, &f}, {0.0, &f}}, 0.5, 16);
    CHECK(sub <= v + 1e-14);
    CHECK(sub == parabolic_holder_seminorm({{0.0, &f}, {0.0, &f}}, 0.5, 16));
    CHECK_THROWS_AS(parabolic_holder_seminorm({{0.0, &f}}, 0.5), InvalidArgument);
}

TEST_CASE("restriction is exact subsampling") {
    TorusGrid fine(2, 16), coarse(2, 8);
    auto f = ScalarField::sample(fine, [](const Coord& c) { return c[0] + 2 * c[1] + 3 * c[2] + 4 * c[3]; });
    auto r = restrict_field(f, coarse);
    for (std::size_t i = 0; i < coarse.size(); ++i) {
        const Coord c = coarse.coord(i);
        CHECK(r[i] == doctest::Approx(c[0] + 2 * c[1] + 3 * c[2] + 4 * c[3]));
    }
}

TEST_CASE("hessian symbol matches the operator on a Fourier mode") {
    for (Backend b : {Backend::Spectral, Backend::FiniteDifference}) {
        TorusGrid g(2, 8, b);
        const std::array<int, 4> m{1, -2, 3, 1};
        auto re = ScalarField::sample(g, [&](const Coord& c) {
            return std::cos(2 * pi * (m[0] * c[0] + m[1] * c[1] + m[2] * c[2] + m[3] * c[3]));
        });
        auto H = complex_hessian(re);
        const HermMat S = hessian_symbol(g, m);
        double err = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = re[i];
            err = std::max(err, std::abs(H.d1[i] - S.a11 * v));
            err = std::max(err, std::abs(H.d2[i] - S.a22 * v));
            err = std::max(err, std::abs(H.re12[i] - S.a12.real() * v));
            err = std::max(err, std::abs(H.im12[i] - S.a12.imag() * v));
        }
        CHECK(err < 1e-10);
    }
}
