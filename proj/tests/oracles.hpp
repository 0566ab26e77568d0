#pragma once

// Reference values for the unit and acceptance tests. Closed forms come from
// analytic differentiation/integration of Fourier modes; frozen numbers were
// produced once with 30-digit arithmetic and must not be regenerated from the
// library under test.

#include <cmath>
#include <numbers>

namespace oracle {

constexpr double pi = std::numbers::pi;

// mean of |cos(2 pi i / N)| over i = 0..N-1 (trapezoid quadrature of |cos|)
constexpr double mean_abs_cos_N16 = 0.62841743651573101306;
constexpr double mean_abs_cos_N64 = 0.63610836328084963057;
constexpr double mean_abs_cos_N256 = 0.63658781411364195216;

// H(a cos 2 pi x) for n = 1
inline double hessian_cos(double a, double x) { return -a * pi * pi * std::cos(2 * pi * x); }

// |grad|^2 of a cos 2 pi x
inline double gradsq_cos(double a, double x) {
    const double s = std::sin(2 * pi * x);
    return a * a * pi * pi * s * s;
}

// psh margin of a cos 2 pi x (n = 1)
inline double psh_margin_cos(double a) { return 1.0 - a * pi * pi; }

// Energy of a cos 2 pi x with theta = I, n = 1
inline double energy_cos(double a) { return -a * a * pi * pi / 4.0; }

// Energy gap E(phi_t) - E(phi_0) of the small single-mode flow, including the
// second-order drift of the mean.
inline double energy_gap_single_mode(double a, double t) {
    return a * a * pi * pi * (1.0 - std::exp(-2.0 * pi * pi * t)) / 8.0;
}

// Trace inequality chain for omega = I, omega' = diag(4, 1), n = 2
constexpr double trace_chain_lower_slack = 0.5;
constexpr double trace_chain_upper_slack = 2.5;

// Mixed determinant of diag(1,2), diag(3,4), j = 1
constexpr double mixed_diag_example = 5.0;

// Monotone reduction example C = 1, T = 0.1, B = -1/T: -B e^{BT} = 10/e
constexpr double reduction_threshold_value = 3.6787944117144232160;

// Backward Euler for phi' = -phi from c on a uniform step dt: c / (1 + dt)^k
inline double backward_euler_decay(double c, double dt, int k) { return c / std::pow(1.0 + dt, k); }

// Spatially constant nef solution n = 2, theta_0 = diag(1, 0), eps shift:
// phi_t = int_0^t log((1 + s + eps)(s + eps)) ds
inline double nef_ode_exact(double t, double eps) {
    auto F = [](double u) { return u > 0.0 ? u * std::log(u) - u : 0.0; };
    return F(1.0 + t + eps) - F(1.0 + eps) + F(t + eps) - F(eps);
}

}  // namespace oracle
