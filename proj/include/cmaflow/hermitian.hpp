#pragma once

#include <cmath>
#include <complex>

namespace cmaf {

/// Hermitian n x n matrix for n in {1, 2}, stored as its independent entries.
/// Only the (1,2) off-diagonal is stored; (2,1) is its conjugate.
struct HermMat {
    int n = 1;
    double a11 = 0.0;
    double a22 = 0.0;
    std::complex<double> a12{0.0, 0.0};

    static HermMat zero(int n) { return HermMat{n, 0.0, 0.0, {0.0, 0.0}}; }
    static HermMat identity(int n) { return HermMat{n, 1.0, n == 2 ? 1.0 : 0.0, {0.0, 0.0}}; }
    static HermMat diag(double d1, double d2) { return HermMat{2, d1, d2, {0.0, 0.0}}; }
    static HermMat scalar(int n, double s) { return HermMat{n, s, n == 2 ? s : 0.0, {0.0, 0.0}}; }

    double trace() const { return n == 1 ? a11 : a11 + a22; }

    double det() const { return n == 1 ? a11 : a11 * a22 - std::norm(a12); }

    double min_eigenvalue() const {
        if (n == 1) return a11;
        const double mean = 0.5 * (a11 + a22);
        const double half_gap = 0.5 * (a11 - a22);
        return mean - std::sqrt(half_gap * half_gap + std::norm(a12));
    }

    double max_eigenvalue() const {
        if (n == 1) return a11;
        const double mean = 0.5 * (a11 + a22);
        const double half_gap = 0.5 * (a11 - a22);
        return mean + std::sqrt(half_gap * half_gap + std::norm(a12));
    }

    /// Inverse; caller guarantees det() != 0.
    HermMat inverse() const {
        if (n == 1) return HermMat{1, 1.0 / a11, 0.0, {0.0, 0.0}};
        const double d = det();
        return HermMat{2, a22 / d, a11 / d, -a12 / d};
    }

    /// trace(this * other) for Hermitian arguments (always real).
    double trace_product(const HermMat& other) const {
        if (n == 1) return a11 * other.a11;
        return a11 * other.a11 + a22 * other.a22 + 2.0 * std::real(a12 * std::conj(other.a12));
    }

    /// Spectral (operator) norm.
    double norm() const { return std::max(std::abs(min_eigenvalue()), std::abs(max_eigenvalue())); }

    HermMat operator+(const HermMat& o) const { return HermMat{n, a11 + o.a11, a22 + o.a22, a12 + o.a12}; }
    HermMat operator-(const HermMat& o) const { return HermMat{n, a11 - o.a11, a22 - o.a22, a12 - o.a12}; }
    HermMat operator*(double s) const { return HermMat{n, a11 * s, a22 * s, a12 * s}; }
    HermMat& operator+=(const HermMat& o) {
        a11 += o.a11;
        a22 += o.a22;
        a12 += o.a12;
        return *this;
    }

    bool finite() const {
        return std::isfinite(a11) && std::isfinite(a22) && std::isfinite(a12.real()) &&
               std::isfinite(a12.imag());
    }
};

inline HermMat operator*(double s, const HermMat& m) { return m * s; }

}  // namespace cmaf
