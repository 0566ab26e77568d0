#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cmaflow/hermitian.hpp"

namespace cmaf {

enum class Backend { Spectral, FiniteDifference };

std::string backend_name(Backend b);
Backend backend_from_name(const std::string& name);

/// Point of the torus in real coordinates ordered (x1, y1, x2, y2); unused axes are 0.
using Coord = std::array<double, 4>;

/// Periodic lattice over R^{2n}/Z^{2n}. Axes are ordered (x1, y1, x2, y2) and stored
/// row-major, so the last axis varies fastest.
class TorusGrid {
public:
    TorusGrid() = default;
    TorusGrid(int n, int resolution, Backend backend = Backend::Spectral);

    int n() const { return n_; }
    int resolution() const { return resolution_; }
    int axes() const { return 2 * n_; }
    double spacing() const { return 1.0 / resolution_; }
    Backend backend() const { return backend_; }
    std::size_t size() const { return size_; }

    Coord coord(std::size_t index) const;
    std::array<int, 4> multi_index(std::size_t index) const;
    std::size_t flat_index(const std::array<int, 4>& mi) const;
    /// Index of the neighbour shifted by `step` along `axis`, wrapping periodically.
    std::size_t shifted(std::size_t index, int axis, int step) const;

    bool operator==(const TorusGrid& o) const {
        return n_ == o.n_ && resolution_ == o.resolution_ && backend_ == o.backend_;
    }
    bool operator!=(const TorusGrid& o) const { return !(*this == o); }

    TorusGrid with_backend(Backend b) const { return TorusGrid(n_, resolution_, b); }

private:
    int n_ = 1;
    int resolution_ = 8;
    Backend backend_ = Backend::Spectral;
    std::size_t size_ = 64;
    std::array<std::size_t, 4> stride_{};
};

/// Periodic distance from a to b (componentwise wrap, then Euclidean).
double torus_distance(const Coord& a, const Coord& b, int n);

struct ScalarField {
    TorusGrid grid;
    std::vector<double> values;

    ScalarField() = default;
    explicit ScalarField(const TorusGrid& g, double fill = 0.0) : grid(g), values(g.size(), fill) {}
    ScalarField(const TorusGrid& g, std::vector<double> v);

    static ScalarField sample(const TorusGrid& g, const std::function<double(const Coord&)>& f);

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    bool finite() const;
    /// Throws NumericFailure naming `what` when a value is not finite.
    void require_finite(const std::string& what) const;

    ScalarField& operator+=(const ScalarField& o);
    ScalarField& operator-=(const ScalarField& o);
    ScalarField& operator*=(double s);
    ScalarField& operator+=(double c);
};

ScalarField operator+(ScalarField a, const ScalarField& b);
ScalarField operator-(ScalarField a, const ScalarField& b);
ScalarField operator*(double s, ScalarField a);
ScalarField operator+(ScalarField a, double c);

/// Per-point Hermitian matrix, stored as separate arrays of independent entries.
struct HermitianField {
    TorusGrid grid;
    std::vector<double> d1, d2, re12, im12;

    HermitianField() = default;
    explicit HermitianField(const TorusGrid& g);
    static HermitianField constant(const TorusGrid& g, const HermMat& m);

    std::size_t size() const { return d1.size(); }
    HermMat at(std::size_t i) const {
        return HermMat{grid.n(), d1[i], grid.n() == 2 ? d2[i] : 0.0, {re12[i], im12[i]}};
    }
    void set(std::size_t i, const HermMat& m) {
        d1[i] = m.a11;
        d2[i] = m.a22;
        re12[i] = m.a12.real();
        im12[i] = m.a12.imag();
    }
    bool finite() const;

    HermitianField& operator+=(const HermitianField& o);
    HermitianField& operator+=(const HermMat& m);
};

HermitianField operator+(HermitianField a, const HermitianField& b);

/// H_jk = d^2 phi / dz_j dzbar_k by the grid's backend.
HermitianField complex_hessian(const ScalarField& phi);

/// Flat real Laplacian sum_a d^2/dx_a^2.
ScalarField laplacian(const ScalarField& phi);

/// Centered first partial along a real axis.
ScalarField partial(const ScalarField& phi, int axis);

/// sum_j |d phi / dz_j|^2 with d/dz_j = (d/dx_j - i d/dy_j) / 2.
ScalarField gradient_sq(const ScalarField& phi);

struct Norms {
    double sup = 0.0;
    double inf = 0.0;
    double l1 = 0.0;
    double osc = 0.0;
};

Norms norms(const ScalarField& phi);

/// Compensated mean over the grid (equals the integral since the torus has volume 1).
double mean(const std::vector<double>& v);
double mean(const ScalarField& f);
double sup_distance(const ScalarField& a, const ScalarField& b);
double l1_distance(const ScalarField& a, const ScalarField& b);

struct TimedField {
    double t;
    const ScalarField* field;
};

/// Discrete parabolic Holder seminorm max |f(X)-f(Y)| / rho(X,Y)^alpha with
/// rho = |x - x'|_torus + |t - t'|^(1/2). Space-time samples are taken with a fixed
/// stride so that at most `max_samples` remain; all pairs among them are scanned.
double parabolic_holder_seminorm(const std::vector<TimedField>& snapshots, double alpha,
                                 std::size_t max_samples = 2048);

/// Restriction of a field on a fine grid to a coarser grid of the same dimension
/// (exact subsampling since resolutions are powers of two).
ScalarField restrict_field(const ScalarField& fine, const TorusGrid& coarse);

/// Periodic multilinear interpolation of a sampled field at an arbitrary point.
double interpolate_linear(const ScalarField& f, const Coord& x);

/// Symbol of H for the integer mode m (axes x1,y1,x2,y2) under the grid's backend:
/// H(e^{2 pi i m.x}) = S(m) e^{2 pi i m.x}. Used by Fourier-diagonal preconditioners.
HermMat hessian_symbol(const TorusGrid& g, const std::array<int, 4>& mode);

}  // namespace cmaf
