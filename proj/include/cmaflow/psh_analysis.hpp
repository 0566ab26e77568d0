#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmaflow/kahler_geometry.hpp"
#include "cmaflow/torus_grid.hpp"

namespace cmaf {

/// UnboundedPositiveLelong marks model poles used only for Lelong-number estimation.
enum class Regularity { Smooth, Lipschitz, Bounded, UnboundedZeroLelong, UnboundedPositiveLelong };

std::string regularity_name(Regularity r);
Regularity regularity_from_name(const std::string& s);

constexpr double kDefaultTolPsh = 1e-8;
constexpr double kDefaultClampFloor = -40.0;

/// One term a * cos(2 pi m.x + phase) of a Fourier-sum potential.
struct FourierTerm {
    double amplitude = 0.0;
    std::array<int, 4> mode{0, 0, 0, 0};
    double phase = 0.0;
};

/// Initial potential given by a closed form or by samples on a grid. Closed forms may
/// take the value -inf on a declared singular set; samples are clamped at `floor`.
class RoughPotential {
public:
    using Evaluator = std::function<double(const Coord&)>;

    RoughPotential(std::string kind, int n, Regularity tag, Evaluator f);
    RoughPotential(std::string kind, ScalarField sampled, Regularity tag);

    static RoughPotential constant(int n, double c);
    static RoughPotential fourier_sum(int n, std::vector<FourierTerm> terms);
    /// max(a cos 2 pi x1, b).
    static RoughPotential max_kink(int n, double a, double b = 0.0);
    /// -2c dist(x1, Z)^2: omega + dd^c phi vanishes (in the x1 direction) off the kink.
    static RoughPotential parabola_kink(int n, double c = 1.0);
    /// gamma * g(r) with g = log r near the center, glued to a constant for r >= 0.45.
    static RoughPotential log_pole(int n, double gamma, const Coord& center);
    /// gamma * g(r) with g = -(-log r)^{1/2} near the center (zero Lelong number).
    static RoughPotential sqrt_log_pole(int n, double gamma, const Coord& center);
    /// gamma * max(g(r), log r_cut) with g the glued logarithm (bounded).
    static RoughPotential truncated_log_pole(int n, double gamma, const Coord& center, double r_cut);

    const std::string& kind() const { return kind_; }
    int n() const { return n_; }
    Regularity tag() const { return tag_; }
    double floor() const { return floor_; }
    void set_floor(double f) { floor_ = f; }
    bool has_closed_form() const { return static_cast<bool>(eval_); }
    const std::optional<Coord>& singular_point() const { return singular_; }

    /// Clamped value at a point (closed form, or multilinear interpolation of samples).
    double value(const Coord& x) const;
    /// Unclamped closed-form value (may be -inf); interpolated samples otherwise.
    double raw_value(const Coord& x) const;
    /// Clamp level used when sampling on g: the configured floor, raised for potentials
    /// with a singular point to the value half a grid cell away from it.
    double sampling_floor(const TorusGrid& g) const;
    /// Clamped samples on the grid.
    ScalarField sample(const TorusGrid& g) const;

private:
    std::string kind_;
    int n_;
    Regularity tag_;
    Evaluator eval_;
    std::optional<ScalarField> sampled_;
    double floor_ = kDefaultClampFloor;
    std::optional<Coord> singular_;
};

/// Minimum over the grid of the smallest eigenvalue of I + H(phi).
double psh_margin(const ScalarField& phi);
/// Minimum over the grid of the smallest eigenvalue of theta + H(phi).
double psh_margin(const HermitianField& theta, const ScalarField& phi);
inline bool is_omega_psh(const ScalarField& phi, double tol = kDefaultTolPsh) { return psh_margin(phi) >= -tol; }

/// One decade of radii [8h, 80h], decreasing.
std::vector<double> default_lelong_radii(double spacing, int count = 8);

struct LelongEstimate {
    double value;          ///< fitted slope clamped below at 0
    double raw_slope;      ///< slope before clamping
    std::vector<double> radii;
    std::vector<double> circle_max;
    double clamp_floor;
};

/// Least-squares slope of max_{|z-x|=r} phi against log r.
LelongEstimate lelong_estimate(const RoughPotential& phi, const Coord& x, const std::vector<double>& radii,
                               double spacing);

struct RegularizationSchedule {
    std::vector<double> deltas;  ///< strictly decreasing, positive

    static RegularizationSchedule geometric(double first, double ratio, int count);
    void validate() const;
    std::size_t count() const { return deltas.size(); }
};

/// Second moment n * delta^2 of the Gaussian kernel with transform exp(-pi^2 delta^2 |m|^2).
double mollifier_moment(int n, double delta);

/// Convolution with the periodized Gaussian of width delta (variance delta^2 / 2 per axis).
ScalarField gaussian_mollify(const ScalarField& f, double delta);

struct MollifyResult {
    std::vector<ScalarField> levels;
    std::vector<double> deltas;
    std::vector<double> moments;   ///< m(delta_j)
    std::vector<double> shifts;    ///< constant shift applied by the monotonicity repair
    std::vector<double> blend;     ///< strictness blend weight s_j (0 when not applied)
    std::vector<double> margins;   ///< psh margin of each output
    double blend_ceiling = 0.0;    ///< M in phi_j = psi_j + s_j (M - psi_j)
    double clamp_floor = kDefaultClampFloor;
    ScalarField initial;           ///< clamped samples of phi0
};

struct MollifyOptions {
    double tol_psh = kDefaultTolPsh;
    double repair_limit_factor = 10.0;
    /// s_j = strictness * delta_j^2; the blend is applied when some level has margin < s_J.
    double strictness = 1.0;
};

/// Decreasing ladder of smooth, strictly omega-psh approximants of phi0.
MollifyResult mollify_decreasing(const RoughPotential& phi0, const RegularizationSchedule& schedule,
                                 const TorusGrid& grid, const MollifyOptions& opts = {});

/// Lower bound of the Monge-Ampere capacity of K (an indicator field) from a deterministic
/// dictionary of omega-psh test functions with values in [0, 1]. Dictionaries are prefixes
/// of each other, so the bound is non-decreasing in dictionary_size.
double capacity_lower_bound(const ScalarField& K, int dictionary_size, std::uint64_t seed);

/// Aubin-Yau energy (1/(n+1)) sum_j int phi (theta + H phi)^j theta^{n-j}, total volume 1.
double energy(const HermitianField& theta, const ScalarField& phi, const VolumeForm& omega,
              double tol_psh = kDefaultTolPsh);

}  // namespace cmaf
