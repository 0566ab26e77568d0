#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmaflow/hermitian.hpp"
#include "cmaflow/torus_grid.hpp"

namespace cmaf {

/// Smooth volume form Omega, stored as a density against Lebesgue measure.
class VolumeForm {
public:
    VolumeForm() = default;
    explicit VolumeForm(ScalarField density);
    static VolumeForm uniform(const TorusGrid& g, double value = 1.0);

    const ScalarField& density() const { return density_; }
    const ScalarField& log_density() const { return log_density_; }
    const TorusGrid& grid() const { return density_.grid; }
    double min() const { return min_; }
    double max() const { return max_; }
    bool is_constant() const { return min_ == max_; }

private:
    ScalarField density_;
    ScalarField log_density_;
    double min_ = 1.0;
    double max_ = 1.0;
};

enum class MetricKind { Constant, Affine, Nef, Custom, Rescaled };

std::string metric_kind_name(MetricKind k);

/// t -> (theta_t, d/dt theta_t). Constant, affine and nef paths are uniform in space;
/// custom and rescaled-custom paths may vary pointwise.
class MetricPath {
public:
    using UniformFn = std::function<HermMat(double)>;
    using FieldFn = std::function<HermitianField(double, const TorusGrid&)>;

    static MetricPath constant(const HermMat& omega, double T);
    /// theta_t = base + t * slope.
    static MetricPath affine(const HermMat& base, const HermMat& slope, double T);
    /// theta_t = theta0 + (t + eps) I.
    static MetricPath nef(const HermMat& theta0, double T, double eps = 0.0);
    static MetricPath uniform_custom(UniformFn theta, UniformFn theta_dot, double T, int n);
    static MetricPath custom(FieldFn theta, FieldFn theta_dot, double T, int n);

    MetricKind kind() const { return kind_; }
    int n() const { return n_; }
    double horizon() const { return T_; }
    bool is_uniform() const { return static_cast<bool>(uniform_theta_); }

    HermMat uniform_theta(double t) const;
    HermMat uniform_theta_dot(double t) const;
    HermitianField theta(double t, const TorusGrid& g) const;
    HermitianField theta_dot(double t, const TorusGrid& g) const;

    /// theta0 for nef paths (the singular part); identity otherwise.
    const HermMat& nef_base() const { return nef_base_; }
    double nef_eps() const { return nef_eps_; }

    MetricPath with_kind(MetricKind k) const {
        MetricPath p = *this;
        p.kind_ = k;
        return p;
    }
    MetricPath with_horizon(double T) const {
        MetricPath p = *this;
        p.T_ = T;
        return p;
    }

private:
    MetricKind kind_ = MetricKind::Constant;
    int n_ = 1;
    double T_ = 1.0;
    UniformFn uniform_theta_, uniform_theta_dot_;
    FieldFn field_theta_, field_theta_dot_;
    HermMat nef_base_ = HermMat::identity(1);
    double nef_eps_ = 0.0;
};

/// det(theta + H(phi)) / Omega. Throws NotKahler at the worst point if theta + H(phi)
/// is not positive definite.
ScalarField ma_density(const HermitianField& theta, const ScalarField& phi, const VolumeForm& omega);

/// log det(theta + H) - log Omega for a precomputed form theta + H.
ScalarField log_ma_ratio(const HermitianField& form, const VolumeForm& omega);

/// Minimum eigenvalue over the grid and where it is attained.
struct PositivityInfo {
    double min_eigenvalue;
    std::size_t point;
};
PositivityInfo positivity(const HermitianField& form);

/// Throws NotKahler unless min eigenvalue of form > 0.
void require_kahler(const HermitianField& form, const std::string& what);

/// trace(base^{-1} alpha) pointwise.
ScalarField trace_with_respect_to(const HermitianField& base, const HermitianField& alpha);

/// Mixed determinant: coefficient of s^j t^{n-j} in det(sA + tB) over binom(n, j).
double mixed_density(const HermMat& A, const HermMat& B, int j);
ScalarField mixed_density(const HermitianField& A, const HermitianField& B, int j);

struct TraceInequalityReport {
    double lower_slack;  ///< min of (1/n) tr_w(w') - (w'^n/w^n)^{1/n}
    double upper_slack;  ///< min of (w'^n/w^n) (tr_{w'} w)^{n-1} - (1/n) tr_w(w')
    std::size_t lower_point = 0;
    std::size_t upper_point = 0;
    bool passed;
};

/// Slack of the chain (w'^n/w^n)^{1/n} <= (1/n) tr_w(w') <= (w'^n/w^n)(tr_{w'} w)^{n-1}.
TraceInequalityReport check_trace_inequality(const HermitianField& omega1, const HermitianField& omega2);
TraceInequalityReport check_trace_inequality(const HermMat& omega1, const HermMat& omega2);

struct MetricCertificate {
    double sandwich_lower_margin = 0.0;  ///< min over samples of lambda_min(theta) - 1/2
    double sandwich_upper_margin = 0.0;  ///< min over samples of 2 - lambda_max(theta)
    double lipschitz_allowance = 0.0;    ///< max |theta_dot| * dt / 2 between samples
    double monotonicity_margin = 0.0;    ///< min lambda_min(theta - t theta_dot)
    double delta = 1.0;                  ///< smallest delta with Omega/delta <= theta^n <= delta Omega
    double eigenvalue_floor = 0.0;       ///< min lambda_min(theta) (reported for nef paths)
    double worst_time = 0.0;
    bool lower_bound_exempt = false;
    bool passed = true;
    std::vector<std::string> failures;
};

/// Samples t in [0, T] and checks w/2 <= theta_t <= 2w and theta_t - t theta_dot >= 0.
/// With `throw_on_failure`, a violated inequality raises CertificateFailed.
MetricCertificate certify_metric_path(const MetricPath& path, const VolumeForm& omega, int samples = 64,
                                      bool throw_on_failure = true);

/// delta of the volume sandwich over sampled t in [t0, T].
double volume_delta(const MetricPath& path, const VolumeForm& omega, int samples = 64, double t0 = 0.0);

}  // namespace cmaf
