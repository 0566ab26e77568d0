#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cmaflow/kahler_geometry.hpp"
#include "cmaflow/psh_analysis.hpp"
#include "cmaflow/torus_grid.hpp"

namespace cmaf {

constexpr double kUnbounded = std::numeric_limits<double>::infinity();

/// F(t, z, s) with its partials and declared bounds: dF/ds >= -C, |dF/dt| <= C'.
struct DrivingTerm {
    using Fn = std::function<double(double t, const Coord& z, double s)>;

    std::string name = "zero";
    Fn value;
    Fn ds;
    Fn dt_partial;
    double monotonicity_defect = 0.0;  ///< C
    double time_bound = 0.0;           ///< C' (kUnbounded when not declared)
    bool smooth = true;
    bool z_independent = true;

    static DrivingTerm zero();
    static DrivingTerm constant(double A);
    /// kappa * s + offset.
    static DrivingTerm linear(double kappa, double offset = 0.0);
    /// kappa * s + b cos(2 pi x1) + beta * t.
    static DrivingTerm affine(double kappa, double b, double beta);
    /// a tanh(s) + b sin(2 pi x1) + beta t.
    static DrivingTerm tanh_term(double a, double b = 0.0, double beta = 0.0);
    /// -2 sign(s) sqrt|s|: not smooth at s = 0 and dF/ds unbounded below.
    static DrivingTerm counterexample();

    /// Samples the declared bounds on [0, T] x (subsampled grid) x [s_lo, s_hi];
    /// throws ConfigError on a violation.
    void verify(const TorusGrid& g, double T, double s_lo, double s_hi, int t_samples = 17,
                int s_samples = 17) const;
};

struct FlowProblem {
    MetricPath path;
    DrivingTerm F;
    VolumeForm omega;
};

struct FlowConfig {
    double T = 1.0;
    double t_min = 1e-4;
    double ratio = 1.0905077326652577;  ///< 2^{1/8}
    double dt_max = kUnbounded;
    std::vector<double> probe_times;  ///< inserted into the schedule exactly
    double newton_tol = 1e-10;
    int max_newton = 30;
    double damping = 0.5;
    double min_damping = 9.5367431640625e-07;  ///< 2^-20
    int gmres_restart = 30;
    double gmres_rtol = 1e-2;
    int gmres_max_iters = 300;
    bool store_all = true;  ///< otherwise keep t = 0, probe times and T only

    void validate() const;
    /// 0, t_min, then t_{k+1} = min(r t_k, t_k + dt_max) up to T, plus probe times.
    std::vector<double> schedule() const;
};

struct StepDiagnostics {
    double t = 0.0;
    int newton_iters = 0;
    int linear_iters = 0;
    double residual = 0.0;            ///< Newton residual, sup norm
    double certified_residual = 0.0;  ///< recomputed from the snapshot via ma_density
    double positivity_margin = 0.0;
    double min_damping = 1.0;
};

struct Snapshot {
    double t = 0.0;
    ScalarField phi;
    ScalarField phidot;
    bool has_phidot = false;
    StepDiagnostics diag;
};

struct FlowTrajectory {
    TorusGrid grid;
    FlowProblem problem;
    std::vector<double> schedule;
    std::vector<Snapshot> snapshots;   ///< stored subset of the schedule
    std::vector<StepDiagnostics> steps;  ///< one entry per schedule time
    std::string label;

    const Snapshot* find(double t, double rtol = 1e-9) const;
    const Snapshot& at(double t) const;  ///< throws MissingSnapshots
    std::vector<double> times() const;
    const Snapshot& initial() const { return snapshots.front(); }
    const Snapshot& final() const { return snapshots.back(); }
};

/// Sup norm of phidot - log det(theta_t + H phi) + log Omega + F(t, z, phi).
double pde_residual(const FlowProblem& problem, double t, const ScalarField& phi, const ScalarField& phidot);

/// log det(theta_t + H phi) - log Omega - F(t, z, phi).
ScalarField flow_rhs(const FlowProblem& problem, double t, const ScalarField& phi);

/// One backward-Euler step solved by damped Newton with preconditioned GMRES.
ScalarField step(const ScalarField& phi, double t_from, double t_to, const MetricPath& path, const DrivingTerm& F,
                 const VolumeForm& omega_form, const FlowConfig& cfg, StepDiagnostics* diag = nullptr,
                 const ScalarField* initial_guess = nullptr);

using StepObserver = std::function<void(std::size_t k, double t, const ScalarField& phi)>;

FlowTrajectory run(const ScalarField& phi0, const MetricPath& path, const DrivingTerm& F, const VolumeForm& omega_form,
                   const FlowConfig& cfg, const StepObserver& observer = {});
FlowTrajectory run(const ScalarField& phi0, const FlowProblem& problem, const FlowConfig& cfg,
                   const StepObserver& observer = {});

struct CascadeOptions {
    double tolerance_factor = 1e-7;  ///< cascade tolerance = factor * Osc(phi0)
    bool collapse_smooth = true;     ///< smooth strictly psh data run once without mollification
    MollifyOptions mollify;
};

struct CascadeResult {
    std::vector<FlowTrajectory> levels;  ///< earlier levels keep only probe snapshots
    std::vector<double> deltas;
    std::vector<double> probe_times;
    std::vector<ScalarField> limit;         ///< last level at each probe time
    std::vector<ScalarField> extrapolated;  ///< pointwise geometric extrapolation of the ladder
    std::vector<double> gap;                ///< estimated sup distance from limit to the true limit
    std::vector<std::vector<double>> level_gaps;  ///< sup |phi_j - phi_{j-1}| per probe time
    double max_violation = 0.0;  ///< max over snapshots of phi_{t,j+1} - phi_{t,j}
    double violation_time = 0.0;
    double tolerance = 0.0;
    double osc0 = 0.0;
    bool collapsed = false;
    MollifyResult ladder;
};

CascadeResult run_cascade(const RoughPotential& phi0, const RegularizationSchedule& schedule, const TorusGrid& grid,
                          const FlowProblem& problem, const FlowConfig& cfg, const CascadeOptions& opts = {});

/// phi~(t) = e^{rate t} phi(tau(t)) with tau(t) = (1 - e^{-rate t}) / rate.
struct ExponentialRescale {
    double rate = 0.0;
    int n = 1;
    double horizon = 1.0;          ///< original T
    double reduced_horizon = 1.0;  ///< tau^{-1}(T)

    double original_time(double s) const;
    double reduced_time(double tau) const;
    ScalarField to_reduced(const ScalarField& phi, double s) const;
    ScalarField to_original(const ScalarField& phi_reduced, double s) const;
    /// Maps snapshot times and fields; phidot(tau) = d/ds phi~ - rate phi~.
    FlowTrajectory pull_back(const FlowTrajectory& reduced, const FlowProblem& original) const;
};

struct ReducedProblem {
    FlowProblem problem;
    ExponentialRescale transform;
    double min_ds = 0.0;  ///< sampled min of dF~/ds
};

/// Change of variables turning dF/ds >= -C into dF~/ds >= 0. Requires B < 0 and
/// -B e^{BT} >= C; B defaults to -1/T, which maximizes -B e^{BT} = 1/(eT).
ReducedProblem monotone_reduction(const FlowProblem& problem, std::optional<double> B = std::nullopt);

/// Same transform with rate A > C' chosen so that theta~ is non-decreasing in t.
ReducedProblem uniqueness_rescale(const FlowProblem& problem, double A);

/// Residual of the original equation along a pulled-back reduced trajectory, with the
/// time derivative measured by the reduced backward-Euler quotient.
double pullback_residual(const FlowTrajectory& reduced, const ExponentialRescale& transform,
                         const FlowProblem& original);

struct NefResult {
    std::vector<double> eps;
    std::vector<FlowTrajectory> trajectories;
    double max_violation = 0.0;  ///< max of phi_{t,eps_small} - phi_{t,eps_large}
    double violation_time = 0.0;
    double tolerance = 0.0;
    std::vector<ScalarField> limit;  ///< linear extrapolation in eps to 0 at each stored time
    std::vector<double> limit_times;
    bool witness_available = false;
    double witness_bound = 0.0;      ///< constant A replacing F in the comparison flow
    double witness_margin = 0.0;     ///< min of phi_{t,eps_min} - witness
    double earliest_time = 0.0;      ///< first t with theta_0 + t I + H phi0 > 0
    std::optional<FlowTrajectory> witness;
};

NefResult run_nef(const HermitianField& theta0, const std::vector<double>& eps_schedule, const ScalarField& phi0,
                  const DrivingTerm& F, const VolumeForm& omega_form, const FlowConfig& cfg,
                  double tolerance_factor = 1e-7);

}  // namespace cmaf
