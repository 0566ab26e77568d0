#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmaflow/flow_engine.hpp"
#include "json.hpp"

namespace cmaf {

/// Outcome of one property check. margin >= 0 passes.
struct MarginReport {
    std::string check;
    std::string anchor;  ///< statement being tested, in words
    double margin = 0.0;
    double t = 0.0;       ///< time of the worst margin
    Coord z{0, 0, 0, 0};  ///< point of the worst margin
    std::vector<std::pair<std::string, double>> constants;
    std::string note;

    bool passed() const { return margin >= 0.0; }
    double constant(const std::string& name) const;  ///< throws InvalidArgument when absent
    void set(const std::string& name, double value);
};

nlohmann::json to_json(const MarginReport& r);
MarginReport report_from_json(const nlohmann::json& j);
/// check,anchor,margin,passed,t,constants (name=value separated by ';').
std::string reports_to_csv(const std::vector<MarginReport>& reports);

/// 1e-9 Osc on the n = 1 finite-difference backend, 10 h^2 Osc otherwise.
double comparison_tolerance(const TorusGrid& g, double osc);

MarginReport check_comparison(const FlowTrajectory& phi, const FlowTrajectory& psi, double lambda);

struct LowerBoundOptions {
    double log_weight_factor = 2.0;  ///< c_max(t) = factor * n * t log(1/t) + K t
};

/// [upper bound with the explicit constant, lower bound with fitted K].
std::vector<MarginReport> check_apriori_bounds(const FlowTrajectory& traj, const DrivingTerm& F, const MetricPath& path,
                                               const VolumeForm& omega_form, const LowerBoundOptions& opts = {});

struct TimeDerivativeOptions {
    double fit_from = 0.0;  ///< lower end of the fit window (0: first positive time)
    double fit_to = 0.0;    ///< upper end (0: final time)
};

/// [upper: phidot <= (C_up - phi_eps) / t on [eps, T]; lower: fit of min phidot against n log t].
std::vector<MarginReport> check_time_derivative(const FlowTrajectory& traj, double eps,
                                                const TimeDerivativeOptions& opts = {});

/// [gradient: sup |grad phi|^2 <= e^{C_g / t}; Laplacian: t log tr(omega_t) <= 2A Osc(phi_{t/2}) + C].
std::vector<MarginReport> check_gradient_laplacian(const FlowTrajectory& traj);

MarginReport check_energy_monotonicity(const FlowTrajectory& traj, const MetricPath& theta_path,
                                       const VolumeForm& omega_form);

struct StabilityOptions {
    int homotopy_samples = 3;
    double eps = 0.0;  ///< time of the second-order diagnostic (0: a tenth of T)
};

MarginReport check_stability(const ScalarField& phi0, const ScalarField& psi0, const FlowProblem& problem,
                             const FlowConfig& cfg, const StabilityOptions& opts = {});

/// Uniqueness from two precomputed cascades of the same problem.
MarginReport check_uniqueness(const CascadeResult& a, const CascadeResult& b, const FlowProblem& problem);
/// Certifies the problem (rescale), runs both cascades and compares their limits.
MarginReport check_uniqueness(const RoughPotential& phi0, const FlowProblem& problem, const TorusGrid& grid,
                              const FlowConfig& cfg, const RegularizationSchedule& first,
                              const RegularizationSchedule& second, const CascadeOptions& opts = {});

struct ConvergenceOptions {
    std::vector<double> times;        ///< decreasing ladder t_m; empty: cascade probe times sorted down
    double final_fraction = 1e-2;     ///< final distances must be <= fraction * Osc(phi0)
    double capacity_level = 0.0;      ///< threshold eps of the capacity mode (0: 0.05 Osc)
    int capacity_dictionary = 48;
    std::uint64_t seed = 7;
    bool use_extrapolated = false;
};

/// One report per applicable mode: L1, sup, capacity, energy.
std::vector<MarginReport> check_convergence_modes(const CascadeResult& cascade, const RoughPotential& phi0,
                                                  const FlowProblem& problem, const ConvergenceOptions& opts = {});

}  // namespace cmaf
