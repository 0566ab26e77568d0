#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmaflow/estimate_verifier.hpp"
#include "cmaflow/flow_engine.hpp"
#include "json.hpp"

namespace cmaf {

namespace fs = std::filesystem;

/// Exit statuses of the command-line front end.
enum ExitStatus : int { kExitOk = 0, kExitConfig = 2, kExitNumeric = 3 };

/// Scenario declaration. Parsed from one JSON document; unknown keys are rejected.
struct RunConfig {
    std::string name = "scenario";
    int n = 1;
    int resolution = 64;
    Backend backend = Backend::Spectral;
    nlohmann::json metric;    ///< {kind: constant|affine|nef, theta, slope, eps}
    nlohmann::json volume;    ///< {kind: uniform|cosine, value, amplitude}
    nlohmann::json driving;   ///< {kind: zero|constant|linear|affine|tanh|counterexample, ...}
    nlohmann::json initial;   ///< {kind: constant|fourier|random-fourier|max-kink|..., ...} or {kind: snapshot, path}
    FlowConfig flow;
    std::optional<RegularizationSchedule> cascade;
    std::optional<RegularizationSchedule> cascade_alt;  ///< second schedule for uniqueness checks
    double cascade_tolerance_factor = 1e-7;
    std::vector<double> nef_eps{0.1, 0.05, 0.025};
    std::vector<std::string> checks;
    std::string out = "out";
    std::uint64_t seed = 0;
    nlohmann::json source;  ///< normalized document (hashed)

    static RunConfig from_json(const nlohmann::json& j);  ///< throws ConfigError
    static RunConfig load(const fs::path& path);
    nlohmann::json to_json() const { return source; }
    std::string hash() const;  ///< FNV-1a 64 of the normalized document, hex

    TorusGrid grid() const;
    FlowProblem problem() const;
    RoughPotential potential() const;
    bool is_nef() const;
};

/// FNV-1a 64-bit.
std::uint64_t fnv1a(const std::string& bytes);

// ---------------------------------------------------------------- snapshots

/// Raw little-endian binary64 values plus a JSON sidecar {grid, t, ...} at path + ".json".
void write_field(const fs::path& bin, const ScalarField& f, const nlohmann::json& meta = {});
ScalarField read_field(const fs::path& bin);

nlohmann::json to_json(const StepDiagnostics& d);
StepDiagnostics diagnostics_from_json(const nlohmann::json& j);

/// Archive directory: manifest.json + snapshots/phi_KKKK.bin (+ phidot_KKKK.bin).
void write_archive(const fs::path& dir, const FlowTrajectory& traj, const RunConfig& cfg,
                   const nlohmann::json& extra = nlohmann::json::object());
struct Archive {
    RunConfig config;
    FlowTrajectory trajectory;
    nlohmann::json manifest;
};
Archive read_archive(const fs::path& dir);

// ---------------------------------------------------------------- series

std::vector<std::string> series_quantities();
/// (t, value) per stored snapshot; throws InvalidArgument for unknown quantities.
std::vector<std::pair<double, double>> series(const FlowTrajectory& traj, const std::string& quantity);
std::string series_csv(const std::vector<std::pair<double, double>>& s);

// ---------------------------------------------------------------- commands

/// Each command logs to `log` and returns an ExitStatus.
int cmd_run(const RunConfig& cfg, const fs::path& out, std::ostream& log);
int cmd_verify(const std::vector<fs::path>& archives, const std::vector<std::string>& checks, const fs::path& out,
               std::ostream& log, double eps = 0.0);
int cmd_series(const fs::path& archive, const std::string& quantity, std::ostream& csv, std::ostream& log);
int cmd_regularize(const RunConfig& cfg, const fs::path& out, std::ostream& log);
int cmd_nef(const RunConfig& cfg, const fs::path& out, std::ostream& log);

/// Maps a library exception to its exit status.
int exit_status_for(const std::exception& e);

std::vector<std::string> known_checks();

}  // namespace cmaf
