// cmaflow: run, verify and inspect complex Monge-Ampere flows on flat tori.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmaflow/cli_reporting.hpp"
#include "cmaflow/errors.hpp"

namespace {

/// Loads --config, applying --seed and --out overrides.
std::optional<cmaf::RunConfig> load(const std::string& path, std::optional<std::uint64_t> seed, int& status) {
    try {
        nlohmann::json j;
        {
            std::ifstream is(path);
            if (!is) throw cmaf::ConfigError("cannot read " + path);
            j = nlohmann::json::parse(is);
        }
        if (seed) j["seed"] = *seed;
        return cmaf::RunConfig::from_json(j);
    } catch (const std::exception& e) {
        std::cerr << "config: " << e.what() << '\n';
        status = cmaf::kExitConfig;
        return std::nullopt;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parabolic complex Monge-Ampere flows on flat tori"};
    app.require_subcommand(1);

    std::string config, out, quantity;
    std::vector<std::string> checks, archives;
    std::optional<std::uint64_t> seed;
    double eps = 0.0;

    auto add_config = [&](CLI::App* c) {
        c->add_option("--config", config, "scenario JSON")->required()->check(CLI::ExistingFile);
        c->add_option("--out", out, "output directory (default: config 'out')");
        c->add_option("--seed", seed, "override the config seed");
    };
    auto* run = app.add_subcommand("run", "run a scenario and write its archive");
    add_config(run);
    run->add_option("--check", checks, "check to run on the archive (repeatable)");
    auto* reg = app.add_subcommand("regularize", "write the decreasing mollification ladder");
    add_config(reg);
    auto* nef = app.add_subcommand("nef", "run the eps-family of a nef start");
    add_config(nef);

    auto* verify = app.add_subcommand("verify", "check estimates on archives");
    verify->add_option("archives", archives, "archive directories")->required();
    verify->add_option("--check", checks, "check name (repeatable)")->required();
    verify->add_option("--out", out, "report directory")->default_val("reports");
    verify->add_option("--eps", eps, "start of the time-derivative window");

    auto* series = app.add_subcommand("series", "print a CSV time series");
    series->add_option("archive", archives, "archive directory")->required()->expected(1);
    series->add_option("--quantity", quantity, "quantity id")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cmaf::kExitConfig;
    }

    int status = cmaf::kExitOk;
    if (run->parsed() || reg->parsed() || nef->parsed()) {
        auto cfg = load(config, seed, status);
        if (!cfg) return status;
        if (run->parsed()) {
            for (const auto& c : checks) cfg->checks.push_back(c);
            try {
                nlohmann::json j = cfg->to_json();
                j["checks"] = cfg->checks;
                cfg = cmaf::RunConfig::from_json(j);
            } catch (const std::exception& e) {
                std::cerr << "config: " << e.what() << '\n';
                return cmaf::kExitConfig;
            }
        }
        const std::string dir = out.empty() ? cfg->out : out;
        if (run->parsed()) return cmaf::cmd_run(*cfg, dir, std::cout);
        if (reg->parsed()) return cmaf::cmd_regularize(*cfg, dir, std::cout);
        return cmaf::cmd_nef(*cfg, dir, std::cout);
    }
    if (verify->parsed()) {
        std::vector<cmaf::fs::path> paths(archives.begin(), archives.end());
        return cmaf::cmd_verify(paths, checks, out, std::cout, eps);
    }
    return cmaf::cmd_series(archives.front(), quantity, std::cout, std::cerr);
}
