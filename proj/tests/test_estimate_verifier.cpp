#include <cmath>
#include <numbers>

#include "cmaflow/errors.hpp"
#include "cmaflow/estimate_verifier.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cmaf;

namespace {
constexpr double pi = std::numbers::pi;

FlowProblem flat_problem(const TorusGrid& g, DrivingTerm F, double T) {
    return FlowProblem{MetricPath::constant(HermMat::identity(g.n()), T), std::move(F), VolumeForm::uniform(g)};
}

FlowConfig geometric(double T, double ratio, double dt_max = kUnbounded) {
    FlowConfig c;
    c.T = T;
    c.ratio = ratio;
    c.dt_max = dt_max;
    return c;
}

ScalarField mode(const TorusGrid& g, double a) {
    return ScalarField::sample(g, [a](const Coord& x) { return a * std::cos(2 * pi * x[0]); });
}
}  // namespace

TEST_CASE("comparison: equality case and ordered constants") {
    TorusGrid g(1, 16, Backend::FiniteDifference);
    auto P = flat_problem(g, DrivingTerm::linear(1.0), 0.5);
    auto cfg = geometric(0.5, std::pow(2.0, 0.5));
    auto phi = run(mode(g, 0.02), P, cfg);
    auto same = check_comparison(phi, phi, 0.0);
    CHECK(same.margin == doctest::Approx(same.constant("tol_cmp")));
    CHECK(same.passed());

    auto lo = run(ScalarField(g, 0.4), P, cfg);
    auto hi = run(ScalarField(g, 0.5), P, cfg);
    auto r = check_comparison(lo, hi, 0.0);
    CHECK(r.passed());
    CHECK(r.constant("max_difference") <= 0.0);
    // the reversed pair violates the bound with lambda = 0 only by the initial gap
    CHECK(check_comparison(hi, lo, 0.0).passed());

    TorusGrid other(1, 32, Backend::FiniteDifference);
    auto far = run(ScalarField(other, 0.5), flat_problem(other, DrivingTerm::linear(1.0), 0.5), cfg);
    CHECK_THROWS_AS(check_comparison(lo, far, 0.0), MismatchedDiscretization);
}

TEST_CASE("comparison: injected subsolution defect") {
    TorusGrid g(1, 32, Backend::FiniteDifference);
    auto P = flat_problem(g, DrivingTerm::zero(), 0.1);
    auto psi = run(mode(g, 0.03), P, geometric(0.1, std::pow(2.0, 0.25)));
    FlowTrajectory phi = psi;
    const double eta = 0.01;
    for (auto& s : phi.snapshots)
        for (double& v : s.phi.values) v -= eta * s.t;
    // residual sign: phidot - rhs = -eta < 0 for the perturbed family
    const auto& last = phi.final();
    ScalarField pd = psi.final().phidot;
    for (double& v : pd.values) v -= eta;
    const auto rhs = flow_rhs(P, last.t, last.phi);
    double worst = -1.0;
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, pd[i] - rhs[i]);
    CHECK(worst < 0.0);
    CHECK(check_comparison(phi, psi, 0.0).passed());
    CHECK_FALSE(check_comparison(psi, phi, 0.0).passed());
}

TEST_CASE("a priori bounds") {
    TorusGrid g(1, 16);
    auto cfg = geometric(1.0, std::pow(2.0, 0.5));
    auto zero = run(ScalarField(g), flat_problem(g, DrivingTerm::zero(), 1.0), cfg);
    auto rep = check_apriori_bounds(zero, DrivingTerm::zero(), zero.problem.path, zero.problem.omega);
    REQUIRE(rep.size() == 2);
    CHECK(rep[0].constant("C") == 0.0);
    CHECK(rep[0].constant("delta") == 1.0);
    CHECK(rep[0].margin == 0.0);
    CHECK(rep[1].passed());

    auto five = run(ScalarField(g, 5.0), flat_problem(g, DrivingTerm::linear(1.0), 1.0), cfg);
    rep = check_apriori_bounds(five, five.problem.F, five.problem.path, five.problem.omega);
    CHECK(rep[0].passed());
    CHECK(rep[0].constant("C") == 0.0);
    // worst margin at t = 0, where the bound is attained
    CHECK(rep[0].margin == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("a priori lower bound on a kink") {
    TorusGrid g(1, 128, Backend::FiniteDifference);
    auto phi0 = RoughPotential::max_kink(1, 1.0 / (2 * pi * pi)).sample(g);
    auto cfg = geometric(0.1, std::pow(2.0, 0.5));
    cfg.t_min = 1e-3;
    auto traj = run(phi0, flat_problem(g, DrivingTerm::zero(), 0.1), cfg);
    auto rep = check_apriori_bounds(traj, DrivingTerm::zero(), traj.problem.path, traj.problem.omega);
    CHECK(rep[1].passed());
    CHECK(rep[1].constant("K") >= 0.0);
    CHECK(std::isfinite(rep[1].constant("K")));
}

TEST_CASE("time derivative bounds") {
    TorusGrid g(1, 8);
    auto cfg = geometric(1.0, std::pow(2.0, 0.5));
    auto zero = run(ScalarField(g), flat_problem(g, DrivingTerm::zero(), 1.0), cfg);
    auto rep = check_time_derivative(zero, 1e-2);
    REQUIRE(rep.size() == 2);
    CHECK(rep[0].constant("C_up") == 0.0);
    CHECK(rep[1].passed());

    auto c = run(ScalarField(g, 0.5), flat_problem(g, DrivingTerm::linear(1.0), 1.0), cfg);
    rep = check_time_derivative(c, 1e-2);
    CHECK(rep[0].passed());
    CHECK(rep[1].passed());
    CHECK(std::abs(rep[1].constant("slope")) < 0.2);
}

TEST_CASE("time derivative follows n log t on a degenerate kink") {
    // theta + H phi_0 vanishes off the kink, so min phidot ~ log t
    TorusGrid g(1, 128, Backend::FiniteDifference);
    auto phi0 = RoughPotential::parabola_kink(1).sample(g);
    auto cfg = geometric(0.1, std::pow(2.0, 0.25));
    cfg.t_min = 1e-4;
    auto traj = run(phi0, flat_problem(g, DrivingTerm::zero(), 0.1), cfg);
    TimeDerivativeOptions o;
    o.fit_from = 1e-3;
    o.fit_to = 1e-1;
    auto rep = check_time_derivative(traj, 1e-3, o);
    CHECK(rep[1].passed());
    CHECK(rep[1].constant("slope") >= 0.9);
    CHECK(rep[1].constant("slope") <= 1.3);
}

TEST_CASE("gradient and Laplacian") {
    TorusGrid g(1, 16);
    FlowConfig cfg = geometric(1.0, 2.0);
    auto zero = run(ScalarField(g), flat_problem(g, DrivingTerm::zero(), 1.0), cfg);
    auto rep = check_gradient_laplacian(zero);
    REQUIRE(rep.size() == 2);
    CHECK(rep[0].constant("C_g") == 0.0);
    CHECK(rep[1].constant("C") == doctest::Approx(0.0).epsilon(1e-14));

    TorusGrid h(1, 32);
    auto small = run(mode(h, 1e-3), flat_problem(h, DrivingTerm::zero(), 0.1), geometric(0.1, 2.0));
    rep = check_gradient_laplacian(small);
    CHECK(rep[0].constant("C_g") < 0.1);

    FlowConfig sparse = geometric(1.0, 1.5);
    auto no_pairs = run(ScalarField(g), flat_problem(g, DrivingTerm::zero(), 1.0), sparse);
    no_pairs.snapshots.resize(3);
    CHECK_THROWS_AS(check_gradient_laplacian(no_pairs), MissingSnapshots);
}

TEST_CASE("energy monotonicity") {
    TorusGrid g(1, 32);
    auto cfg = geometric(0.1, std::pow(2.0, 0.5), 5e-3);
    auto zero = run(ScalarField(g), flat_problem(g, DrivingTerm::zero(), 0.1), cfg);
    auto r = check_energy_monotonicity(zero, zero.problem.path, zero.problem.omega);
    CHECK(r.constant("C_E") == 0.0);
    CHECK(r.passed());

    const double a = 1e-3;
    auto single = run(mode(g, a), flat_problem(g, DrivingTerm::zero(), 0.1), cfg);
    r = check_energy_monotonicity(single, single.problem.path, single.problem.omega);
    CHECK(r.constant("C_E") == 0.0);
    CHECK(r.constant("E_initial") == doctest::Approx(oracle::energy_cos(a)).epsilon(1e-6));

    auto shifted = run(ScalarField(g, -1.0), flat_problem(g, DrivingTerm::linear(1.0), 0.1), cfg);
    r = check_energy_monotonicity(shifted, shifted.problem.path, shifted.problem.omega);
    CHECK(r.constant("C_E") == 0.0);
    CHECK(r.constant("E_final") == doctest::Approx(shifted.final().phi[0]).epsilon(1e-12));

    auto few = run(ScalarField(g), flat_problem(g, DrivingTerm::zero(), 0.1), geometric(0.1, 2.0));
    CHECK_THROWS_AS(check_energy_monotonicity(few, few.problem.path, few.problem.omega), MissingSnapshots);
}

TEST_CASE("stability: translation and perturbation") {
    TorusGrid g(1, 16, Backend::FiniteDifference);
    auto cfg = geometric(0.1, std::pow(2.0, 0.5));
    const auto phi0 = mode(g, 0.02);
    auto same = check_stability(phi0, phi0, flat_problem(g, DrivingTerm::zero(), 0.1), cfg);
    CHECK(same.constant("initial_distance") == 0.0);
    CHECK(same.passed());

    ScalarField up = phi0;
    for (double& v : up.values) v += 0.3;
    auto tr = check_stability(phi0, up, flat_problem(g, DrivingTerm::zero(), 0.1), cfg);
    CHECK(tr.passed());
    CHECK(tr.constant("contraction_margin") == doctest::Approx(tr.constant("tol_cmp")).epsilon(1e-9));

    // the margin is invariant under a common shift
    ScalarField phi1 = phi0, up1 = up;
    for (double& v : phi1.values) v += 0.1;
    for (double& v : up1.values) v += 0.1;
    auto tr1 = check_stability(phi1, up1, flat_problem(g, DrivingTerm::zero(), 0.1), cfg);
    CHECK(std::abs(tr1.margin - tr.margin) <= 1e-12);

    ScalarField bump = phi0;
    for (std::size_t i = 0; i < g.size(); ++i) bump[i] += 0.01 * std::cos(2 * pi * g.coord(i)[0]);
    auto p = check_stability(phi0, bump, flat_problem(g, DrivingTerm::linear(1.0), 0.1), cfg);
    CHECK(p.passed());
    CHECK(p.constant("C0_empirical") <= 1.0 + 1e-9);

    DrivingTerm neg = DrivingTerm::linear(-1.0);
    CHECK_THROWS_AS(check_stability(phi0, bump, flat_problem(g, neg, 0.1), cfg), PreconditionFailed);
}

TEST_CASE("uniqueness: smooth collapse and counterexample refusal") {
    TorusGrid g(1, 32, Backend::FiniteDifference);
    auto smooth = RoughPotential::fourier_sum(1, {FourierTerm{0.01, {1, 0, 0, 0}, 0.0}});
    FlowConfig cfg = geometric(0.05, std::pow(2.0, 0.5));
    cfg.probe_times = {0.05};
    auto P = flat_problem(g, DrivingTerm::zero(), 0.05);
    auto r = check_uniqueness(smooth, P, g, cfg, RegularizationSchedule::geometric(0.25, 0.5, 3),
                              RegularizationSchedule::geometric(1.0 / 3, 1.0 / 3, 3));
    CHECK(r.passed());
    CHECK(r.constant("difference") <= r.constant("tol_cmp"));

    auto bad = flat_problem(g, DrivingTerm::counterexample(), 0.05);
    CHECK_THROWS_AS(check_uniqueness(smooth, bad, g, cfg, RegularizationSchedule::geometric(0.25, 0.5, 3),
                                     RegularizationSchedule::geometric(1.0 / 3, 1.0 / 3, 3)),
                    PreconditionFailed);
}

TEST_CASE("convergence modes on a smooth start") {
    TorusGrid g(1, 32);
    const double a = 1e-3;
    auto phi0 = RoughPotential::fourier_sum(1, {FourierTerm{a, {1, 0, 0, 0}, 0.0}});
    FlowConfig cfg = geometric(0.016, std::pow(2.0, 0.25), 1e-3);
    cfg.probe_times = {0.016, 0.008, 0.004, 0.002, 0.001};
    auto P = flat_problem(g, DrivingTerm::zero(), 0.016);
    auto cas = run_cascade(phi0, RegularizationSchedule::geometric(0.25, 0.5, 3), g, P, cfg);
    CHECK(cas.collapsed);
    auto rep = check_convergence_modes(cas, phi0, P);
    REQUIRE(rep.size() == 3);
    CHECK(rep[0].check == "convergence-l1");
    CHECK(rep[1].check == "convergence-sup");
    CHECK(rep[2].check == "convergence-energy");
    for (const auto& r : rep) CHECK(r.passed());
    // energy gap of the linearized solution at t_M
    CHECK(rep[2].constant("final") ==
          doctest::Approx(oracle::energy_gap_single_mode(a, 0.001)).epsilon(0.05));
}

TEST_CASE("capacity mode on a bounded ladder") {
    TorusGrid g(1, 64, Backend::FiniteDifference);
    auto phi0 = RoughPotential::truncated_log_pole(1, 0.02, Coord{0.5, 0, 0, 0}, 0.05);
    REQUIRE(phi0.tag() == Regularity::Bounded);
    FlowConfig cfg = geometric(0.008, std::pow(2.0, 0.5));
    cfg.probe_times = {0.008, 0.004, 0.002, 0.001};
    auto P = flat_problem(g, DrivingTerm::zero(), 0.008);
    auto cas = run_cascade(phi0, RegularizationSchedule::geometric(0.25, 0.5, 3), g, P, cfg);
    auto rep = check_convergence_modes(cas, phi0, P);
    bool found = false;
    for (const auto& r : rep)
        if (r.check == "convergence-capacity") {
            found = true;
            CHECK(r.constant("ladder[2]") <= r.constant("ladder[0]"));
        }
    CHECK(found);
}

TEST_CASE("report serialization") {
    MarginReport r;
    r.check = "x";
    r.anchor = "a <= b";
    r.margin = -kUnbounded;
    r.t = 0.25;
    r.z = {0.5, 0, 0, 0};
    r.set("C", 1.5);
    r.set("C", 2.5);
    r.set("K", kUnbounded);
    const auto back = report_from_json(to_json(r));
    CHECK(back.check == "x");
    CHECK(back.margin == -kUnbounded);
    CHECK_FALSE(back.passed());
    CHECK(back.constant("C") == 2.5);
    CHECK(back.constant("K") == kUnbounded);
    CHECK(back.z[0] == 0.5);
    CHECK_THROWS_AS(back.constant("missing"), InvalidArgument);
    const auto csv = reports_to_csv({r});
    CHECK(csv.find("C=2.5;K=inf") != std::string::npos);
}
