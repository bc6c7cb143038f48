#include "support.hpp"

#include "stacksim/analysis.hpp"
#include "stacksim/errors.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace stacksim;

TEST_CASE("imbalance ratio") {
    CHECK(imbalance_ratio({338.5, 661.5}, 1000.0) == test::approx(0.323));
    CHECK(imbalance_ratio({500.0, 500.0}, 1000.0) == 0.0);
    CHECK(imbalance_ratio({250.0, 1000.0 / 3.0, 1250.0 / 3.0}, 1000.0) == test::approx(1.0 / 6.0));
    CHECK_THROWS_AS(imbalance_ratio({1000.0}, 1000.0), InvalidInput);
    CHECK_THROWS_AS(imbalance_ratio({1.0, 2.0}, 0.0), InvalidInput);
}

TEST_CASE("imbalance ratio ignores order and scales with the bus") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.0, 600.0);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> v(4);
        for (auto& x : v) x = u(rng);
        const double a = imbalance_ratio(v, 1200.0);
        auto p = v;
        std::shuffle(p.begin(), p.end(), rng);
        CHECK(imbalance_ratio(p, 1200.0) == a);
        for (auto& x : p) x *= 2.5;
        CHECK(imbalance_ratio(p, 3000.0) == test::approx(a, 1e-12));
    }
}

TEST_CASE("alignment with zero offset is the identity") {
    const std::vector<double> v{1, 2, 3, 4}, i{5, 6, 7, 8};
    const auto [va, ia] = align_vi(v, i, 1e-9, 0.0);
    CHECK(va == v);
    CHECK(ia == i);
}

TEST_CASE("alignment shifts the current and shifts back") {
    std::vector<double> v(200, 1.0), i(200);
    for (std::size_t n = 0; n < i.size(); ++n) i[n] = std::sin(0.05 * static_cast<double>(n));
    const double dt = 1e-9;
    const auto [v1, later] = align_vi(v, i, dt, 3e-9);
    CHECK(later[50] == test::approx(i[47], 1e-12));
    const auto [v2, back] = align_vi(v, later, dt, -3e-9);
    for (std::size_t n = 10; n < 190; ++n) CHECK(back[n] == test::approx(i[n], 1e-12));
    // Half-sample shift interpolates linearly.
    const auto [v3, half] = align_vi(v, i, dt, 0.5e-9);
    CHECK(half[20] == test::approx(0.5 * (i[19] + i[20]), 1e-12));
    CHECK_THROWS_AS(align_vi(v, i, dt, 1e-6), InvalidInput);
}

TEST_CASE("energy of a linear crossover") {
    // v rises 0 -> V while i falls I -> 0 over T: E = V I T / 6.
    const double V = 600.0, I = 20.0, T = 100e-9, dt = 0.1e-9;
    const auto n = static_cast<std::size_t>(std::lround(T / dt)) + 1;
    std::vector<double> v(n), i(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double x = static_cast<double>(k) / static_cast<double>(n - 1);
        v[k] = V * x;
        i[k] = I * (1.0 - x);
    }
    CHECK(integrate_power(v, i, 0.0, dt, {0.0, T}) == test::approx(V * I * T / 6.0).epsilon(0.01));
}

TEST_CASE("energy of a rectangle and window additivity") {
    const double dt = 1e-9;
    std::vector<double> v(2001, 100.0), i(2001, 10.0);
    CHECK(integrate_power(v, i, 0.0, dt, {0.0, 1e-6}) == test::approx(1e-3));
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = 100.0 + 0.1 * static_cast<double>(k % 37);
    const double whole = integrate_power(v, i, 0.0, dt, {0.2e-6, 1.7e-6});
    const double parts = integrate_power(v, i, 0.0, dt, {0.2e-6, 0.8355e-6}) +
                         integrate_power(v, i, 0.0, dt, {0.8355e-6, 1.7e-6});
    CHECK(parts == test::approx(whole, 1e-12));
    CHECK_THROWS_AS(integrate_power(v, i, 0.0, dt, {0.0, 3e-6}), InvalidInput);
}

TEST_CASE("sweep rows are deterministic across thread counts") {
    const auto b = test::bundled("sweep");
    REQUIRE_FALSE(b.sweeps.empty());
    auto spec = b.sweeps.front();
    REQUIRE(spec.axis == SweepAxis::DeltaQGoff);
    spec.grid = {0.0, 10e-9, 20e-9};
    const auto one = run_sweep(spec, 1);
    const auto two = run_sweep(spec, 2);
    const auto n = spec.base.n();
    CHECK(sweep_csv(one, n) == sweep_csv(two, n));
    CHECK(sweep_csv(one, n) == sweep_csv(run_sweep(spec, 1), n));
    REQUIRE(one.size() == 3);
    for (const auto& r : one) CHECK(r.ok);
    CHECK(one[0].alpha < 0.01);
    CHECK(one[1].alpha > one[0].alpha);
    CHECK(one[2].alpha > one[1].alpha);
}

TEST_CASE("failed sweep points are reported per row") {
    auto spec = test::bundled("sweep").sweeps.front();
    spec.grid = {0.0, 5e-9};
    spec.opts.max_newton = 1;
    spec.opts.v_tol = 1e-30;
    spec.opts.i_tol = 1e-30;
    const auto rows = run_sweep(spec, 1);
    REQUIRE(rows.size() == 2);
    CHECK_FALSE(rows[0].ok);
    CHECK_FALSE(rows[0].error.empty());
    CHECK(sweep_csv(rows, spec.base.n()).find("error: ") != std::string::npos);
}

TEST_CASE("sweep specification validation") {
    auto spec = test::bundled("sweep").sweeps.front();
    spec.grid = {2.0, 1.0};
    CHECK_THROWS_AS(spec.validate(), InvalidInput);
    spec.grid = {};
    CHECK_THROWS_AS(spec.validate(), InvalidInput);
    CHECK_THROWS_AS(sweep_axis_from_string("current"), InvalidInput);
    CHECK(sweep_axis_from_string(to_string(SweepAxis::BusVoltage)) == SweepAxis::BusVoltage);
}

TEST_CASE("switching energy converges with the time step") {
    const auto b = test::bundled("dpt");
    REQUIRE(b.dpt.has_value());
    std::vector<DriveCommand> drive(b.scenario.n());
    for (std::size_t k = 0; k < drive.size(); ++k) drive[k].config = b.drives[k];
    const TurnOnPhase ph{b.dpt->t_gap, b.dpt->t_after};
    auto energy = [&](double dt) {
        SolverOpts o = b.solver;
        o.dt = dt;
        const auto r = simulate_off_on(b.scenario, drive, o, b.dpt->i_test, ph);
        return switching_energy(r.waveform, {0.0, o.fine_window}, {ph.t_gap, ph.t_gap + ph.t_after}, 0.0);
    };
    const auto a = energy(b.solver.dt);
    const auto h = energy(b.solver.dt / 2.0);
    CHECK(a.e_off_total == test::approx(h.e_off_total).epsilon(0.005));
    CHECK(a.e_on_total == test::approx(h.e_on_total).epsilon(0.005));
    CHECK(a.e_off_total > 0.0);
    CHECK(a.e_on_total > 0.0);
}

TEST_CASE("plot script names its inputs") {
    const auto s = plot_script("waveform", {"waveform.csv"});
    CHECK(s.find("waveform.csv") != std::string::npos);
    CHECK(s.rfind("#!/usr/bin/env python3", 0) == 0);
}
