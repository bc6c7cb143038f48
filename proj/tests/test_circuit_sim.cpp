#include "support.hpp"

#include "stacksim/circuit_sim.hpp"
#include "stacksim/errors.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace stacksim;

namespace {

double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// Rectangle sum over recorded step outputs up to time t_end.
double integrate_steps(const WaveformSet& w, const std::vector<double>& x, double t_end) {
    double s = 0.0;
    for (std::size_t j = 1; j < w.size() && w.time[j] <= t_end * (1.0 + 1e-12); ++j) s += x[j] * w.dt;
    return s;
}

}  // namespace

TEST_CASE("identical devices share the voltage equally") {
    const auto s = test::two_device();
    const auto r = simulate_turnoff(s, test::idle(s), SolverOpts{});
    REQUIRE(r.v_dsoff.size() == 2);
    CHECK(std::abs(r.v_dsoff[0] - r.v_dsoff[1]) / s.v_dc < 1e-4);
    CHECK(r.q_gd[0] == test::approx(r.q_gd[1]).epsilon(1e-4));
}

TEST_CASE("off state splits the bus through the balancing resistors") {
    auto s = test::two_device();
    s.devices.push_back(s.devices[1]);
    const auto st = off_state(s);
    CHECK(st.v_ds[0] == test::approx(st.v_ds[1]).epsilon(1e-6));
    CHECK(st.v_ds[1] == test::approx(st.v_ds[2]).epsilon(1e-6));
    const double i = s.v_dc / (3 * s.static_balance_r + s.load_resistance());
    CHECK(total(st.v_ds) + i * s.load_resistance() == test::approx(s.v_dc).epsilon(0.01));
    for (double v : st.v_gs) CHECK(v == test::approx(s.rails.v_ee));
}

TEST_CASE("on state conducts the resistive load current") {
    const auto s = test::two_device();
    const auto st = on_state(s);
    const double i = s.v_dc / s.load_resistance();
    CHECK(st.i_load == test::approx(i).epsilon(0.01));
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(st.v_gs[k] == test::approx(s.rails.v_dd).epsilon(1e-6));
        CHECK(st.v_ds[k] < 5.0 * i * s.devices[k].device.r_ds_on);
    }
}

TEST_CASE("loop voltages add up after turn-off") {
    const auto s = test::two_device(25e-9, 50e-12);
    const auto r = simulate_turnoff(s, test::idle(s), SolverOpts{});
    const auto& w = r.waveform;
    for (std::size_t j : {w.size() / 2, w.size() - 1}) {
        const double sum = w.devices[0].v_ds[j] + w.devices[1].v_ds[j];
        CHECK(sum + w.i_d[j] * s.load_resistance() == test::approx(s.v_dc).epsilon(0.01));
    }
}

TEST_CASE("gate-drain charge matches the integrated displacement current") {
    const auto s = test::two_device(10e-9, 50e-12);
    const SolverOpts opts;
    const auto r = simulate_turnoff(s, test::idle(s), opts);
    for (std::size_t k = 0; k < 2; ++k) {
        const auto& ch = r.waveform.devices[k];
        const double q = integrate_steps(r.waveform, ch.i_gd, opts.fine_window);
        CHECK(q == test::approx(r.q_gd[k]).epsilon(0.02));
    }
}

TEST_CASE("net gate current balances the stored gate charge") {
    const auto s = test::two_device(10e-9, 50e-12);
    const SolverOpts opts;
    const auto r = simulate_turnoff(s, test::idle(s), opts);
    for (std::size_t k = 0; k < 2; ++k) {
        const auto& p = s.devices[k].device;
        const auto& ch = r.waveform.devices[k];
        const double q_in = integrate_steps(r.waveform, ch.i_g, opts.fine_window);
        const double expect =
            p.c_gs * (r.final_state.v_gs[k] - r.initial.v_gs[k]) - r.q_gd[k];
        CHECK(q_in == test::approx(expect).epsilon(0.02));
    }
}

TEST_CASE("halving the time step barely moves the off-state voltages") {
    const auto s = test::two_device(25e-9, 50e-12);
    SolverOpts a;
    SolverOpts b = a;
    b.dt = a.dt / 2.0;
    const auto ra = simulate_turnoff(s, test::idle(s), a);
    const auto rb = simulate_turnoff(s, test::idle(s), b);
    for (std::size_t k = 0; k < 2; ++k) CHECK(ra.v_dsoff[k] == test::approx(rb.v_dsoff[k]).epsilon(1e-3));
}

TEST_CASE("drain slope follows the plateau estimate") {
    const auto s = test::two_device();
    const auto r = simulate_turnoff(s, test::idle(s), SolverOpts{}, 20.0);
    const auto& w = r.waveform;
    const auto& v = w.devices[0].v_ds;
    const double v_end = r.v_dsoff[0];
    std::size_t a = 0;
    while (v[a] < 0.1 * v_end) ++a;
    std::size_t b = a;
    while (v[b] < 0.3 * v_end) ++b;
    const double slope = (v[b] - v[a]) / (w.time[b] - w.time[a]);
    const auto& p = s.devices[0].device;
    const double vm = 0.5 * (v[a] + v[b]);
    const double i_d = 0.5 * (w.i_d[a] + w.i_d[b]);
    const double est = dvdt_rate(p, i_d, s.devices[0].gate_resistance(), s.rails.v_ee,
                                 gate_drain_capacitance(p, vm), drain_source_capacitance(p, vm));
    CHECK(slope == test::approx(est).epsilon(0.35));
}

TEST_CASE("driver skew loads the device that turns off first") {
    const auto s = test::two_device(25e-9, 0.0);
    const auto r = simulate_turnoff(s, test::idle(s), SolverOpts{});
    CHECK(r.v_dsoff[1] > r.v_dsoff[0] + 100.0);
    CHECK(r.q_gd[1] > r.q_gd[0]);
}

TEST_CASE("isolation capacitance loads the upper device") {
    const auto s = test::two_device(0.0, 50e-12);
    const auto r = simulate_turnoff(s, test::idle(s), SolverOpts{});
    CHECK(r.v_dsoff[1] > r.v_dsoff[0]);
}

TEST_CASE("extra gate discharge on the lagging device reduces the imbalance") {
    const auto s = test::two_device(25e-9, 0.0);
    const auto base = simulate_turnoff(s, test::idle(s), SolverOpts{});
    auto drive = test::idle(s);
    drive[0].injection = GatePulse{0.0, 100e-9, 0.2};
    const auto r = simulate_turnoff(s, drive, SolverOpts{});
    CHECK(r.v_dsoff[1] - r.v_dsoff[0] < base.v_dsoff[1] - base.v_dsoff[0]);
}

TEST_CASE("skew discharge deviation") {
    CHECK(delta_q_delay(20.0, 3.615, 15.0, 25e-9) == test::approx((20.0 - 3.615) / 15.0 * 25e-9));
    CHECK(delta_q_delay(20.0, 3.615, 15.0, 0.0) == 0.0);
    CHECK(delta_q_delay(20.0, 3.61, 15.0, 10e-9) * 1e9 == test::approx(10.93).epsilon(0.005 / 10.93));
    CHECK_THROWS_AS(delta_q_delay(20.0, 3.615, 0.0, 1e-9), InvalidInput);
    CHECK_THROWS_AS(delta_q_delay(20.0, 3.615, 15.0, -1e-9), InvalidInput);
}

TEST_CASE("isolation capacitance discharge deviation") {
    const auto d = delta_q_cp(50e-12, 50e-12, 500.0, 20.0, -5.0, 0.04, 20.0);
    CHECK(d.simplified == test::approx(50e-12 * 500.0));
    CHECK(d.full == test::approx(50e-12 * ((500.0 - 5.0) - (20.0 + 0.8)) - 50e-12 * (-25.0)));
    CHECK_THROWS_AS(delta_q_cp(-1e-12, 0.0, 500.0, 20.0, -5.0, 0.04, 20.0), InvalidInput);
}

TEST_CASE("settling cycle is the start of the final run below threshold") {
    auto rec = [](int c, double a) {
        CycleRecord r;
        r.cycle = c;
        r.alpha = a;
        return r;
    };
    CHECK(settling_cycle({rec(1, 0.3), rec(2, 0.04), rec(3, 0.06), rec(4, 0.02), rec(5, 0.01)}, 0.05) == 4);
    CHECK(settling_cycle({rec(1, 0.01), rec(2, 0.01)}, 0.05) == 1);
    CHECK_FALSE(settling_cycle({rec(1, 0.01), rec(2, 0.2)}, 0.05).has_value());
    CHECK_FALSE(settling_cycle({}, 0.05).has_value());
}

TEST_CASE("closed loop rejects an infeasible sampling window") {
    auto s = test::two_device(25e-9, 0.0);
    s.duty = 0.99;
    const std::vector<GateDriveConfig> drives(2);
    const std::vector<ControllerState> ctl(2);
    CHECK_THROWS_AS(simulate_cycles(s, drives, ctl, 1, SolverOpts{}), Infeasible);
}

TEST_CASE("regulator output reaches the sink one cycle later") {
    const auto b = test::bundled("resistive");
    const auto r = simulate_cycles(b.scenario, b.drives, b.controllers, 3, b.solver);
    REQUIRE(r.cycles.size() == 3);
    for (double v : r.cycles[0].v_daout) CHECK(v == 0.0);
    for (std::size_t k = 0; k < 2; ++k)
        CHECK(r.cycles[1].v_daout[k] == test::approx(dac_out(b.drives[k], r.cycles[0].v_o[k])));
    CHECK(r.cycles[2].alpha < r.cycles[0].alpha);
}

TEST_CASE("open loop keeps the sink idle") {
    const auto b = test::bundled("resistive");
    const auto r = simulate_cycles(b.scenario, b.drives, b.controllers, 2, b.solver, false);
    for (const auto& c : r.cycles)
        for (double v : c.v_daout) CHECK(v == 0.0);
    CHECK(r.cycles[1].alpha == test::approx(r.cycles[0].alpha).epsilon(0.02));
}

TEST_CASE("input validation") {
    auto s = test::two_device();
    SolverOpts o;
    o.dt = 0.0;
    CHECK_THROWS_AS(simulate_turnoff(s, test::idle(s), o), InvalidInput);
    CHECK_THROWS_AS(simulate_turnoff(s, std::vector<DriveCommand>(1), SolverOpts{}), InvalidInput);
    s.devices.clear();
    CHECK_THROWS_AS(s.validate(), InvalidInput);
}
