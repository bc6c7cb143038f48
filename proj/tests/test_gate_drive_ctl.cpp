#include "support.hpp"

#include "stacksim/errors.hpp"
#include "stacksim/gate_drive_ctl.hpp"

#include <doctest.h>

#include <cmath>

using namespace stacksim;

namespace {

// Device-side reference for the default divider and v_ds_star.
double reference(const GateDriveConfig& cfg, const ControllerState& st) {
    return st.v_ds_star / cfg.sampler.divider_k;
}

}  // namespace

TEST_CASE("sink transconductance from the sink resistors") {
    GateDriveConfig cfg;
    cfg.sink.r3 = 4.0;
    cfg.sink.r4 = 1e3;
    cfg.sink.r5 = 1e3;
    CHECK(sink_current(cfg, 2.6, 10.0, -5.0) == test::approx(0.65).epsilon(1e-3 / 0.65));
    CHECK(sink_current(cfg, 0.0, 10.0, -5.0) == 0.0);
    CHECK_THROWS_AS(sink_current(cfg, 5.0, 10.0, -5.0), InvalidInput);
    CHECK_THROWS_AS(sink_current(cfg, -0.1, 10.0, -5.0), InvalidInput);
}

TEST_CASE("sink collapses as the gate reaches the negative rail") {
    GateDriveConfig cfg;
    CHECK(sink_current(cfg, 3.0, -5.0, -5.0) == 0.0);
    const double full = sink_current(cfg, 3.0, 0.0, -5.0);
    const double part = sink_current(cfg, 3.0, -4.8, -5.0);
    CHECK(part > 0.0);
    CHECK(part < full);
    CHECK(full == test::approx(3.0 / 3.6));
}

TEST_CASE("trigger windows follow the falling edge") {
    GateDriveConfig cfg;
    const auto s = schedule_triggers(cfg, 1e-6);
    CHECK(s.ctrl_start == test::approx(1e-6 + 12.6e-9));
    CHECK(s.ctrl_end == test::approx(1e-6 + 12.6e-9 + 125e-9));
    CHECK(s.sample_time == test::approx(1.5e-6));
    CHECK(s.ctrl_active(1.05e-6));
    CHECK_FALSE(s.ctrl_active(1.2e-6));
}

TEST_CASE("ADC quantization") {
    GateDriveConfig cfg;
    const auto a = sample_vds(cfg, 500.0);
    CHECK(a.code == 2038);  // round(500 * 2/402 / (5/4096))
    CHECK(a.device_volts(cfg.sampler) == test::approx(2038 * 5.0 / 4096 * 201.0));
    CHECK(sample_vds(cfg, 0.0).code == 0);
    CHECK(sample_vds(cfg, 5000.0).code == 4095);
}

TEST_CASE("DAC quantization, clamp and latency") {
    GateDriveConfig cfg;
    const double lsb = 5.0 / 256.0;
    CHECK(cfg.sampler.dac_lsb() == test::approx(lsb));
    CHECK(dac_out(cfg, 0.0) == 0.0);
    CHECK(dac_out(cfg, 1.0) == test::approx(51 * lsb));
    CHECK(dac_out(cfg, 4.9) == test::approx(245 * lsb));
    CHECK(dac_out(cfg, 4.9) <= cfg.v_da_max);
    CHECK(cfg.sampler.latency() == test::approx(5.03e-6).epsilon(1e-12));
}

TEST_CASE("large error takes the first step") {
    GateDriveConfig cfg;
    ControllerState st;
    const auto out = regulator_update(st, cfg, reference(cfg, st) - 300.0);
    CHECK(out.v_o == test::approx(2.0));
    CHECK(out.state.mode == RegulatorMode::Step);
    CHECK(out.state.last_error == test::approx(300.0));
}

TEST_CASE("step sizes shrink with the error and hand over to PI") {
    GateDriveConfig cfg;
    ControllerState st;
    auto out = regulator_update(st, cfg, reference(cfg, st) - 100.0);
    CHECK(out.v_o == test::approx(0.7));
    out = regulator_update(out.state, cfg, reference(cfg, st) - 40.0);
    CHECK(out.v_o == test::approx(0.9));
    CHECK(out.state.mode == RegulatorMode::Step);
    out = regulator_update(out.state, cfg, reference(cfg, st) - 10.0);
    CHECK(out.state.mode == RegulatorMode::PI);
    CHECK(out.v_o - 0.9 == test::approx(0.01 * 10.0 + 0.002 * 10.0));
}

TEST_CASE("PI at zero error is a fixed point") {
    GateDriveConfig cfg;
    ControllerState st;
    st.mode = RegulatorMode::PI;
    st.v_o = st.v_o_base = 1.5;
    const auto a = regulator_update(st, cfg, reference(cfg, st));
    CHECK(a.v_o == test::approx(1.5));
    const auto b = regulator_update(a.state, cfg, reference(cfg, st));
    CHECK(b.v_o == test::approx(1.5));
    CHECK(std::abs(b.state.integral) < 1e-9);
}

TEST_CASE("negative error never drives the output below zero") {
    GateDriveConfig cfg;
    ControllerState st;
    const auto out = regulator_update(st, cfg, reference(cfg, st) + 150.0);
    CHECK(out.v_o == 0.0);
    CHECK(out.state.mode == RegulatorMode::PI);
}

TEST_CASE("PI re-arms the step regulator on a large error") {
    GateDriveConfig cfg;
    ControllerState st;
    st.mode = RegulatorMode::PI;
    st.v_o = st.v_o_base = 1.0;
    const auto out = regulator_update(st, cfg, reference(cfg, st) - 250.0);
    CHECK(out.state.mode == RegulatorMode::Step);
    CHECK(out.v_o == test::approx(3.0));
}

TEST_CASE("integral freezes while the output is clamped") {
    GateDriveConfig cfg;
    ControllerState st;
    st.mode = RegulatorMode::PI;
    st.v_o = st.v_o_base = 4.7;
    auto out = regulator_update(st, cfg, reference(cfg, st) - 20.0);
    CHECK(out.v_o == test::approx(cfg.v_da_max));
    CHECK(out.state.integral == 0.0);
    out = regulator_update(out.state, cfg, reference(cfg, st) - 20.0);
    CHECK(out.state.integral == 0.0);
    // An error of the opposite sign pulls out of saturation immediately.
    out = regulator_update(out.state, cfg, reference(cfg, st) + 20.0);
    CHECK(out.v_o < cfg.v_da_max);
}

TEST_CASE("sampling window bounds") {
    GateDriveConfig cfg;
    auto v = check_timing_budget(cfg, 40e3, 0.9, 125e-9);
    CHECK(v.ok);
    CHECK(v.t_st_lower == test::approx(125e-9));
    CHECK(v.t_st_upper == test::approx(1.25e-6));

    v = check_timing_budget(cfg, 20e3, 0.9, 125e-9);
    CHECK(v.t_st_upper == test::approx(3.75e-6));

    v = check_timing_budget(cfg, 40e3, 0.99, 125e-9);
    CHECK_FALSE(v.ok);
    CHECK(v.t_st_upper < v.t_st_lower);
    CHECK_FALSE(v.violation.empty());

    cfg.trigger.t_st = 100e-9;
    v = check_timing_budget(cfg, 40e3, 0.9, 125e-9);
    CHECK_FALSE(v.ok);
    CHECK(v.violation.find("lower bound") != std::string::npos);
}

TEST_CASE("controller latency must fit in the period") {
    GateDriveConfig cfg;
    const auto v = check_timing_budget(cfg, 200e3, 0.1, 125e-9);
    CHECK_FALSE(v.ok);
}

TEST_CASE("configuration validation") {
    GateDriveConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.sink.r3 = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    ControllerState st;
    CHECK_NOTHROW(st.validate());
    st.e_th2 = 300.0;
    CHECK_THROWS_AS(st.validate(), InvalidInput);
}
