#include "stacksim/gate_drive_ctl.hpp"

#include "stacksim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stacksim {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw InvalidInput(msg);
}

bool positive(double x) { return x > 0.0 && std::isfinite(x); }

}  // namespace

double SamplerConfig::adc_lsb() const { return adc_vref / std::ldexp(1.0, adc_bits); }
double SamplerConfig::dac_lsb() const { return dac_vref / std::ldexp(1.0, dac_bits); }

void GateDriveConfig::validate() const {
    require(positive(sink.r1) && positive(sink.r2) && positive(sink.r3) && positive(sink.r4) && positive(sink.r5),
            "gate_drive.sink: resistances must be > 0");
    require(sink.prop_delay >= 0.0, "gate_drive.sink.prop_delay must be >= 0");
    require(sink.v_ce1_sat >= 0.0 && sink.v_ce3_sat >= 0.0, "gate_drive.sink: saturation voltages must be >= 0");
    require(positive(trigger.t_st), "gate_drive.trigger.t_st must be > 0");
    require(positive(trigger.t_ctrl), "gate_drive.trigger.t_ctrl must be > 0");
    require(trigger.prop_delay >= 0.0, "gate_drive.trigger.prop_delay must be >= 0");
    require(sampler.divider_k > 0.0 && sampler.divider_k < 1.0, "gate_drive.sampler.divider_k must be in (0,1)");
    require(sampler.adc_bits >= 8 && sampler.adc_bits <= 16, "gate_drive.sampler.adc_bits must be in 8..16");
    require(sampler.dac_bits >= 8 && sampler.dac_bits <= 16, "gate_drive.sampler.dac_bits must be in 8..16");
    require(positive(sampler.adc_vref) && positive(sampler.dac_vref), "gate_drive.sampler: references must be > 0");
    require(sampler.adc_conv_time >= 0.0 && sampler.algo_time >= 0.0 && sampler.dac_settle >= 0.0 &&
                sampler.dac_prop >= 0.0,
            "gate_drive.sampler: delays must be >= 0");
    require(positive(v_da_max), "gate_drive.v_da_max must be > 0");
}

std::string to_string(RegulatorMode m) { return m == RegulatorMode::Step ? "STEP" : "PI"; }

void ControllerState::validate() const {
    require(e_th1 > e_th2 && e_th2 > e_th3 && e_th3 > 0.0, "controller: require e_th1 > e_th2 > e_th3 > 0");
    require(v_th1 > v_th2 && v_th2 > v_th3 && v_th3 > 0.0, "controller: require v_th1 > v_th2 > v_th3 > 0");
    require(k_p >= 0.0 && k_i >= 0.0, "controller: gains must be >= 0");
    require(v_ds_star > 0.0, "controller: v_ds_star must be > 0");
    require(v_o >= 0.0, "controller: v_o must be >= 0");
}

double sink_gate_factor(const SinkConfig& sink, double v_gs, double v_ee) {
    const double m = sink.saturation_margin();
    const double x = v_gs - v_ee;
    if (m <= 0.0) return x > 0.0 ? 1.0 : 0.0;
    const double u = std::clamp(x / m, 0.0, 1.0);
    return u * u * (3.0 - 2.0 * u);
}

double sink_gate_factor_slope(const SinkConfig& sink, double v_gs, double v_ee) {
    const double m = sink.saturation_margin();
    if (m <= 0.0) return 0.0;
    const double u = (v_gs - v_ee) / m;
    if (u <= 0.0 || u >= 1.0) return 0.0;
    return 6.0 * u * (1.0 - u) / m;
}

double sink_current(const GateDriveConfig& cfg, double v_ctrl, double v_gs, double v_ee) {
    require(v_ctrl >= 0.0, "sink_current: v_ctrl must be >= 0");
    require(v_ctrl <= cfg.v_da_max, "sink_current: v_ctrl exceeds v_da_max");
    return cfg.sink.transconductance() * v_ctrl * sink_gate_factor(cfg.sink, v_gs, v_ee);
}

TriggerSchedule schedule_triggers(const GateDriveConfig& cfg, double fall_time) {
    require(fall_time >= 0.0, "schedule_triggers: fall_time must be >= 0");
    TriggerSchedule s;
    s.fall_time = fall_time;
    s.ctrl_start = fall_time + cfg.trigger.prop_delay;
    s.ctrl_end = s.ctrl_start + cfg.trigger.t_ctrl;
    s.sample_time = fall_time + cfg.trigger.t_st;
    return s;
}

AdcSample sample_vds(const GateDriveConfig& cfg, double v_ds) {
    const auto& s = cfg.sampler;
    const double lsb = s.adc_lsb();
    const int max_code = (1 << s.adc_bits) - 1;
    const double scaled = std::clamp(s.divider_k * std::max(v_ds, 0.0), 0.0, s.adc_vref);
    AdcSample out;
    out.code = std::min(static_cast<int>(std::lround(scaled / lsb)), max_code);
    out.volts = out.code * lsb;
    return out;
}

RegulatorOutput regulator_update(const ControllerState& st, const GateDriveConfig& cfg, double measured) {
    require(measured >= 0.0, "regulator_update: measurement must be >= 0");
    ControllerState s = st;
    const double e = s.v_ds_star / cfg.sampler.divider_k - measured;
    s.last_error = e;

    if (s.mode == RegulatorMode::PI && std::abs(e) > s.e_th1) s.mode = RegulatorMode::Step;

    if (s.mode == RegulatorMode::Step) {
        if (e > s.e_th1) {
            s.v_o += s.v_th1;
        } else if (e > s.e_th2) {
            s.v_o += s.v_th2;
        } else if (e > s.e_th3) {
            s.v_o += s.v_th3;
        } else {
            s.mode = RegulatorMode::PI;
            s.v_o_base = s.v_o;
            s.integral = 0.0;
        }
        s.v_o = std::clamp(s.v_o, 0.0, cfg.v_da_max);
    }

    if (s.mode == RegulatorMode::PI) {
        const double integral = s.integral + e;
        const double u = s.v_o_base + s.k_p * e + s.k_i * integral;
        if (u > cfg.v_da_max) {
            // Conditional integration: hold the integral while it pushes into the clamp.
            if (e < 0.0) s.integral = integral;
            s.v_o = cfg.v_da_max;
        } else if (u < 0.0) {
            if (e > 0.0) s.integral = integral;
            s.v_o = 0.0;
        } else {
            s.integral = integral;
            s.v_o = u;
        }
    }
    return {s, s.v_o};
}

double dac_out(const GateDriveConfig& cfg, double v_o) {
    require(v_o >= 0.0, "dac_out: v_o must be >= 0");
    const auto& s = cfg.sampler;
    const double lsb = s.dac_lsb();
    const long max_code = (1L << s.dac_bits) - 1;
    const auto clamp_code = static_cast<long>(std::floor(std::min(cfg.v_da_max, s.dac_vref) / lsb + 1e-9));
    const long code = std::min({std::lround(v_o / lsb), max_code, clamp_code});
    return static_cast<double>(code) * lsb;
}

TimingVerdict check_timing_budget(const GateDriveConfig& cfg, double f_s, double duty_max, double t_off) {
    require(f_s > 0.0, "check_timing_budget: f_s must be > 0");
    require(duty_max > 0.0 && duty_max < 1.0, "check_timing_budget: duty must be in (0,1)");
    TimingVerdict v;
    v.t_st_lower = t_off;
    v.t_st_upper = (1.0 - duty_max) / f_s - cfg.sampler.adc_conv_time;
    const double t_st = cfg.trigger.t_st;
    std::ostringstream why;
    if (!(t_st > v.t_st_lower)) {
        why << "t_st=" << t_st << " s does not exceed t_off=" << t_off << " s (lower bound)";
    } else if (!(t_st < v.t_st_upper)) {
        why << "t_st=" << t_st << " s is not below T_off(min)-T_sa=" << v.t_st_upper << " s (upper bound)";
    } else if (!(t_st + cfg.sampler.latency() < 1.0 / f_s)) {
        why << "sample plus controller latency " << t_st + cfg.sampler.latency()
            << " s does not fit in the switching period " << 1.0 / f_s << " s";
    }
    v.violation = why.str();
    v.ok = v.violation.empty();
    return v;
}

}  // namespace stacksim
