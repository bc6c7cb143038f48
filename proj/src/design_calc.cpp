#include "stacksim/design_calc.hpp"

#include "stacksim/circuit_sim.hpp"
#include "stacksim/errors.hpp"
#include "stacksim/gate_drive_ctl.hpp"

#include <cmath>
#include <sstream>

namespace stacksim {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw InvalidInput(msg);
}

bool positive(double x) { return x > 0.0 && std::isfinite(x); }

}  // namespace

void DesignInputs::validate() const {
    device.validate();
    require(v_dd > 0.0 && v_ee < 0.0, "design: require v_dd > 0 > v_ee");
    require(positive(r_g), "design.r_g must be > 0");
    require(i_d >= 0.0, "design.i_d must be >= 0");
    require(driver_skew_max >= 0.0, "design.driver_skew_max must be >= 0");
    require(c_p_total >= 0.0, "design.c_p_total must be >= 0");
    require(positive(v_dc), "design.v_dc must be > 0");
    require(n >= 2, "design.n must be >= 2");
    require(v_out_neg < 0.0, "design.v_out_neg must be < 0");
    require(v_be_on >= 0.0 && v_ce1_sat >= 0.0 && v_ce3_sat >= 0.0, "design: junction voltages must be >= 0");
    require(aux_response >= 0.0 && t_sa_adc >= 0.0, "design: delays must be >= 0");
    require(positive(f_s), "design.f_s must be > 0");
    require(duty_range.first > 0.0 && duty_range.first <= duty_range.second && duty_range.second < 1.0,
            "design.duty_range must satisfy 0 < min <= max < 1");
    require(positive(installed.r3) && positive(installed.r4) && positive(installed.r5),
            "design.installed: resistances must be > 0");
    require(positive(installed.v_da_max), "design.installed.v_da_max must be > 0");
}

ChargeDeviation budget(const DesignInputs& d) {
    d.validate();
    ChargeDeviation b;
    const double v_miller = miller_voltage(d.device, d.i_d);
    b.dq_delay_max = delta_q_delay(d.v_dd, v_miller, d.r_g, d.driver_skew_max);
    b.dq_cp = delta_q_cp(d.c_p_total, d.c_p_total, d.v_dc / d.n, d.v_dd, d.v_ee, 0.0, 0.0).simplified;
    b.dq_gd_max = b.dq_delay_max + b.dq_cp;
    return b;
}

double t_off_of(const DeviceParams& device, double r_g) { return turnoff_time(device, r_g); }

SinkSizing size_sink(const DesignInputs& d, const ChargeDeviation& b, double t_off) {
    SinkSizing s;
    s.t_c_min = t_off - d.aux_response;
    if (!(s.t_c_min > 0.0)) {
        std::ostringstream os;
        os << "turn-off time " << t_off << " s does not exceed the auxiliary response " << d.aux_response << " s";
        throw Infeasible(os.str());
    }
    require(b.dq_gd_max > 0.0, "size_sink: charge budget must be > 0");
    s.v_r3_max = std::abs(d.v_out_neg) - d.v_be_on;
    require(s.v_r3_max > 0.0, "size_sink: |v_out_neg| must exceed v_be_on");
    s.r3 = s.t_c_min * s.v_r3_max / b.dq_gd_max;
    s.i_ctrl_max = b.dq_gd_max / s.t_c_min;
    s.r12_max = (std::abs(d.v_ee) - s.v_r3_max - d.v_ce3_sat - d.v_ce1_sat) / s.i_ctrl_max;
    if (!(s.r12_max > 0.0)) throw Infeasible("no headroom for R1/R2 between V_EE and the sink saturation voltages");
    return s;
}

TimeWindows t_windows(const DesignInputs& d, double t_off) {
    TimeWindows w;
    w.t_ctrl = t_off;
    w.t_st_lower = t_off;
    w.t_st_upper = (1.0 - d.duty_range.second) / d.f_s - d.t_sa_adc;
    if (!(w.t_st_upper > w.t_st_lower)) {
        std::ostringstream os;
        os << "sampling interval is empty: (" << w.t_st_lower << " s, " << w.t_st_upper << " s)";
        throw Infeasible(os.str());
    }
    return w;
}

DesignReport design_report(const DesignInputs& d) {
    d.validate();
    DesignReport r;
    r.v_miller = miller_voltage(d.device, d.i_d);
    r.charges = budget(d);
    r.t_off = t_off_of(d.device, d.r_g);
    r.controller_latency = SamplerConfig{}.latency();

    try {
        r.sink = size_sink(d, r.charges, r.t_off);
        r.timing_feasible = true;
    } catch (const Infeasible& e) {
        r.notes.emplace_back(e.what());
    }
    try {
        r.windows = t_windows(d, r.t_off);
        r.t_st_feasible = true;
    } catch (const Infeasible& e) {
        r.windows.t_ctrl = r.t_off;
        r.windows.t_st_lower = r.t_off;
        r.windows.t_st_upper = (1.0 - d.duty_range.second) / d.f_s - d.t_sa_adc;
        r.notes.emplace_back(e.what());
    }

    if (r.timing_feasible) {
        const auto& in = d.installed;
        r.v_ctrl_required = r.sink.i_ctrl_max * in.r3 * in.r4 / in.r5;
        r.sink_within_dac_range = r.v_ctrl_required <= in.v_da_max;
        if (!r.sink_within_dac_range) {
            std::ostringstream os;
            os << "installed sink needs V_ctrl = " << r.v_ctrl_required << " V for the worst-case charge, above v_da_max = "
               << in.v_da_max << " V; a residual voltage difference remains";
            r.notes.push_back(os.str());
        }
    }
    return r;
}

}  // namespace stacksim
