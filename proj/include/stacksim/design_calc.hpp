#pragma once

// =============================================================================
// Worst-case discharge budget and component sizing for the current sink and
// trigger windows of the active gate drive.
// =============================================================================

#include "stacksim/device_model.hpp"

#include <string>
#include <utility>
#include <vector>

namespace stacksim {

/// Components actually fitted on the board, used for the saturation check.
struct InstalledSink {
    double r3 = 3.6;
    double r4 = 1e3;
    double r5 = 1e3;
    double v_da_max = 4.8;
};

struct DesignInputs {
    DeviceParams device;
    double v_dd = 20.0;
    double v_ee = -5.0;
    double r_g = 15.0;
    double i_d = 20.0;                 ///< load current for the Miller estimate
    double driver_skew_max = 26e-9;
    double c_p_total = 137e-12;        ///< isolated supply plus driver IC
    double v_dc = 1000.0;
    int n = 2;
    double v_out_neg = -4.5;
    double v_be_on = 0.7;
    double v_ce1_sat = 0.13;
    double v_ce3_sat = 0.23;
    double aux_response = 33.6e-9;     ///< trigger plus sink delays
    double f_s = 40e3;
    std::pair<double, double> duty_range{0.1, 0.9};
    double t_sa_adc = 1.25e-6;
    InstalledSink installed;

    void validate() const;
};

struct ChargeDeviation {
    double dq_delay_max = 0.0;
    double dq_cp = 0.0;
    double dq_gd_max = 0.0;
};

ChargeDeviation budget(const DesignInputs& d);

/// t_d(off) + t_f interpolated from the device table.
double t_off_of(const DeviceParams& device, double r_g);

struct SinkSizing {
    double t_c_min = 0.0;
    double v_r3_max = 0.0;
    double r3 = 0.0;
    double i_ctrl_max = 0.0;
    double r12_max = 0.0;
};

/// Throws Infeasible when the turn-off time does not exceed the auxiliary
/// response time.
SinkSizing size_sink(const DesignInputs& d, const ChargeDeviation& b, double t_off);

struct TimeWindows {
    double t_ctrl = 0.0;
    double t_st_lower = 0.0;
    double t_st_upper = 0.0;
};

/// Throws Infeasible when the sampling interval is empty.
TimeWindows t_windows(const DesignInputs& d, double t_off);

struct DesignReport {
    double v_miller = 0.0;
    ChargeDeviation charges;
    double t_off = 0.0;
    SinkSizing sink;
    TimeWindows windows;
    double controller_latency = 5.03e-6;
    double v_ctrl_required = 0.0;  ///< with the installed sink resistors
    bool timing_feasible = false;  ///< t_c_min > 0
    bool t_st_feasible = false;    ///< non-empty sampling interval
    bool sink_within_dac_range = false;
    std::vector<std::string> notes;

    [[nodiscard]] bool feasible() const { return timing_feasible && t_st_feasible && sink_within_dac_range; }
};

/// Full report; infeasibility is recorded in the flags and notes rather than
/// thrown.
DesignReport design_report(const DesignInputs& d);

}  // namespace stacksim
