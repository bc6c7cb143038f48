#pragma once

// =============================================================================
// Behavioral model of the auxiliary gate-drive circuits: the controlled
// current sink, the falling-edge trigger, and the per-cycle sampling and
// control loop (ADC -> step/PI regulator -> DAC).
// =============================================================================

#include <cstdint>
#include <string>

namespace stacksim {

struct SinkConfig {
    double r1 = 0.5;
    double r2 = 0.5;
    double r3 = 3.6;
    double r4 = 1e3;
    double r5 = 1e3;
    double v_be_on = 0.7;
    double v_ce1_sat = 0.13;
    double v_ce3_sat = 0.23;
    double prop_delay = 21e-9;  ///< 50 % rise delay from V_ctrl step to I_sink
    double v_out_neg = -4.5;    ///< op-amp negative output swing

    /// Amperes per volt of V_ctrl.
    [[nodiscard]] double transconductance() const { return r5 / (r3 * r4); }
    /// Gate-to-rail headroom below which the sink collapses.
    [[nodiscard]] double saturation_margin() const { return v_ce1_sat + v_ce3_sat; }
};

struct TriggerConfig {
    double t_st = 500e-9;
    double t_ctrl = 125e-9;
    double prop_delay = 12.6e-9;
};

struct SamplerConfig {
    double divider_k = 2.0 / 402.0;
    int adc_bits = 12;
    double adc_vref = 5.0;
    double adc_conv_time = 1.25e-6;
    double algo_time = 3.6e-6;
    int dac_bits = 8;
    double dac_vref = 5.0;
    double dac_settle = 100e-9;
    double dac_prop = 80e-9;

    [[nodiscard]] double adc_lsb() const;
    [[nodiscard]] double dac_lsb() const;
    /// Sample trigger to DAC output transition.
    [[nodiscard]] double latency() const { return adc_conv_time + algo_time + dac_settle + dac_prop; }
};

struct GateDriveConfig {
    SinkConfig sink;
    TriggerConfig trigger;
    SamplerConfig sampler;
    double v_da_max = 4.8;

    void validate() const;
};

enum class RegulatorMode : std::uint8_t { Step, PI };

std::string to_string(RegulatorMode m);

struct ControllerState {
    RegulatorMode mode = RegulatorMode::Step;
    double v_o = 0.0;        ///< output word expressed in volts
    double v_o_base = 0.0;   ///< output held when PI took over
    double integral = 0.0;   ///< sum of device-side errors while in PI
    double v_ds_star = 2.49; ///< reference, ADC side
    double e_th1 = 200.0;
    double e_th2 = 60.0;
    double e_th3 = 25.0;
    double v_th1 = 2.0;
    double v_th2 = 0.7;
    double v_th3 = 0.2;
    double k_p = 0.01;
    double k_i = 0.002;
    double last_error = 0.0;

    void validate() const;
};

struct TriggerSchedule {
    double fall_time = 0.0;
    double ctrl_start = 0.0;
    double ctrl_end = 0.0;
    double sample_time = 0.0;

    [[nodiscard]] bool ctrl_active(double t) const { return t >= ctrl_start && t < ctrl_end; }
};

struct AdcSample {
    int code = 0;
    double volts = 0.0;  ///< ADC-side volts

    [[nodiscard]] double device_volts(const SamplerConfig& s) const { return volts / s.divider_k; }
};

struct RegulatorOutput {
    ControllerState state;
    double v_o = 0.0;
};

struct TimingVerdict {
    bool ok = true;
    double t_st_lower = 0.0;
    double t_st_upper = 0.0;
    std::string violation;  ///< empty when ok
};

/// Static sink current for a given V_ctrl and gate voltage: the commanded
/// value scaled by a C1 collapse factor as V_GS nears V_EE. Rejects
/// v_ctrl outside [0, v_da_max].
double sink_current(const GateDriveConfig& cfg, double v_ctrl, double v_gs, double v_ee);

/// Smoothstep in (v_gs - v_ee) over the saturation margin, and its slope.
double sink_gate_factor(const SinkConfig& sink, double v_gs, double v_ee);
double sink_gate_factor_slope(const SinkConfig& sink, double v_gs, double v_ee);

TriggerSchedule schedule_triggers(const GateDriveConfig& cfg, double fall_time);

AdcSample sample_vds(const GateDriveConfig& cfg, double v_ds);

/// One regulator step from a device-side measurement; the returned v_o is
/// applied at the next turn-off.
RegulatorOutput regulator_update(const ControllerState& st, const GateDriveConfig& cfg, double measured);

/// DAC quantization of the output word, clamped to v_da_max.
double dac_out(const GateDriveConfig& cfg, double v_o);

TimingVerdict check_timing_budget(const GateDriveConfig& cfg, double f_s, double duty_max, double t_off);

}  // namespace stacksim
