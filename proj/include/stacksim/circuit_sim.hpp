#pragma once

// =============================================================================
// Transient simulation of N series-connected MOSFETs in a DC chopper.
//
// Position 0 is the source-grounded bottom device. The network is integrated
// with backward Euler on charges (exactly charge-conserving for the nonlinear
// capacitances) and a Newton solve per step. Piecewise-constant inputs (driver
// edges, V_ctrl windows, injected gate pulses, samples) are step boundaries.
// =============================================================================

#include "stacksim/device_model.hpp"
#include "stacksim/gate_drive_ctl.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace stacksim {

struct StackDevice {
    DeviceParams device;
    double r_g = 15.0;
    double t_delay = 0.0;  ///< driver-output skew relative to the commanded edge
    double c_p = 0.0;      ///< drive common to system ground (ignored at position 0)

    [[nodiscard]] double gate_resistance() const { return r_g + device.r_g_int; }
};

struct ResistiveLoad {
    double r = 50.0;
};

struct InductiveLoad {
    double r = 30.0;
    double l = 2.6e-3;
};

using Load = std::variant<ResistiveLoad, InductiveLoad>;

struct Freewheel {
    int diodes = 2;
    double v_forward = 0.9;
    double r_balance = 33e3;  ///< per diode
};

struct Rails {
    double v_dd = 20.0;
    double v_ee = -5.0;
};

struct StackScenario {
    std::string name;
    std::vector<StackDevice> devices;
    double v_dc = 1000.0;
    Rails rails;
    Load load = ResistiveLoad{};
    Freewheel freewheel;
    double static_balance_r = 402e3;
    double f_s = 40e3;
    double duty = 0.5;

    [[nodiscard]] std::size_t n() const { return devices.size(); }
    [[nodiscard]] double period() const { return 1.0 / f_s; }
    [[nodiscard]] double load_resistance() const;

    /// Field invariants plus PWM timing against each device's turn-off time.
    void validate() const;
};

struct SolverOpts {
    double dt = 50e-12;          ///< step inside switching windows
    double coarse_dt = 10e-9;    ///< step between switching windows
    double fine_window = 1e-6;   ///< fine stepping after each commanded edge
    double sample_delay = 500e-9;///< V_DSoff sampled this long after the commanded fall
    double record_dt = 0.0;      ///< cycle waveforms: 0 disables recording
    int max_newton = 60;
    double v_tol = 1e-7;
    double i_tol = 1e-7;

    void validate() const;
};

/// Rectangular ideal current drawn from a gate node.
struct GatePulse {
    double start = 0.0;
    double end = 0.0;
    double amplitude = 0.0;
};

/// Per-device auxiliary inputs for one transient.
struct DriveCommand {
    double v_ctrl = 0.0;                ///< V_DAout connected during the trigger window
    std::optional<GatePulse> injection; ///< ideal extra gate discharge
    GateDriveConfig config;             ///< sink and trigger behavior
};

struct SimState {
    double time = 0.0;
    std::vector<double> v_gs;
    std::vector<double> v_ds;
    std::vector<double> sink;  ///< filtered sink command, before gate collapse
    double i_load = 0.0;
};

struct DeviceChannels {
    std::vector<double> v_gs, v_ds, i_g, i_sink, i_cp, i_gd, v_ctrl;
};

struct WaveformSet {
    double t0 = 0.0;
    double dt = 0.0;
    std::vector<double> time;
    std::vector<DeviceChannels> devices;
    std::vector<double> i_d;

    [[nodiscard]] std::size_t size() const { return time.size(); }
    /// Index of the last sample at or before t.
    [[nodiscard]] std::size_t index_at(double t) const;
};

struct TurnoffResult {
    WaveformSet waveform;
    SimState initial;
    SimState final_state;
    std::vector<double> fall_times;   ///< per device driver fall instant
    std::vector<double> v_dsoff;      ///< per device at the sample instant
    std::vector<double> q_gd;         ///< per device gate-drain charge removed during turn-off
    std::vector<double> rise_times;   ///< per device driver rise instant, empty without turn-on
    double sample_time = 0.0;
};

/// Off interval and observation window of the turn-on that follows a turn-off.
struct TurnOnPhase {
    double t_gap = 2e-6;    ///< commanded turn-on instant
    double t_after = 1e-6;  ///< recorded span after t_gap
};

/// Steady on-state (all gates at v_dd). For inductive loads i_load fixes the
/// inductor current; otherwise the DC operating point is used.
SimState on_state(const StackScenario& s, std::optional<double> i_load = std::nullopt);

/// Steady off-state with the static balancing network and zero load current.
SimState off_state(const StackScenario& s);

/// Turn-off transient from the on-state. Driver i falls at t_delay_i; the
/// window is opts.fine_window long and sampled every opts.dt.
TurnoffResult simulate_turnoff(const StackScenario& s, const std::vector<DriveCommand>& drive, const SolverOpts& opts,
                               std::optional<double> i_load = std::nullopt);

/// Turn-off followed by turn-on at t_gap, as in a double-pulse test. The
/// sink acts on the falling edge only.
TurnoffResult simulate_off_on(const StackScenario& s, const std::vector<DriveCommand>& drive, const SolverOpts& opts,
                              double i_load, TurnOnPhase turn_on);

/// Gate-discharge deviation from driver skew.
double delta_q_delay(double v_dd, double v_miller, double r_g, double t_delay);

struct DeltaQcp {
    double full = 0.0;
    double simplified = 0.0;
};

/// Discharge deviation from the isolation-barrier parasitic path.
DeltaQcp delta_q_cp(double c_p1, double c_p2, double v_ds2, double v_dd, double v_ee, double r_ds_on, double i_d);

// --- multi-cycle closed loop -------------------------------------------------

struct CycleRecord {
    int cycle = 0;
    double i_load_at_off = 0.0;
    std::vector<double> v_dsoff;   ///< true drain voltage at each device's sample
    std::vector<double> measured;  ///< ADC reading, device side
    std::vector<double> error;
    std::vector<double> v_daout;   ///< applied during this cycle's turn-off
    std::vector<double> v_o;       ///< regulator output after this cycle
    std::vector<RegulatorMode> mode;
    double alpha = 0.0;
};

struct ClosedLoopResult {
    std::vector<CycleRecord> cycles;
    std::optional<WaveformSet> waveform;
};

/// PWM operation at (f_s, duty). Each cycle: turn-on, turn-off with the sink
/// driven by the previous V_DAout, sample at t_st, regulator update.
ClosedLoopResult simulate_cycles(const StackScenario& s, const std::vector<GateDriveConfig>& drives,
                                 std::vector<ControllerState> controllers, int n_cycles, const SolverOpts& opts,
                                 bool controller_enabled = true);

/// First cycle (1-based) from which alpha stays at or below the threshold
/// for the rest of the run; nullopt when it never settles.
std::optional<int> settling_cycle(const std::vector<CycleRecord>& cycles, double alpha_max);

}  // namespace stacksim
