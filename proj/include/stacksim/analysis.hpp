#pragma once

// =============================================================================
// Post-processing: imbalance metric, parameter sweeps over injected gate
// discharge, and double-pulse switching-energy evaluation.
// =============================================================================

#include "stacksim/circuit_sim.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stacksim {

/// (max - min) / v_dc over per-device off-state voltages.
double imbalance_ratio(const std::vector<double>& v_dsoff, double v_dc);

// --- sweeps ------------------------------------------------------------------

enum class SweepAxis { DeltaQGoff, LoadCurrent, BusVoltage };

std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

struct SweepSpec {
    SweepAxis axis = SweepAxis::DeltaQGoff;
    std::vector<double> grid;
    double delta_q_goff = 0.0;   ///< fixed value when not swept (C)
    double i_d = 20.0;           ///< fixed value when not swept (A)
    double v_dc = 1000.0;        ///< fixed value when not swept (V)
    double pulse_width = 100e-9; ///< rectangular extra discharge starting at the commanded fall
    std::size_t inject_device = 1;
    StackScenario base;          ///< devices, rails and gate loops; load is replaced per point
    SolverOpts opts;

    void validate() const;
};

struct SweepRow {
    std::size_t index = 0;
    double axis_value = 0.0;
    double delta_q_goff = 0.0;
    double i_d = 0.0;
    double v_dc = 0.0;
    std::vector<double> v_dsoff;
    double alpha = 0.0;
    bool ok = true;
    std::string error;  ///< solver message when !ok
};

/// One turn-off per grid point with a resistive load of v_dc / i_d. Points run
/// on up to `threads` workers; rows come back in grid order.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, unsigned threads = 1);

std::string sweep_csv(const std::vector<SweepRow>& rows, std::size_t n_devices);

// --- switching energy --------------------------------------------------------

struct Window {
    double start = 0.0;
    double end = 0.0;
};

/// Current resampled onto the voltage grid after delaying it by `offset`
/// (positive offset moves the current later). Samples outside the record
/// hold the end values.
std::pair<std::vector<double>, std::vector<double>> align_vi(const std::vector<double>& v,
                                                             const std::vector<double>& i, double dt, double offset);

struct EnergyResult {
    std::vector<double> e_off;
    std::vector<double> e_on;
    double e_off_total = 0.0;
    double e_on_total = 0.0;
    double offset = 0.0;
    Window off_window;
    Window on_window;
};

/// Trapezoidal integral of v_ds * i_d per device over each window.
EnergyResult switching_energy(const WaveformSet& w, Window off, Window on, double offset);

/// Trapezoidal integral of v * i over [a, b] on a uniform grid starting at t0.
double integrate_power(const std::vector<double>& v, const std::vector<double>& i, double t0, double dt, Window win);

struct DptSpec {
    double i_test = 20.0;
    double t_gap = 2e-6;
    double t_after = 1e-6;
    double offset = 0.0;
    std::optional<Window> off_window;  ///< default [0, opts.fine_window]
    std::optional<Window> on_window;   ///< default [t_gap, t_gap + t_after]

    void validate() const;
};

struct DptRun {
    std::vector<double> v_ctrl;
    TurnoffResult transient;
    EnergyResult energy;
    double alpha = 0.0;
};

struct DptResult {
    DptRun uncompensated;
    DptRun compensated;
};

/// V_ctrl per device that equalizes the first turn-off at i_load, found by
/// bisection device by device. Devices already above the mean get zero.
std::vector<double> calibrate_preset(const StackScenario& s, const std::vector<GateDriveConfig>& drives,
                                     const SolverOpts& opts, double i_load);

/// Double-pulse evaluation with and without the calibrated sink preset.
DptResult run_dpt(const StackScenario& s, const std::vector<GateDriveConfig>& drives, const SolverOpts& opts,
                  const DptSpec& spec);

// --- plot scripts ------------------------------------------------------------

/// Python/matplotlib script that renders the given CSV files. Nothing is
/// plotted in-process.
std::string plot_script(const std::string& kind, const std::vector<std::string>& csv_files);

}  // namespace stacksim
