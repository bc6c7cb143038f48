#pragma once

// =============================================================================
// Device model: charge maps for a power MOSFET turning off from a gate rail.
//
// Capacitances are voltage laws C(V) defined for V >= 0. Charges are exact
// integrals of those laws, so every charge/voltage pair round-trips.
// =============================================================================

#include <span>
#include <string>
#include <variant>
#include <vector>

namespace stacksim {

/// C(V) = c0 / sqrt(1 + V / v_k)
struct ParametricLaw {
    double c0 = 0.0;
    double v_k = 0.0;
};

struct CapPoint {
    double v = 0.0;  ///< volts, > 0
    double c = 0.0;  ///< farads, > 0
};

/// Log-log linear interpolation between points, clamped (constant) outside.
struct TabulatedLaw {
    std::vector<CapPoint> points;
};

struct ConstantLaw {
    double c = 0.0;
};

using CgdLaw = std::variant<ParametricLaw, TabulatedLaw>;
using CdsLaw = std::variant<ConstantLaw, ParametricLaw, TabulatedLaw>;

/// One row of a "switching times vs external gate resistance" curve.
struct SwitchTimeRow {
    double r_g = 0.0;
    double t_d_off = 0.0;
    double t_f = 0.0;
};

struct DeviceParams {
    std::string name;
    double v_th = 0.0;
    double g_m = 0.0;
    double c_gs = 0.0;
    double c_gd_on = 0.0;
    double r_ds_on = 0.0;
    double r_g_int = 0.0;  ///< internal gate resistance, in series with the external r_g
    CdsLaw c_ds = ConstantLaw{};
    CgdLaw cgd_law = ParametricLaw{};
    std::vector<SwitchTimeRow> switch_times;

    /// Throws InvalidInput naming the offending field.
    void validate() const;
};

struct ChargeBudget {
    double q_gs_off = 0.0;
    double q_gd = 0.0;
    double q_g_off = 0.0;
};

// --- generic capacitance-law helpers (V >= 0) --------------------------------

double capacitance_at(const CgdLaw& law, double v);
double capacitance_at(const CdsLaw& law, double v);

/// Exact integral of the law over [v_lo, v_hi].
double charge_between(const CgdLaw& law, double v_lo, double v_hi);
double charge_between(const CdsLaw& law, double v_lo, double v_hi);

/// Inverse of charge_between with the lower limit held fixed.
double voltage_for_charge(const CgdLaw& law, double q, double v_lo);

void validate_law(const CgdLaw& law, const std::string& field);
void validate_law(const CdsLaw& law, const std::string& field);

// --- device operations -------------------------------------------------------

/// Gate plateau voltage during the drain-voltage transition.
double miller_voltage(const DeviceParams& p, double i_d);

double cgd_at(const DeviceParams& p, double v_ds);

/// Gate-drain charge removed while V_DS rises from v_on to v_off.
double qgd_between(const DeviceParams& p, double v_on, double v_off);

/// Off-state drain voltage reached after removing q_gd starting from v_on.
double vdsoff_from_qgd(const DeviceParams& p, double q_gd, double v_on);

/// Charge removed from C_GS + C_GD(on) while the gate falls to the plateau.
double qgs_off(const DeviceParams& p, double v_dd, double i_d);

ChargeBudget charge_budget(const DeviceParams& p, double v_dd, double i_d, double v_on, double v_off);

/// Drain-voltage slope during the plateau for a resistive gate loop pulling
/// toward v_ee. C_GD and C_DS are supplied by the caller at the operating point.
double dvdt_rate(const DeviceParams& p, double i_d, double r_g, double v_ee, double c_gd, double c_ds);

/// Interpolated t_d(off) + t_f at the given gate resistance (linear in R_G).
/// Throws InvalidInput when r_g lies outside the table.
double turnoff_time(const DeviceParams& p, double r_g);

// --- charge state functions used by the transient integrator -----------------

/// Signed charge on C_GD as a function of drain-gate voltage. For v_dg < 0 the
/// on-state capacitance c_gd_on applies.
double gate_drain_charge(const DeviceParams& p, double v_dg);
double gate_drain_capacitance(const DeviceParams& p, double v_dg);

/// Signed charge on C_DS; constant C(0) extension below zero.
double drain_source_charge(const DeviceParams& p, double v_ds);
double drain_source_capacitance(const DeviceParams& p, double v_ds);

// --- datasheet fitting -------------------------------------------------------

struct CgdFit {
    ParametricLaw law;
    double rms_log_residual = 0.0;  ///< RMS of ln(C_fit / C_table)
    double max_log_residual = 0.0;
};

/// Least-squares fit of (c0, v_k) to a C_rss curve, in log space.
CgdFit fit_parametric(std::span<const CapPoint> table);

}  // namespace stacksim
