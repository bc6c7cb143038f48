#include "stacksim/device_model.hpp"

#include "stacksim/errors.hpp"

#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <limits>
#include <numeric>

namespace stacksim {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw InvalidInput(msg);
}

// ---- parametric law ---------------------------------------------------------

// sqrt(1 + x) - 1 without cancellation for small x.
double sqrt1p_m1(double x) { return x / (std::sqrt(1.0 + x) + 1.0); }

double cap(const ParametricLaw& law, double v) { return law.c0 / std::sqrt(1.0 + v / law.v_k); }

double antiderivative(const ParametricLaw& law, double v) {
    return 2.0 * law.c0 * law.v_k * sqrt1p_m1(v / law.v_k);
}

double invert(const ParametricLaw& law, double q_total) {
    // q_total = 2 c0 vk (s - 1), v = vk (s - 1)(s + 1)
    const double a = q_total / (2.0 * law.c0 * law.v_k);
    return law.v_k * a * (a + 2.0);
}

// ---- tabulated law ----------------------------------------------------------

double seg_exponent(const CapPoint& a, const CapPoint& b) {
    return std::log(b.c / a.c) / std::log(b.v / a.v);
}

// Integral of c_a (v/v_a)^p from v_a to v.
double seg_integral(const CapPoint& a, double p, double v) {
    const double ratio = v / a.v;
    if (std::abs(p + 1.0) < 1e-12) return a.c * a.v * std::log(ratio);
    return a.c * a.v / (p + 1.0) * (std::pow(ratio, p + 1.0) - 1.0);
}

double seg_invert(const CapPoint& a, double p, double r) {
    if (std::abs(p + 1.0) < 1e-12) return a.v * std::exp(r / (a.c * a.v));
    return a.v * std::pow(1.0 + r * (p + 1.0) / (a.c * a.v), 1.0 / (p + 1.0));
}

double cap(const TabulatedLaw& law, double v) {
    const auto& pts = law.points;
    if (v <= pts.front().v) return pts.front().c;
    if (v >= pts.back().v) return pts.back().c;
    auto it = std::upper_bound(pts.begin(), pts.end(), v,
                               [](double x, const CapPoint& p) { return x < p.v; });
    const CapPoint& b = *it;
    const CapPoint& a = *(it - 1);
    return a.c * std::pow(v / a.v, seg_exponent(a, b));
}

double antiderivative(const TabulatedLaw& law, double v) {
    const auto& pts = law.points;
    if (v <= pts.front().v) return pts.front().c * v;
    double acc = pts.front().c * pts.front().v;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const CapPoint& a = pts[i];
        const CapPoint& b = pts[i + 1];
        const double p = seg_exponent(a, b);
        if (v <= b.v) return acc + seg_integral(a, p, v);
        acc += seg_integral(a, p, b.v);
    }
    return acc + pts.back().c * (v - pts.back().v);
}

double invert(const TabulatedLaw& law, double q_total) {
    const auto& pts = law.points;
    double acc = pts.front().c * pts.front().v;
    if (q_total <= acc) return q_total / pts.front().c;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const CapPoint& a = pts[i];
        const CapPoint& b = pts[i + 1];
        const double p = seg_exponent(a, b);
        const double seg = seg_integral(a, p, b.v);
        if (q_total <= acc + seg) return std::clamp(seg_invert(a, p, q_total - acc), a.v, b.v);
        acc += seg;
    }
    return pts.back().v + (q_total - acc) / pts.back().c;
}

// ---- constant law -----------------------------------------------------------

double cap(const ConstantLaw& law, double) { return law.c; }
double antiderivative(const ConstantLaw& law, double v) { return law.c * v; }

template <class Law>
double cap_checked(const Law& law, double v) {
    require(v >= 0.0, "capacitance law evaluated at negative voltage");
    return std::visit([v](const auto& l) { return cap(l, v); }, law);
}

template <class Law>
double charge_checked(const Law& law, double lo, double hi) {
    require(lo >= 0.0, "charge integral lower limit must be >= 0");
    require(lo <= hi, "charge integral requires v_lo <= v_hi");
    return std::visit([&](const auto& l) { return antiderivative(l, hi) - antiderivative(l, lo); }, law);
}

void validate_one(const ParametricLaw& law, const std::string& field) {
    require(law.c0 > 0.0 && std::isfinite(law.c0), field + ".c0 must be > 0");
    require(law.v_k > 0.0 && std::isfinite(law.v_k), field + ".v_k must be > 0");
}

void validate_one(const TabulatedLaw& law, const std::string& field) {
    require(!law.points.empty(), field + ": table must not be empty");
    for (std::size_t i = 0; i < law.points.size(); ++i) {
        const auto& pt = law.points[i];
        const std::string row = field + " row " + std::to_string(i);
        require(pt.v > 0.0 && std::isfinite(pt.v), row + ": voltage must be > 0");
        require(pt.c > 0.0 && std::isfinite(pt.c), row + ": capacitance must be > 0");
        if (i > 0) {
            require(pt.v > law.points[i - 1].v, row + ": voltages must be strictly increasing");
            require(pt.c < law.points[i - 1].c, row + ": capacitances must be strictly decreasing");
        }
    }
}

void validate_one(const ConstantLaw& law, const std::string& field) {
    require(law.c > 0.0 && std::isfinite(law.c), field + ".c must be > 0");
}

}  // namespace

double capacitance_at(const CgdLaw& law, double v) { return cap_checked(law, v); }
double capacitance_at(const CdsLaw& law, double v) { return cap_checked(law, v); }
double charge_between(const CgdLaw& law, double lo, double hi) { return charge_checked(law, lo, hi); }
double charge_between(const CdsLaw& law, double lo, double hi) { return charge_checked(law, lo, hi); }

double voltage_for_charge(const CgdLaw& law, double q, double v_lo) {
    require(q >= 0.0, "charge must be >= 0");
    require(v_lo >= 0.0, "starting voltage must be >= 0");
    return std::visit(
        [&](const auto& l) {
            const double v = invert(l, antiderivative(l, v_lo) + q);
            return std::max(v, v_lo);
        },
        law);
}

void validate_law(const CgdLaw& law, const std::string& field) {
    std::visit([&](const auto& l) { validate_one(l, field); }, law);
}

void validate_law(const CdsLaw& law, const std::string& field) {
    std::visit([&](const auto& l) { validate_one(l, field); }, law);
}

void DeviceParams::validate() const {
    auto positive = [](double x) { return x > 0.0 && std::isfinite(x); };
    require(positive(v_th), "v_th must be > 0");
    require(positive(g_m), "g_m must be > 0");
    require(positive(c_gs), "c_gs must be > 0");
    require(positive(c_gd_on), "c_gd_on must be > 0");
    require(positive(r_ds_on), "r_ds_on must be > 0");
    require(r_g_int >= 0.0 && std::isfinite(r_g_int), "r_g_int must be >= 0");
    validate_law(cgd_law, "cgd_law");
    validate_law(c_ds, "c_ds");
    for (std::size_t i = 0; i < switch_times.size(); ++i) {
        const auto& row = switch_times[i];
        const std::string tag = "switch_times row " + std::to_string(i);
        require(positive(row.r_g), tag + ": r_g must be > 0");
        require(positive(row.t_d_off) && positive(row.t_f), tag + ": times must be > 0");
        if (i > 0) require(row.r_g > switch_times[i - 1].r_g, tag + ": r_g must be strictly increasing");
    }
}

double miller_voltage(const DeviceParams& p, double i_d) {
    require(i_d >= 0.0, "miller_voltage: i_d must be >= 0");
    return p.v_th + i_d / p.g_m;
}

double cgd_at(const DeviceParams& p, double v_ds) {
    require(v_ds >= 0.0, "cgd_at: v_ds must be >= 0");
    return capacitance_at(p.cgd_law, v_ds);
}

double qgd_between(const DeviceParams& p, double v_on, double v_off) {
    require(v_on >= 0.0, "qgd_between: v_on must be >= 0");
    require(v_on <= v_off, "qgd_between: v_on must not exceed v_off");
    return charge_between(p.cgd_law, v_on, v_off);
}

double vdsoff_from_qgd(const DeviceParams& p, double q_gd, double v_on) {
    require(q_gd >= 0.0, "vdsoff_from_qgd: q_gd must be >= 0");
    return voltage_for_charge(p.cgd_law, q_gd, v_on);
}

double qgs_off(const DeviceParams& p, double v_dd, double i_d) {
    const double v_miller = miller_voltage(p, i_d);
    require(v_dd > v_miller, "qgs_off: v_dd must exceed the Miller plateau voltage");
    return (p.c_gs + p.c_gd_on) * (v_dd - v_miller);
}

ChargeBudget charge_budget(const DeviceParams& p, double v_dd, double i_d, double v_on, double v_off) {
    ChargeBudget b;
    b.q_gs_off = qgs_off(p, v_dd, i_d);
    b.q_gd = qgd_between(p, v_on, v_off);
    b.q_g_off = b.q_gs_off + b.q_gd;
    return b;
}

double dvdt_rate(const DeviceParams& p, double i_d, double r_g, double v_ee, double c_gd, double c_ds) {
    require(i_d >= 0.0, "dvdt_rate: i_d must be >= 0");
    require(r_g > 0.0, "dvdt_rate: r_g must be > 0");
    require(c_gd > 0.0 && c_ds >= 0.0, "dvdt_rate: capacitances must be positive");
    return (i_d + p.g_m * (p.v_th - v_ee)) / (c_gd * (1.0 + r_g * p.g_m) + c_ds);
}

double turnoff_time(const DeviceParams& p, double r_g) {
    const auto& rows = p.switch_times;
    require(!rows.empty(), "turnoff_time: device has no switch_times table");
    if (rows.size() == 1) return rows.front().t_d_off + rows.front().t_f;
    require(r_g >= rows.front().r_g && r_g <= rows.back().r_g,
            "turnoff_time: r_g=" + std::to_string(r_g) + " outside switch_times table range");
    auto it = std::lower_bound(rows.begin(), rows.end(), r_g,
                               [](const SwitchTimeRow& row, double x) { return row.r_g < x; });
    if (it == rows.begin()) return it->t_d_off + it->t_f;
    const auto& b = *it;
    const auto& a = *(it - 1);
    const double w = (r_g - a.r_g) / (b.r_g - a.r_g);
    return (1.0 - w) * (a.t_d_off + a.t_f) + w * (b.t_d_off + b.t_f);
}

double gate_drain_charge(const DeviceParams& p, double v_dg) {
    if (v_dg < 0.0) return p.c_gd_on * v_dg;
    return std::visit([v_dg](const auto& l) { return antiderivative(l, v_dg); }, p.cgd_law);
}

double gate_drain_capacitance(const DeviceParams& p, double v_dg) {
    if (v_dg < 0.0) return p.c_gd_on;
    return std::visit([v_dg](const auto& l) { return cap(l, v_dg); }, p.cgd_law);
}

double drain_source_charge(const DeviceParams& p, double v_ds) {
    if (v_ds < 0.0) return drain_source_capacitance(p, 0.0) * v_ds;
    return std::visit([v_ds](const auto& l) { return antiderivative(l, v_ds); }, p.c_ds);
}

double drain_source_capacitance(const DeviceParams& p, double v_ds) {
    const double v = std::max(v_ds, 0.0);
    return std::visit([v](const auto& l) { return cap(l, v); }, p.c_ds);
}

CgdFit fit_parametric(std::span<const CapPoint> table) {
    require(table.size() >= 2, "fit_parametric: need at least two points");
    for (const auto& pt : table) require(pt.v >= 0.0 && pt.c > 0.0, "fit_parametric: invalid table point");

    // For fixed v_k the optimal ln c0 is the mean of ln C + 0.5 ln(1 + V/v_k),
    // which leaves a one-dimensional problem in ln v_k.
    auto residuals = [&](double ln_vk, double& ln_c0) {
        const double vk = std::exp(ln_vk);
        std::vector<double> base(table.size());
        for (std::size_t i = 0; i < table.size(); ++i)
            base[i] = std::log(table[i].c) + 0.5 * std::log1p(table[i].v / vk);
        ln_c0 = std::accumulate(base.begin(), base.end(), 0.0) / static_cast<double>(base.size());
        std::vector<double> r(table.size());
        for (std::size_t i = 0; i < table.size(); ++i) r[i] = ln_c0 - base[i];
        return r;
    };
    auto objective = [&](double ln_vk) {
        double ln_c0 = 0.0;
        double ss = 0.0;
        for (double r : residuals(ln_vk, ln_c0)) ss += r * r;
        return ss;
    };

    double v_max = 0.0;
    for (const auto& pt : table) v_max = std::max(v_max, pt.v);
    const double lo = std::log(1e-6 * std::max(v_max, 1.0));
    const double hi = std::log(1e3 * std::max(v_max, 1.0));

    // Coarse scan to bracket the global minimum, then Brent inside the bracket.
    constexpr int kScan = 200;
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kScan; ++i) {
        const double x = lo + (hi - lo) * i / kScan;
        const double f = objective(x);
        if (f < best_val) {
            best_val = f;
            best = i;
        }
    }
    const double step = (hi - lo) / kScan;
    const double a = lo + step * std::max(best - 1, 0);
    const double b = lo + step * std::min(best + 1, kScan);
    const auto [ln_vk, ss] = boost::math::tools::brent_find_minima(objective, a, b, 52);
    (void)ss;

    CgdFit fit;
    double ln_c0 = 0.0;
    const auto r = residuals(ln_vk, ln_c0);
    fit.law = ParametricLaw{std::exp(ln_c0), std::exp(ln_vk)};
    double ss_final = 0.0;
    for (double x : r) {
        ss_final += x * x;
        fit.max_log_residual = std::max(fit.max_log_residual, std::abs(x));
    }
    fit.rms_log_residual = std::sqrt(ss_final / static_cast<double>(r.size()));
    return fit;
}

}  // namespace stacksim
