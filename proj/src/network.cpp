#include "network.hpp"

#include "stacksim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stacksim::detail {

namespace {

constexpr double kBlendWidth = 0.1;     // V, gate overdrive knee
constexpr double kDiodeOnG = 100.0;     // S, freewheel forward conductance
constexpr double kDiodeKnee = 0.02;     // V
constexpr double kTimeEps = 1e-17;      // s

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct Diode {
    double i = 0.0;
    double di = 0.0;
};

Diode freewheel_diode(const Freewheel& fw, double v) {
    const double x = (v - fw.diodes * fw.v_forward) / kDiodeKnee;
    return {kDiodeOnG * kDiodeKnee * softplus(x), kDiodeOnG * sigmoid(x)};
}

}  // namespace

// ---- InputSchedule ----------------------------------------------------------

InputSchedule::InputSchedule(std::size_t n, double initial_level)
    : initial_(initial_level), edges_(n), windows_(n), pulses_(n) {}

void InputSchedule::add_edge(std::size_t k, double t, double level) {
    auto& e = edges_.at(k);
    e.push_back({t, level});
    std::stable_sort(e.begin(), e.end(), [](const Edge& a, const Edge& b) { return a.t < b.t; });
    add_breakpoint(t);
}

void InputSchedule::add_ctrl_window(std::size_t k, CtrlWindow w) {
    windows_.at(k).push_back(w);
    add_breakpoint(w.start);
    add_breakpoint(w.end);
}

void InputSchedule::add_injection(std::size_t k, GatePulse p) {
    pulses_.at(k).push_back(p);
    add_breakpoint(p.start);
    add_breakpoint(p.end);
}

void InputSchedule::add_breakpoint(double t) {
    breakpoints_.push_back(t);
    sorted_ = false;
}

double InputSchedule::driver(std::size_t k, double t) const {
    double level = initial_;
    for (const auto& e : edges_[k]) {
        if (e.t > t) break;
        level = e.level;
    }
    return level;
}

double InputSchedule::v_ctrl(std::size_t k, double t) const {
    for (const auto& w : windows_[k])
        if (t >= w.start && t < w.end) return w.v_ctrl;
    return 0.0;
}

double InputSchedule::injection(std::size_t k, double t) const {
    double sum = 0.0;
    for (const auto& p : pulses_[k])
        if (t >= p.start && t < p.end) sum += p.amplitude;
    return sum;
}

double InputSchedule::next_breakpoint(double t) const {
    if (!sorted_) {
        std::sort(breakpoints_.begin(), breakpoints_.end());
        breakpoints_.erase(std::unique(breakpoints_.begin(), breakpoints_.end()), breakpoints_.end());
        sorted_ = true;
    }
    auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t + kTimeEps);
    return it == breakpoints_.end() ? std::numeric_limits<double>::infinity() : *it;
}

// ---- device channel ---------------------------------------------------------

Channel channel_current(const DeviceParams& p, double v_gs, double v_ds) {
    const double x = (v_gs - p.v_th) / kBlendWidth;
    const double s = std::max(p.g_m * kBlendWidth * softplus(x), 1e-300);
    const double ds = p.g_m * sigmoid(x);
    const double y = v_ds / (p.r_ds_on * s);
    double th = 0.0;
    double sech2 = 0.0;
    if (std::abs(y) > 20.0) {
        th = y > 0.0 ? 1.0 : -1.0;
    } else {
        th = std::tanh(y);
        sech2 = 1.0 - th * th;
    }
    Channel c;
    c.i = s * th;
    c.di_dvds = sech2 / p.r_ds_on;
    c.di_dvgs = (th - y * sech2) * ds;
    return c;
}

// ---- Network ----------------------------------------------------------------

struct Network::Frozen {
    std::vector<double> vg0, vd0, qgd0, qds0, vsrc0, vdrv, sink, inj, vctrl;
    double il0 = 0.0;
    bool dc = false;
    std::optional<double> i_fixed;
};

Network::Network(const StackScenario& s, const SolverOpts& opts, std::vector<SinkConfig> sinks)
    : s_(s), opts_(opts), sinks_(std::move(sinks)) {
    if (sinks_.size() != s_.n()) sinks_.resize(s_.n());
}

void Network::assemble(const Eigen::VectorXd& x, const Frozen& f, double h, Eigen::VectorXd& r,
                       Eigen::MatrixXd& jac) const {
    const std::size_t n = s_.n();
    const auto L = static_cast<Eigen::Index>(2 * n);
    const double inv_h = f.dc ? 0.0 : 1.0 / h;
    r.setZero(L + 1);
    jac.setZero(L + 1, L + 1);

    double v_top = 0.0;
    for (std::size_t k = 0; k < n; ++k) v_top += x[static_cast<Eigen::Index>(n + k)];

    const Diode dio = freewheel_diode(s_.freewheel, v_top - s_.v_dc);
    const double r_fw = s_.freewheel.diodes * s_.freewheel.r_balance;
    const double i_s = x[L] + (s_.v_dc - v_top) / r_fw - dio.i;
    const double di_s_dvtop = -1.0 / r_fw - dio.di;

    double v_src = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto g = static_cast<Eigen::Index>(k);
        const auto d = static_cast<Eigen::Index>(n + k);
        const auto& slot = s_.devices[k];
        const auto& p = slot.device;
        const double vg = x[g];
        const double vd = x[d];
        const double vdg = vd - vg;
        const double qgd = gate_drain_charge(p, vdg);
        const double cgd = gate_drain_capacitance(p, vdg);
        const double qds = drain_source_charge(p, vd);
        const double cds = drain_source_capacitance(p, vd);
        const Channel ch = channel_current(p, vg, vd);
        const double gf = sink_gate_factor(sinks_[k], vg, s_.rails.v_ee);
        const double gf_s = sink_gate_factor_slope(sinks_[k], vg, s_.rails.v_ee);
        const double c_p = k == 0 ? 0.0 : slot.c_p;

        // gate node
        r[g] = (f.vdrv[k] - vg) / slot.gate_resistance() - f.sink[k] * gf - c_p * (v_src - f.vsrc0[k]) * inv_h - f.inj[k] -
               (p.c_gs * (vg - f.vg0[k]) - (qgd - f.qgd0[k])) * inv_h;
        jac(g, g) = -1.0 / slot.gate_resistance() - f.sink[k] * gf_s - (p.c_gs + cgd) * inv_h;
        jac(g, d) = cgd * inv_h;
        for (std::size_t j = 0; j < k; ++j) jac(g, static_cast<Eigen::Index>(n + j)) -= c_p * inv_h;

        // drain node: the shared stack current enters every drain
        r[d] = i_s - ch.i - (qds - f.qds0[k]) * inv_h - (qgd - f.qgd0[k]) * inv_h - vd / s_.static_balance_r;
        jac(d, g) = -ch.di_dvgs + cgd * inv_h;
        jac(d, d) = -ch.di_dvds - cds * inv_h - cgd * inv_h - 1.0 / s_.static_balance_r;
        for (std::size_t j = 0; j < n; ++j) jac(d, static_cast<Eigen::Index>(n + j)) += di_s_dvtop;
        jac(d, L) = 1.0;

        v_src += vd;
    }

    // load branch
    if (f.i_fixed) {
        r[L] = x[L] - *f.i_fixed;
        jac(L, L) = 1.0;
        return;
    }
    const double r_load = s_.load_resistance();
    const double l_load = std::holds_alternative<InductiveLoad>(s_.load) ? std::get<InductiveLoad>(s_.load).l : 0.0;
    r[L] = l_load * (x[L] - f.il0) * inv_h + r_load * x[L] - (s_.v_dc - v_top);
    jac(L, L) = l_load * inv_h + r_load;
    for (std::size_t j = 0; j < n; ++j) jac(L, static_cast<Eigen::Index>(n + j)) = 1.0;
}

bool Network::newton(Eigen::VectorXd& x, const Frozen& f, double h) const {
    const std::size_t n = s_.n();
    Eigen::VectorXd r;
    Eigen::MatrixXd jac;
    for (int it = 0; it < opts_.max_newton; ++it) {
        assemble(x, f, h, r, jac);
        if (!r.allFinite()) return false;
        Eigen::VectorXd dx = jac.partialPivLu().solve(-r);
        if (!dx.allFinite()) return false;

        double max_g = 0.0;
        double max_d = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            max_g = std::max(max_g, std::abs(dx[static_cast<Eigen::Index>(k)]));
            max_d = std::max(max_d, std::abs(dx[static_cast<Eigen::Index>(n + k)]));
        }
        const double lambda = std::min({1.0, 5.0 / std::max(max_g, 1e-300), 200.0 / std::max(max_d, 1e-300)});
        x += lambda * dx;

        bool converged = lambda == 1.0;
        for (Eigen::Index i = 0; i < x.size() && converged; ++i) {
            const bool is_current = i == x.size() - 1;
            const double tol = (is_current ? opts_.i_tol : opts_.v_tol) + 1e-10 * std::abs(x[i]);
            converged = std::abs(dx[i]) <= tol;
        }
        if (converged) return true;
    }
    return false;
}

bool Network::step(SimState& st, double h, const InputSchedule& in, StepOutputs* out) const {
    const std::size_t n = s_.n();
    const double t_mid = st.time + 0.5 * h;
    Frozen f;
    f.vg0 = st.v_gs;
    f.vd0 = st.v_ds;
    f.il0 = st.i_load;
    f.qgd0.resize(n);
    f.qds0.resize(n);
    f.vsrc0.resize(n);
    f.vdrv.resize(n);
    f.sink.resize(n);
    f.inj.resize(n);
    f.vctrl.resize(n);
    double v_src = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& p = s_.devices[k].device;
        f.qgd0[k] = gate_drain_charge(p, st.v_ds[k] - st.v_gs[k]);
        f.qds0[k] = drain_source_charge(p, st.v_ds[k]);
        f.vsrc0[k] = v_src;
        v_src += st.v_ds[k];
        f.vdrv[k] = in.driver(k, t_mid);
        f.inj[k] = in.injection(k, t_mid);
        f.vctrl[k] = in.v_ctrl(k, t_mid);
        // First-order lag whose 50 % point sits at prop_delay; exact for a
        // piecewise-constant command.
        const auto& sink = sinks_[k];
        const double target = sink.transconductance() * f.vctrl[k];
        if (sink.prop_delay > 0.0) {
            const double tau = sink.prop_delay / std::log(2.0);
            f.sink[k] = target + (st.sink[k] - target) * std::exp(-h / tau);
        } else {
            f.sink[k] = target;
        }
    }

    Eigen::VectorXd x(static_cast<Eigen::Index>(2 * n + 1));
    for (std::size_t k = 0; k < n; ++k) {
        x[static_cast<Eigen::Index>(k)] = st.v_gs[k];
        x[static_cast<Eigen::Index>(n + k)] = st.v_ds[k];
    }
    x[static_cast<Eigen::Index>(2 * n)] = st.i_load;
    if (!newton(x, f, h)) return false;

    SimState next = st;
    next.time = st.time + h;
    next.sink = f.sink;
    for (std::size_t k = 0; k < n; ++k) {
        next.v_gs[k] = x[static_cast<Eigen::Index>(k)];
        next.v_ds[k] = x[static_cast<Eigen::Index>(n + k)];
    }
    next.i_load = x[static_cast<Eigen::Index>(2 * n)];

    if (out) {
        out->i_g.assign(n, 0.0);
        out->i_sink.assign(n, 0.0);
        out->i_cp.assign(n, 0.0);
        out->i_gd.assign(n, 0.0);
        out->v_ctrl = f.vctrl;
        double vsrc_new = 0.0;
        double v_top = 0.0;
        for (std::size_t k = 0; k < n; ++k) v_top += next.v_ds[k];
        for (std::size_t k = 0; k < n; ++k) {
            const auto& slot = s_.devices[k];
            const double vg = next.v_gs[k];
            out->i_sink[k] = f.sink[k] * sink_gate_factor(sinks_[k], vg, s_.rails.v_ee);
            out->i_cp[k] = k == 0 ? 0.0 : slot.c_p * (vsrc_new - f.vsrc0[k]) / h;
            out->i_gd[k] = (gate_drain_charge(slot.device, next.v_ds[k] - vg) - f.qgd0[k]) / h;
            out->i_g[k] = (f.vdrv[k] - vg) / slot.gate_resistance() - out->i_sink[k] - out->i_cp[k] - f.inj[k];
            vsrc_new += next.v_ds[k];
        }
        const Diode dio = freewheel_diode(s_.freewheel, v_top - s_.v_dc);
        out->i_d = next.i_load + (s_.v_dc - v_top) / (s_.freewheel.diodes * s_.freewheel.r_balance) - dio.i;
    }
    st = std::move(next);
    return true;
}

SimState Network::dc(double v_drv, std::optional<double> i_fixed, const SimState& guess) const {
    const std::size_t n = s_.n();
    Frozen f;
    f.dc = true;
    f.i_fixed = i_fixed;
    f.vg0.assign(n, 0.0);
    f.vd0.assign(n, 0.0);
    f.qgd0.assign(n, 0.0);
    f.qds0.assign(n, 0.0);
    f.vsrc0.assign(n, 0.0);
    f.vdrv.assign(n, v_drv);
    f.sink.assign(n, 0.0);
    f.inj.assign(n, 0.0);
    f.vctrl.assign(n, 0.0);

    Eigen::VectorXd x(static_cast<Eigen::Index>(2 * n + 1));
    for (std::size_t k = 0; k < n; ++k) {
        x[static_cast<Eigen::Index>(k)] = guess.v_gs[k];
        x[static_cast<Eigen::Index>(n + k)] = guess.v_ds[k];
    }
    x[static_cast<Eigen::Index>(2 * n)] = guess.i_load;
    if (!newton(x, f, 1.0)) throw SolverError("DC operating point did not converge", guess.time);

    SimState st = guess;
    for (std::size_t k = 0; k < n; ++k) {
        st.v_gs[k] = x[static_cast<Eigen::Index>(k)];
        st.v_ds[k] = x[static_cast<Eigen::Index>(n + k)];
    }
    st.i_load = x[static_cast<Eigen::Index>(2 * n)];
    st.sink.assign(n, 0.0);
    return st;
}

// ---- Simulator --------------------------------------------------------------

Simulator::Simulator(const StackScenario& s, const SolverOpts& opts, std::vector<SinkConfig> sinks, SimState initial,
                     double initial_driver_level)
    : net_(s, opts, std::move(sinks)), inputs_(s.n(), initial_driver_level), state_(std::move(initial)) {}

void Simulator::add_fine_interval(double a, double b) {
    fine_.emplace_back(a, b);
    inputs_.add_breakpoint(a);
    inputs_.add_breakpoint(b);
}

double Simulator::nominal_step(double t) const {
    for (const auto& [a, b] : fine_)
        if (t + kTimeEps >= a && t + kTimeEps < b) return net_.opts().dt;
    return net_.opts().coarse_dt;
}

void Simulator::advance_to(double t_target, const StepObserver& obs) {
    StepOutputs out;
    double h_retry = 0.0;
    while (state_.time < t_target - kTimeEps) {
        const double t = state_.time;
        const double bp = std::min(inputs_.next_breakpoint(t), t_target);
        double h = std::min(nominal_step(t), bp - t);
        if (h_retry > 0.0) h = std::min(h, h_retry);
        const bool lands = t + h >= bp - kTimeEps;

        SimState before = state_;
        if (!net_.step(state_, lands ? bp - t : h, inputs_, obs ? &out : nullptr)) {
            h_retry = 0.5 * h;
            if (h_retry < 1e-16) throw SolverError("Newton iteration failed to converge", t);
            continue;
        }
        if (lands) state_.time = bp;
        for (std::size_t k = 0; k < state_.v_ds.size(); ++k) {
            if (!std::isfinite(state_.v_ds[k]) || !std::isfinite(state_.v_gs[k]))
                throw SolverError("non-finite state", state_.time);
        }
        // Relax the retry cap gradually after a rejection.
        if (h_retry > 0.0) h_retry *= 2.0;
        if (h_retry >= nominal_step(state_.time)) h_retry = 0.0;
        if (obs) obs(before, state_, out);
    }
}

}  // namespace stacksim::detail
