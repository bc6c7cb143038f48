#include "stacksim/circuit_sim.hpp"

#include "network.hpp"
#include "stacksim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stacksim {

using detail::Simulator;
using detail::StepOutputs;

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw InvalidInput(msg);
}

bool positive(double x) { return x > 0.0 && std::isfinite(x); }

std::vector<SinkConfig> sinks_of(const std::vector<GateDriveConfig>& cfgs) {
    std::vector<SinkConfig> out;
    out.reserve(cfgs.size());
    for (const auto& c : cfgs) out.push_back(c.sink);
    return out;
}

/// Samples the simulator onto a uniform grid while it advances.
class Recorder {
public:
    Recorder(Simulator& sim, const StackScenario& s, double t0, double dt, bool enabled)
        : sim_(sim), s_(s), dt_(dt), enabled_(enabled && dt > 0.0) {
        w_.t0 = t0;
        w_.dt = dt;
        const std::size_t n = s.n();
        w_.devices.assign(n, DeviceChannels{});
        last_.i_g.assign(n, 0.0);
        last_.i_sink.assign(n, 0.0);
        last_.i_cp.assign(n, 0.0);
        last_.i_gd.assign(n, 0.0);
        last_.v_ctrl.assign(n, 0.0);
        const auto& st = sim_.state();
        for (std::size_t k = 0; k < n; ++k)
            last_.i_g[k] = (sim_.inputs().driver(k, st.time) - st.v_gs[k]) / s.devices[k].gate_resistance();
        last_.i_d = st.i_load + (s.v_dc - sum(st.v_ds)) / (s.freewheel.diodes * s.freewheel.r_balance);
        if (enabled_) push();
    }

    void advance_to(double t, const detail::StepObserver& extra = {}) {
        auto obs = [&](const SimState& b, const SimState& a, const StepOutputs& o) {
            last_ = o;
            if (extra) extra(b, a, o);
        };
        if (enabled_) {
            while (next_grid() <= t * (1.0 + 1e-15)) {
                sim_.advance_to(next_grid(), obs);
                push();
            }
        }
        sim_.advance_to(t, obs);
    }

    WaveformSet take() { return std::move(w_); }
    [[nodiscard]] const StepOutputs& last() const { return last_; }

private:
    static double sum(const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    [[nodiscard]] double next_grid() const { return w_.t0 + static_cast<double>(w_.time.size()) * dt_; }

    void push() {
        const auto& st = sim_.state();
        w_.time.push_back(next_grid());
        for (std::size_t k = 0; k < s_.n(); ++k) {
            auto& ch = w_.devices[k];
            ch.v_gs.push_back(st.v_gs[k]);
            ch.v_ds.push_back(st.v_ds[k]);
            ch.i_g.push_back(last_.i_g[k]);
            ch.i_sink.push_back(last_.i_sink[k]);
            ch.i_cp.push_back(last_.i_cp[k]);
            ch.i_gd.push_back(last_.i_gd[k]);
            ch.v_ctrl.push_back(last_.v_ctrl[k]);
        }
        w_.i_d.push_back(last_.i_d);
    }

    Simulator& sim_;
    const StackScenario& s_;
    double dt_;
    bool enabled_;
    WaveformSet w_;
    StepOutputs last_;
};

}  // namespace

std::size_t WaveformSet::index_at(double t) const {
    if (time.empty()) throw InvalidInput("index_at: empty waveform");
    auto it = std::upper_bound(time.begin(), time.end(), t + 1e-18);
    if (it == time.begin()) return 0;
    return static_cast<std::size_t>(std::distance(time.begin(), it) - 1);
}

double StackScenario::load_resistance() const {
    return std::visit([](const auto& l) { return l.r; }, load);
}

void StackScenario::validate() const {
    require(!devices.empty(), "scenario.devices must not be empty");
    require(positive(v_dc), "scenario.v_dc must be > 0");
    require(rails.v_dd > 0.0 && rails.v_ee < 0.0, "scenario.rails: require v_dd > 0 > v_ee");
    require(positive(f_s), "scenario.f_s must be > 0");
    require(duty > 0.0 && duty < 1.0, "scenario.duty must be in (0,1)");
    require(positive(static_balance_r), "scenario.static_balance_r must be > 0");
    require(freewheel.diodes >= 1, "scenario.freewheel.diodes must be >= 1");
    require(freewheel.v_forward >= 0.0, "scenario.freewheel.v_forward must be >= 0");
    require(positive(freewheel.r_balance), "scenario.freewheel.r_balance must be > 0");
    std::visit(
        [](const auto& l) {
            require(positive(l.r), "scenario.load.r must be > 0");
            if constexpr (std::is_same_v<std::decay_t<decltype(l)>, InductiveLoad>)
                require(positive(l.l), "scenario.load.l must be > 0");
        },
        load);
    for (std::size_t k = 0; k < devices.size(); ++k) {
        const auto& d = devices[k];
        const std::string at = "scenario.devices[" + std::to_string(k) + "]";
        d.device.validate();
        require(positive(d.r_g), at + ".r_g must be > 0");
        require(d.t_delay >= 0.0 && std::isfinite(d.t_delay), at + ".t_delay must be >= 0");
        require(d.c_p >= 0.0 && std::isfinite(d.c_p), at + ".c_p must be >= 0");
        const auto& tab = d.device.switch_times;
        if (tab.empty() || d.r_g < tab.front().r_g || d.r_g > tab.back().r_g) continue;
        const double t_sw = turnoff_time(d.device, d.r_g) + d.t_delay;
        const double t_on = duty * period();
        const double t_off = (1.0 - duty) * period();
        if (t_on <= t_sw || t_off <= t_sw) {
            std::ostringstream os;
            os << at << ": PWM on/off interval (" << t_on << " s / " << t_off
               << " s) is shorter than the turn-off time plus skew " << t_sw << " s";
            throw InvalidInput(os.str());
        }
    }
}

void SolverOpts::validate() const {
    require(positive(dt), "solver.dt must be > 0");
    require(positive(coarse_dt) && coarse_dt >= dt, "solver.coarse_dt must be >= dt");
    require(positive(fine_window), "solver.fine_window must be > 0");
    require(positive(sample_delay), "solver.sample_delay must be > 0");
    require(record_dt >= 0.0, "solver.record_dt must be >= 0");
    require(max_newton >= 1, "solver.max_newton must be >= 1");
    require(positive(v_tol) && positive(i_tol), "solver tolerances must be > 0");
}

SimState on_state(const StackScenario& s, std::optional<double> i_load) {
    s.validate();
    const std::size_t n = s.n();
    double r_on = 0.0;
    for (const auto& d : s.devices) r_on += d.device.r_ds_on;
    SimState g;
    g.v_gs.assign(n, s.rails.v_dd);
    g.sink.assign(n, 0.0);
    g.i_load = i_load ? *i_load : s.v_dc / (s.load_resistance() + r_on);
    g.v_ds.resize(n);
    for (std::size_t k = 0; k < n; ++k) g.v_ds[k] = s.devices[k].device.r_ds_on * g.i_load;
    // An inductor in steady state is a short, so the fixed current must be given.
    std::optional<double> pin = i_load;
    if (!pin && std::holds_alternative<InductiveLoad>(s.load)) pin = g.i_load;
    detail::Network net(s, SolverOpts{}, std::vector<SinkConfig>(n));
    return net.dc(s.rails.v_dd, pin, g);
}

SimState off_state(const StackScenario& s) {
    s.validate();
    const std::size_t n = s.n();
    SimState g;
    g.v_gs.assign(n, s.rails.v_ee);
    g.v_ds.assign(n, s.v_dc / static_cast<double>(n));
    g.sink.assign(n, 0.0);
    g.i_load = 0.0;
    detail::Network net(s, SolverOpts{}, std::vector<SinkConfig>(n));
    return net.dc(s.rails.v_ee, std::nullopt, g);
}

namespace {

TurnoffResult run_transient(const StackScenario& s, const std::vector<DriveCommand>& drive, const SolverOpts& opts,
                            std::optional<double> i_load, std::optional<TurnOnPhase> turn_on) {
    s.validate();
    opts.validate();
    const std::size_t n = s.n();
    require(drive.size() == n, "simulate_turnoff: one drive command per device required");
    std::vector<SinkConfig> sinks;
    for (std::size_t k = 0; k < n; ++k) {
        drive[k].config.validate();
        require(drive[k].v_ctrl >= 0.0 && drive[k].v_ctrl <= drive[k].config.v_da_max,
                "simulate_turnoff: v_ctrl must lie in [0, v_da_max]");
        if (drive[k].injection) {
            const auto& p = *drive[k].injection;
            require(p.end > p.start && p.start >= 0.0, "simulate_turnoff: injection needs 0 <= start < end");
        }
        sinks.push_back(drive[k].config.sink);
    }

    TurnoffResult res;
    res.initial = on_state(s, i_load);
    Simulator sim(s, opts, sinks, res.initial, s.rails.v_dd);
    auto& in = sim.inputs();
    res.fall_times.resize(n);
    std::vector<double> sample_at(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double fall = s.devices[k].t_delay;
        res.fall_times[k] = fall;
        in.add_edge(k, fall, s.rails.v_ee);
        if (drive[k].v_ctrl > 0.0) {
            const auto tr = schedule_triggers(drive[k].config, fall);
            in.add_ctrl_window(k, {tr.ctrl_start, tr.ctrl_end, drive[k].v_ctrl});
        }
        if (drive[k].injection) in.add_injection(k, *drive[k].injection);
        sample_at[k] = fall + opts.sample_delay;
        in.add_breakpoint(sample_at[k]);
    }
    const double last_sample = *std::max_element(sample_at.begin(), sample_at.end());
    double t_end = std::max(opts.fine_window, last_sample);
    sim.add_fine_interval(0.0, t_end);
    if (turn_on) {
        require(turn_on->t_gap > last_sample, "simulate_off_on: t_gap must follow every V_DSoff sample");
        require(positive(turn_on->t_after), "simulate_off_on: t_after must be > 0");
        res.rise_times.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            res.rise_times[k] = turn_on->t_gap + s.devices[k].t_delay;
            in.add_edge(k, res.rise_times[k], s.rails.v_dd);
        }
        t_end = turn_on->t_gap + turn_on->t_after;
        sim.add_fine_interval(turn_on->t_gap, t_end);
    }

    Recorder rec(sim, s, 0.0, opts.dt, true);
    res.v_dsoff.assign(n, 0.0);
    std::vector<double> order(sample_at);
    std::sort(order.begin(), order.end());
    for (double t : order) {
        rec.advance_to(t);
        for (std::size_t k = 0; k < n; ++k)
            if (sample_at[k] == t) res.v_dsoff[k] = sim.state().v_ds[k];
    }
    const double off_end = std::max(opts.fine_window, last_sample);
    rec.advance_to(off_end);
    res.sample_time = opts.sample_delay;
    res.final_state = sim.state();
    res.q_gd.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& p = s.devices[k].device;
        res.q_gd[k] = gate_drain_charge(p, res.final_state.v_ds[k] - res.final_state.v_gs[k]) -
                      gate_drain_charge(p, res.initial.v_ds[k] - res.initial.v_gs[k]);
    }
    if (turn_on) {
        rec.advance_to(t_end);
        res.final_state = sim.state();
    }
    res.waveform = rec.take();
    return res;
}

}  // namespace

TurnoffResult simulate_turnoff(const StackScenario& s, const std::vector<DriveCommand>& drive, const SolverOpts& opts,
                               std::optional<double> i_load) {
    return run_transient(s, drive, opts, i_load, std::nullopt);
}

TurnoffResult simulate_off_on(const StackScenario& s, const std::vector<DriveCommand>& drive, const SolverOpts& opts,
                              double i_load, TurnOnPhase turn_on) {
    return run_transient(s, drive, opts, i_load, turn_on);
}

double delta_q_delay(double v_dd, double v_miller, double r_g, double t_delay) {
    require(positive(r_g), "delta_q_delay: r_g must be > 0");
    require(t_delay >= 0.0, "delta_q_delay: t_delay must be >= 0");
    require(v_dd > v_miller, "delta_q_delay: v_dd must exceed the Miller plateau");
    return (v_dd - v_miller) / r_g * t_delay;
}

DeltaQcp delta_q_cp(double c_p1, double c_p2, double v_ds2, double v_dd, double v_ee, double r_ds_on, double i_d) {
    require(c_p1 >= 0.0 && c_p2 >= 0.0, "delta_q_cp: capacitances must be >= 0");
    require(v_ds2 >= 0.0, "delta_q_cp: v_ds2 must be >= 0");
    DeltaQcp out;
    out.full = c_p1 * ((v_ds2 + v_ee) - (v_dd + r_ds_on * i_d)) - c_p2 * (v_ee - v_dd);
    out.simplified = c_p1 * v_ds2;
    return out;
}

ClosedLoopResult simulate_cycles(const StackScenario& s, const std::vector<GateDriveConfig>& drives,
                                 std::vector<ControllerState> controllers, int n_cycles, const SolverOpts& opts,
                                 bool controller_enabled) {
    s.validate();
    opts.validate();
    const std::size_t n = s.n();
    require(n_cycles >= 1, "simulate_cycles: n_cycles must be >= 1");
    require(drives.size() == n && controllers.size() == n,
            "simulate_cycles: one gate-drive config and controller per device required");
    for (std::size_t k = 0; k < n; ++k) {
        drives[k].validate();
        controllers[k].validate();
        const auto& p = s.devices[k].device;
        const auto& tab = p.switch_times;
        const double t_off = tab.empty() ? 0.0 : turnoff_time(p, s.devices[k].r_g);
        const auto verdict = check_timing_budget(drives[k], s.f_s, s.duty, t_off);
        if (!verdict.ok) throw Infeasible("device " + std::to_string(k) + ": " + verdict.violation);
    }

    const double T = s.period();
    const double t_on = s.duty * T;
    Simulator sim(s, opts, sinks_of(drives), off_state(s), s.rails.v_ee);
    auto& in = sim.inputs();
    Recorder rec(sim, s, 0.0, opts.record_dt, opts.record_dt > 0.0);

    struct Pending {
        double value = 0.0;
        double ready = 0.0;
    };
    std::vector<double> applied(n, 0.0);
    std::vector<Pending> pending(n);

    ClosedLoopResult out;
    for (int c = 1; c <= n_cycles; ++c) {
        const double t0 = (c - 1) * T;
        CycleRecord rec_c;
        rec_c.cycle = c;
        std::vector<double> sample_at(n);
        for (std::size_t k = 0; k < n; ++k) {
            const double d = s.devices[k].t_delay;
            in.add_edge(k, t0 + d, s.rails.v_dd);
            const double fall = t0 + t_on + d;
            in.add_edge(k, fall, s.rails.v_ee);
            const auto tr = schedule_triggers(drives[k], fall);
            if (pending[k].ready <= tr.ctrl_start) applied[k] = pending[k].value;
            if (applied[k] > 0.0) in.add_ctrl_window(k, {tr.ctrl_start, tr.ctrl_end, applied[k]});
            sample_at[k] = tr.sample_time;
            in.add_breakpoint(sample_at[k]);
        }
        const double fine_end = std::min(opts.fine_window, std::min(t_on, T - t_on));
        sim.add_fine_interval(t0, t0 + fine_end);
        sim.add_fine_interval(t0 + t_on, t0 + t_on + fine_end);

        rec.advance_to(t0 + t_on);
        rec_c.i_load_at_off = sim.state().i_load;
        rec_c.v_daout = applied;

        rec_c.v_dsoff.assign(n, 0.0);
        rec_c.measured.assign(n, 0.0);
        rec_c.error.assign(n, 0.0);
        rec_c.v_o.assign(n, 0.0);
        rec_c.mode.assign(n, RegulatorMode::Step);
        std::vector<std::size_t> order(n);
        for (std::size_t k = 0; k < n; ++k) order[k] = k;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return sample_at[a] < sample_at[b]; });
        for (std::size_t k : order) {
            rec.advance_to(sample_at[k]);
            const double v = sim.state().v_ds[k];
            rec_c.v_dsoff[k] = v;
            const double meas = sample_vds(drives[k], v).device_volts(drives[k].sampler);
            rec_c.measured[k] = meas;
            if (controller_enabled) {
                auto r = regulator_update(controllers[k], drives[k], meas);
                controllers[k] = r.state;
                pending[k] = {dac_out(drives[k], r.v_o), sample_at[k] + drives[k].sampler.latency()};
            } else {
                controllers[k].last_error = controllers[k].v_ds_star / drives[k].sampler.divider_k - meas;
            }
            rec_c.error[k] = controllers[k].last_error;
            rec_c.v_o[k] = controllers[k].v_o;
            rec_c.mode[k] = controllers[k].mode;
        }
        const auto [lo, hi] = std::minmax_element(rec_c.v_dsoff.begin(), rec_c.v_dsoff.end());
        rec_c.alpha = (*hi - *lo) / s.v_dc;
        rec.advance_to(c * T);
        out.cycles.push_back(std::move(rec_c));
    }
    if (opts.record_dt > 0.0) out.waveform = rec.take();
    return out;
}

std::optional<int> settling_cycle(const std::vector<CycleRecord>& cycles, double alpha_max) {
    std::optional<int> first;
    for (const auto& c : cycles) {
        if (c.alpha <= alpha_max) {
            if (!first) first = c.cycle;
        } else {
            first.reset();
        }
    }
    return first;
}

}  // namespace stacksim
