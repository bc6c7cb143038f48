#include "stacksim/analysis.hpp"

#include "format.hpp"
#include "stacksim/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

namespace stacksim {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw InvalidInput(msg);
}

bool positive(double x) { return x > 0.0 && std::isfinite(x); }

std::vector<DriveCommand> commands(const std::vector<GateDriveConfig>& drives, const std::vector<double>& v_ctrl) {
    std::vector<DriveCommand> out(drives.size());
    for (std::size_t k = 0; k < drives.size(); ++k) {
        out[k].config = drives[k];
        out[k].v_ctrl = v_ctrl.empty() ? 0.0 : v_ctrl[k];
    }
    return out;
}

}  // namespace

double imbalance_ratio(const std::vector<double>& v_dsoff, double v_dc) {
    require(v_dsoff.size() >= 2, "imbalance_ratio: at least two devices required");
    require(positive(v_dc), "imbalance_ratio: v_dc must be > 0");
    const auto [lo, hi] = std::minmax_element(v_dsoff.begin(), v_dsoff.end());
    return (*hi - *lo) / v_dc;
}

// ---- sweeps -----------------------------------------------------------------

std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::DeltaQGoff: return "delta_q_goff";
        case SweepAxis::LoadCurrent: return "i_d";
        case SweepAxis::BusVoltage: return "v_dc";
    }
    return "?";
}

SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "delta_q_goff") return SweepAxis::DeltaQGoff;
    if (s == "i_d") return SweepAxis::LoadCurrent;
    if (s == "v_dc") return SweepAxis::BusVoltage;
    throw InvalidInput("sweep.axis: expected delta_q_goff, i_d or v_dc, got '" + s + "'");
}

void SweepSpec::validate() const {
    require(!grid.empty(), "sweep.grid must not be empty");
    for (std::size_t i = 1; i < grid.size(); ++i)
        require(grid[i] > grid[i - 1], "sweep.grid must be strictly increasing");
    require(delta_q_goff >= 0.0, "sweep.delta_q_goff must be >= 0");
    require(positive(i_d), "sweep.i_d must be > 0");
    require(positive(v_dc), "sweep.v_dc must be > 0");
    require(positive(pulse_width), "sweep.pulse_width must be > 0");
    require(inject_device < base.n(), "sweep.inject_device out of range");
    if (axis == SweepAxis::DeltaQGoff) require(grid.front() >= 0.0, "sweep: charges must be >= 0");
    else require(grid.front() > 0.0, "sweep: grid values must be > 0");
    opts.validate();
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, unsigned threads) {
    spec.validate();
    std::vector<SweepRow> rows(spec.grid.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto& r = rows[i];
        r.index = i;
        r.axis_value = spec.grid[i];
        r.delta_q_goff = spec.axis == SweepAxis::DeltaQGoff ? spec.grid[i] : spec.delta_q_goff;
        r.i_d = spec.axis == SweepAxis::LoadCurrent ? spec.grid[i] : spec.i_d;
        r.v_dc = spec.axis == SweepAxis::BusVoltage ? spec.grid[i] : spec.v_dc;
    }

    auto run_point = [&](SweepRow& r) {
        try {
            StackScenario s = spec.base;
            s.v_dc = r.v_dc;
            s.load = ResistiveLoad{r.v_dc / r.i_d};
            std::vector<DriveCommand> drive(s.n());
            if (r.delta_q_goff > 0.0) {
                const double start = s.devices[spec.inject_device].t_delay;
                drive[spec.inject_device].injection =
                    GatePulse{start, start + spec.pulse_width, r.delta_q_goff / spec.pulse_width};
            }
            const auto res = simulate_turnoff(s, drive, spec.opts);
            r.v_dsoff = res.v_dsoff;
            r.alpha = imbalance_ratio(res.v_dsoff, r.v_dc);
        } catch (const std::exception& e) {
            r.ok = false;
            r.error = e.what();
        }
    };

    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(rows.size())));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < rows.size(); i = next++) run_point(rows[i]);
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, std::size_t n_devices) {
    using detail::sci;
    std::ostringstream os;
    os << "index,axis_value,delta_q_goff,i_d,v_dc";
    for (std::size_t k = 0; k < n_devices; ++k) os << ",dev" << k << ".v_dsoff";
    os << ",alpha,status\n";
    for (const auto& r : rows) {
        os << r.index << ',' << sci(r.axis_value) << ',' << sci(r.delta_q_goff) << ',' << sci(r.i_d) << ','
           << sci(r.v_dc);
        for (std::size_t k = 0; k < n_devices; ++k) os << ',' << (k < r.v_dsoff.size() ? sci(r.v_dsoff[k]) : "");
        os << ',' << (r.ok ? sci(r.alpha) : "") << ',';
        if (r.ok) {
            os << "ok";
        } else {
            std::string msg = r.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            os << "error: " << msg;
        }
        os << '\n';
    }
    return os.str();
}

// ---- energy -----------------------------------------------------------------

std::pair<std::vector<double>, std::vector<double>> align_vi(const std::vector<double>& v,
                                                             const std::vector<double>& i, double dt, double offset) {
    require(v.size() == i.size() && !v.empty(), "align_vi: series must be non-empty and equal length");
    require(positive(dt), "align_vi: dt must be > 0");
    const double span = dt * static_cast<double>(v.size() - 1);
    require(std::abs(offset) < span, "align_vi: |offset| must be below the waveform span");
    std::vector<double> out(i.size());
    const double shift = offset / dt;
    const auto last = static_cast<double>(i.size() - 1);
    for (std::size_t n = 0; n < i.size(); ++n) {
        const double x = std::clamp(static_cast<double>(n) - shift, 0.0, last);
        const auto j = static_cast<std::size_t>(std::floor(x));
        const double f = x - static_cast<double>(j);
        out[n] = j + 1 < i.size() ? i[j] + f * (i[j + 1] - i[j]) : i[j];
    }
    return {v, std::move(out)};
}

double integrate_power(const std::vector<double>& v, const std::vector<double>& i, double t0, double dt, Window win) {
    require(v.size() == i.size() && v.size() >= 2, "integrate_power: need two or more equal-length samples");
    const double t_end = t0 + dt * static_cast<double>(v.size() - 1);
    const double tol = 1e-6 * dt;
    require(win.start >= t0 - tol && win.end <= t_end + tol && win.end > win.start,
            "integrate_power: window must lie inside the waveform span");
    auto p_at = [&](double t) {
        const double x = std::clamp((t - t0) / dt, 0.0, static_cast<double>(v.size() - 1));
        const auto j = std::min(static_cast<std::size_t>(std::floor(x)), v.size() - 2);
        const double f = x - static_cast<double>(j);
        const double vv = v[j] + f * (v[j + 1] - v[j]);
        const double ii = i[j] + f * (i[j + 1] - i[j]);
        return vv * ii;
    };
    // Interior samples plus the two (possibly fractional) window ends.
    const auto first = static_cast<std::size_t>(std::ceil((win.start - t0) / dt - 1e-9));
    const auto last = static_cast<std::size_t>(std::floor((win.end - t0) / dt + 1e-9));
    double e = 0.0;
    double t_prev = win.start;
    double p_prev = p_at(win.start);
    for (std::size_t n = first; n <= last && n < v.size(); ++n) {
        const double t = t0 + dt * static_cast<double>(n);
        if (t <= t_prev) continue;
        const double p = v[n] * i[n];
        e += 0.5 * (p + p_prev) * (t - t_prev);
        t_prev = t;
        p_prev = p;
    }
    if (win.end > t_prev) e += 0.5 * (p_at(win.end) + p_prev) * (win.end - t_prev);
    return e;
}

EnergyResult switching_energy(const WaveformSet& w, Window off, Window on, double offset) {
    require(w.size() >= 2 && positive(w.dt), "switching_energy: waveform too short");
    EnergyResult r;
    r.offset = offset;
    r.off_window = off;
    r.on_window = on;
    for (const auto& ch : w.devices) {
        const auto [v, i] = align_vi(ch.v_ds, w.i_d, w.dt, offset);
        r.e_off.push_back(integrate_power(v, i, w.t0, w.dt, off));
        r.e_on.push_back(integrate_power(v, i, w.t0, w.dt, on));
        r.e_off_total += r.e_off.back();
        r.e_on_total += r.e_on.back();
    }
    return r;
}

void DptSpec::validate() const {
    require(positive(i_test), "dpt.i_test must be > 0");
    require(positive(t_gap), "dpt.t_gap must be > 0");
    require(positive(t_after), "dpt.t_after must be > 0");
    for (const auto& w : {off_window, on_window})
        if (w) require(w->end > w->start && w->start >= 0.0, "dpt: windows need 0 <= start < end");
}

std::vector<double> calibrate_preset(const StackScenario& s, const std::vector<GateDriveConfig>& drives,
                                     const SolverOpts& opts, double i_load) {
    const std::size_t n = s.n();
    require(drives.size() == n, "calibrate_preset: one gate-drive config per device required");
    std::vector<double> v_ctrl(n, 0.0);
    auto off_voltages = [&](const std::vector<double>& vc) {
        return simulate_turnoff(s, commands(drives, vc), opts, i_load).v_dsoff;
    };
    // Two Gauss-Seidel passes; the mean share moves as other devices change.
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < n; ++k) {
            auto trial = v_ctrl;
            trial[k] = 0.0;
            auto v = off_voltages(trial);
            double mean = 0.0;
            for (double x : v) mean += x / static_cast<double>(n);
            if (v[k] >= mean) {
                v_ctrl[k] = 0.0;
                continue;
            }
            double lo = 0.0;
            double hi = drives[k].v_da_max;
            trial[k] = hi;
            v = off_voltages(trial);
            mean = 0.0;
            for (double x : v) mean += x / static_cast<double>(n);
            if (v[k] <= mean) {
                v_ctrl[k] = hi;
                continue;
            }
            for (int it = 0; it < 30 && hi - lo > 1e-4; ++it) {
                trial[k] = 0.5 * (lo + hi);
                v = off_voltages(trial);
                mean = 0.0;
                for (double x : v) mean += x / static_cast<double>(n);
                (v[k] < mean ? lo : hi) = trial[k];
            }
            v_ctrl[k] = 0.5 * (lo + hi);
        }
    }
    return v_ctrl;
}

DptResult run_dpt(const StackScenario& s, const std::vector<GateDriveConfig>& drives, const SolverOpts& opts,
                  const DptSpec& spec) {
    spec.validate();
    const Window off = spec.off_window.value_or(Window{0.0, opts.fine_window});
    const Window on = spec.on_window.value_or(Window{spec.t_gap, spec.t_gap + spec.t_after});
    auto run = [&](std::vector<double> v_ctrl) {
        DptRun r;
        r.v_ctrl = std::move(v_ctrl);
        r.transient = simulate_off_on(s, commands(drives, r.v_ctrl), opts, spec.i_test, {spec.t_gap, spec.t_after});
        r.energy = switching_energy(r.transient.waveform, off, on, spec.offset);
        r.alpha = imbalance_ratio(r.transient.v_dsoff, s.v_dc);
        return r;
    };
    DptResult out;
    out.uncompensated = run(std::vector<double>(s.n(), 0.0));
    out.compensated = run(calibrate_preset(s, drives, opts, spec.i_test));
    return out;
}

// ---- plot scripts -----------------------------------------------------------

std::string plot_script(const std::string& kind, const std::vector<std::string>& csv_files) {
    std::ostringstream os;
    os << "#!/usr/bin/env python3\n"
       << "# Renders " << kind << " outputs. Usage: python3 plot_" << kind << ".py\n"
       << "import csv\nimport os\nimport matplotlib\nmatplotlib.use('Agg')\nimport matplotlib.pyplot as plt\n\n"
       << "HERE = os.path.dirname(os.path.abspath(__file__))\nFILES = [";
    for (std::size_t i = 0; i < csv_files.size(); ++i) os << (i ? ", " : "") << "'" << csv_files[i] << "'";
    os << "]\n\n"
       << "def load(name):\n"
       << "    with open(os.path.join(HERE, name), newline='') as f:\n"
       << "        rows = list(csv.DictReader(f))\n"
       << "    return rows\n\n"
       << "def col(rows, key):\n"
       << "    return [float(r[key]) for r in rows if r.get(key) not in (None, '')]\n\n";
    if (kind == "sweep") {
        os << "for name in FILES:\n"
           << "    rows = [r for r in load(name) if r['status'] == 'ok']\n"
           << "    plt.figure()\n"
           << "    plt.plot(col(rows, 'axis_value'), [100 * a for a in col(rows, 'alpha')], 'o-')\n"
           << "    plt.ylabel('alpha (%)')\n    plt.xlabel(name)\n"
           << "    plt.savefig(os.path.join(HERE, name.replace('.csv', '.png')))\n";
    } else if (kind == "closedloop") {
        os << "rows = load(FILES[0])\n"
           << "fig, ax = plt.subplots(2, 1, sharex=True)\n"
           << "keys = [k for k in rows[0] if k.endswith('.v_dsoff')]\n"
           << "for k in keys:\n"
           << "    ax[0].plot(col(rows, 'cycle'), col(rows, k), 'o-', label=k)\n"
           << "for k in [k for k in rows[0] if k.endswith('.v_daout')]:\n"
           << "    ax[1].step(col(rows, 'cycle'), col(rows, k), where='post', label=k)\n"
           << "ax[0].legend(); ax[1].legend(); ax[1].set_xlabel('cycle')\n"
           << "fig.savefig(os.path.join(HERE, 'cycles.png'))\n";
    } else {
        os << "for name in FILES:\n"
           << "    rows = load(name)\n"
           << "    t = [1e9 * x for x in col(rows, 'time')]\n"
           << "    fig, ax = plt.subplots(3, 1, sharex=True)\n"
           << "    for k in rows[0]:\n"
           << "        if k.endswith('.v_ds'):\n            ax[0].plot(t, col(rows, k), label=k)\n"
           << "        elif k.endswith('.v_gs'):\n            ax[1].plot(t, col(rows, k), label=k)\n"
           << "    ax[2].plot(t, col(rows, 'i_d'), label='i_d')\n"
           << "    for a in ax:\n        a.legend()\n"
           << "    ax[2].set_xlabel('t (ns)')\n"
           << "    fig.savefig(os.path.join(HERE, name.replace('.csv', '.png')))\n";
    }
    return os.str();
}

}  // namespace stacksim
