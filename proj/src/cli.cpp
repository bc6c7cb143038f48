#include "stacksim/cli.hpp"

#include "stacksim/analysis.hpp"
#include "stacksim/errors.hpp"
#include "stacksim/scenario_io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <thread>

#ifndef STACKSIM_DATA_DIR
#define STACKSIM_DATA_DIR "data"
#endif

namespace stacksim {

namespace fs = std::filesystem;

std::string resolve_data_path(const std::string& name_or_path) {
    if (fs::exists(name_or_path)) return name_or_path;
    const std::string file = fs::path(name_or_path).extension() == ".json" ? name_or_path : name_or_path + ".json";
    for (const char* dir : {static_cast<const char*>(std::getenv("STACKSIM_DATA_DIR")), STACKSIM_DATA_DIR}) {
        if (!dir) continue;
        const fs::path p = fs::path(dir) / file;
        if (fs::exists(p)) return p.string();
    }
    throw InvalidInput("no such file or bundled name: " + name_or_path);
}

namespace {

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

unsigned sweep_threads() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* cap = std::getenv("STACKSIM_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(cap, &end, 10);
        if (end == cap || *end != '\0' || v < 1) throw InvalidInput("STACKSIM_THREADS must be a positive integer");
        n = std::min<unsigned>(n, static_cast<unsigned>(v));
    }
    return n;
}

struct Common {
    std::string scenario;
    std::string out = "runs";
    double dt = 0.0;
    long seed = 0;
    bool emit_plots = false;
};

void add_common(CLI::App* sub, Common& c, bool needs_scenario) {
    auto* opt = sub->add_option("--scenario", c.scenario, "scenario file or bundled scenario name");
    if (needs_scenario) opt->required();
    sub->add_option("--out", c.out, "output root directory");
    sub->add_option("--dt", c.dt, "fine time step in seconds");
    sub->add_option("--seed", c.seed, "reserved; runs are deterministic");
    sub->add_flag("--emit-plots", c.emit_plots, "write plotting scripts next to the CSVs");
}

ScenarioBundle load_bundle(const Common& c) {
    auto b = load_scenario(resolve_data_path(c.scenario));
    if (c.dt != 0.0) {
        b.solver.dt = c.dt;
        b.solver.validate();
        for (auto& s : b.sweeps) s.opts.dt = c.dt;
    }
    return b;
}

std::vector<DriveCommand> idle_drives(const ScenarioBundle& b) {
    std::vector<DriveCommand> d(b.scenario.n());
    for (std::size_t k = 0; k < d.size(); ++k) d[k].config = b.drives[k];
    return d;
}

void print_voltages(std::ostream& out, const char* label, const std::vector<double>& v) {
    out << label;
    for (double x : v) out << ' ' << fmt("%.2f", x);
    out << '\n';
}

int cmd_simulate(const Common& c, std::ostream& out) {
    const auto b = load_bundle(c);
    const double i_load = b.i_load.value_or(b.scenario.v_dc / b.scenario.load_resistance());
    const auto r = simulate_off_on(b.scenario, idle_drives(b), b.solver, i_load, TurnOnPhase{});
    RunResults res;
    res.command = "simulate";
    res.waveform = r.waveform;
    res.emit_plots = c.emit_plots;
    const auto m = write_outputs(b, res, c.out);
    print_voltages(out, "v_dsoff (V):", r.v_dsoff);
    std::vector<double> q(r.q_gd.size());
    for (std::size_t k = 0; k < q.size(); ++k) q[k] = r.q_gd[k] * 1e9;
    print_voltages(out, "q_gd (nC):", q);
    out << "alpha: " << fmt("%.4f", imbalance_ratio(r.v_dsoff, b.scenario.v_dc)) << '\n';
    out << "output: " << m.directory.string() << '\n';
    return kExitOk;
}

int cmd_closedloop(const Common& c, int cycles, bool open_loop, std::ostream& out) {
    if (cycles < 1) throw InvalidInput("--cycles must be >= 1");
    const auto b = load_bundle(c);
    const auto r = simulate_cycles(b.scenario, b.drives, b.controllers, cycles, b.solver, !open_loop);
    RunResults res;
    res.command = "closedloop";
    res.cycles = r.cycles;
    res.waveform = r.waveform;
    res.emit_plots = c.emit_plots;
    const auto m = write_outputs(b, res, c.out);
    for (const auto& cy : r.cycles) {
        out << "cycle " << cy.cycle << ':';
        print_voltages(out, " v_dsoff", cy.v_dsoff);
        out << "    v_daout";
        for (double v : cy.v_daout) out << ' ' << fmt("%.3f", v);
        out << "  mode";
        for (auto md : cy.mode) out << ' ' << to_string(md);
        out << "  alpha " << fmt("%.2f%%", 100.0 * cy.alpha) << '\n';
    }
    const auto settle = settling_cycle(r.cycles, 0.05);
    out << "settled (alpha <= 5%): " << (settle ? "cycle " + std::to_string(*settle) : std::string("no")) << '\n';
    out << "output: " << m.directory.string() << '\n';
    return kExitOk;
}

int cmd_sweep(const Common& c, std::ostream& out) {
    const auto b = load_bundle(c);
    if (b.sweeps.empty()) throw InvalidInput(c.scenario + ": scenario has no 'sweeps'");
    const unsigned threads = sweep_threads();
    RunResults res;
    res.command = "sweep";
    res.emit_plots = c.emit_plots;
    bool failed = false;
    for (const auto& spec : b.sweeps) {
        res.sweeps.push_back(run_sweep(spec, threads));
        out << "sweep " << to_string(spec.axis) << ":\n";
        for (const auto& row : res.sweeps.back()) {
            out << "  " << fmt("%.6g", row.axis_value) << "  ";
            if (row.ok) {
                out << "alpha " << fmt("%.2f%%", 100.0 * row.alpha) << '\n';
            } else {
                out << "failed: " << row.error << '\n';
                failed = true;
            }
        }
    }
    const auto m = write_outputs(b, res, c.out);
    out << "output: " << m.directory.string() << '\n';
    return failed ? kExitSolver : kExitOk;
}

int cmd_dpt(const Common& c, std::ostream& out) {
    const auto b = load_bundle(c);
    const DptSpec spec = b.dpt.value_or(DptSpec{});
    const auto r = run_dpt(b.scenario, b.drives, b.solver, spec);
    RunResults res;
    res.command = "dpt";
    res.dpt = r;
    res.emit_plots = c.emit_plots;
    const auto m = write_outputs(b, res, c.out);
    auto line = [&](const char* name, const DptRun& run) {
        out << name << ": E_off " << fmt("%.2f", run.energy.e_off_total * 1e6) << " uJ, E_on "
            << fmt("%.2f", run.energy.e_on_total * 1e6) << " uJ, alpha " << fmt("%.2f%%", 100.0 * run.alpha)
            << ", v_ctrl";
        for (double v : run.v_ctrl) out << ' ' << fmt("%.3f", v);
        out << '\n';
    };
    line("uncompensated", r.uncompensated);
    line("compensated", r.compensated);
    out << "output: " << m.directory.string() << '\n';
    return kExitOk;
}

int cmd_design(const std::string& inputs, const std::string& out_dir, std::ostream& out) {
    const auto d = load_design_inputs(resolve_data_path(inputs));
    const auto r = design_report(d);
    const std::string text = design_report_text(r);
    out << text;
    if (!out_dir.empty()) {
        const fs::path dir = fs::path(out_dir) / "design";
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
        write_file(dir / "design_report.txt", text);
        write_file(dir / "design_report.json", design_report_json(r));
        out << "output: " << dir.string() << '\n';
    }
    return r.feasible() ? kExitOk : kExitInfeasible;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Series-stack turn-off simulator with active gate-discharge balancing", "stacksim"};
    app.require_subcommand(1, 1);

    Common c;
    int cycles = 18;
    bool open_loop = false;
    std::string inputs;
    std::string design_out;

    auto* sim = app.add_subcommand("simulate", "single turn-off and turn-on transient");
    add_common(sim, c, true);
    auto* cl = app.add_subcommand("closedloop", "multi-cycle operation with the balancing regulator");
    add_common(cl, c, true);
    cl->add_option("--cycles", cycles, "number of switching cycles");
    cl->add_flag("--open-loop", open_loop, "keep the regulator output at zero");
    auto* sw = app.add_subcommand("sweep", "imbalance versus injected discharge, current and bus voltage");
    add_common(sw, c, true);
    auto* dpt = app.add_subcommand("dpt", "double-pulse switching energy with and without compensation");
    add_common(dpt, c, true);
    auto* des = app.add_subcommand("design", "component sizing report");
    des->add_option("--inputs", inputs, "design input file or bundled name")->required();
    des->add_option("--out", design_out, "output root directory");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        if (!args.empty()) err << "error: " << e.what() << '\n';
        err << app.help();
        return kExitInvalid;
    }

    try {
        if (sim->parsed()) return cmd_simulate(c, out);
        if (cl->parsed()) return cmd_closedloop(c, cycles, open_loop, out);
        if (sw->parsed()) return cmd_sweep(c, out);
        if (dpt->parsed()) return cmd_dpt(c, out);
        if (des->parsed()) return cmd_design(inputs, design_out, out);
    } catch (const InvalidInput& e) {
        err << "invalid input: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const SolverError& e) {
        err << "solver failure: " << e.what() << '\n';
        return kExitSolver;
    } catch (const Infeasible& e) {
        err << "infeasible: " << e.what() << '\n';
        return kExitInfeasible;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    }
    return kExitInvalid;
}

}  // namespace stacksim
