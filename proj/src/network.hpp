#pragma once

// Internal: the discretized stack network and its step driver.

#include "stacksim/circuit_sim.hpp"

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace stacksim::detail {

struct CtrlWindow {
    double start = 0.0;
    double end = 0.0;
    double v_ctrl = 0.0;
};

/// Piecewise-constant per-device inputs. Values are evaluated at step
/// midpoints; every discontinuity is a breakpoint.
class InputSchedule {
public:
    explicit InputSchedule(std::size_t n, double initial_level);

    void add_edge(std::size_t k, double t, double level);
    void add_ctrl_window(std::size_t k, CtrlWindow w);
    void add_injection(std::size_t k, GatePulse p);
    void add_breakpoint(double t);

    [[nodiscard]] double driver(std::size_t k, double t) const;
    [[nodiscard]] double v_ctrl(std::size_t k, double t) const;
    [[nodiscard]] double injection(std::size_t k, double t) const;
    /// First breakpoint strictly after t, or +inf.
    [[nodiscard]] double next_breakpoint(double t) const;

private:
    struct Edge {
        double t;
        double level;
    };
    double initial_;
    std::vector<std::vector<Edge>> edges_;
    std::vector<std::vector<CtrlWindow>> windows_;
    std::vector<std::vector<GatePulse>> pulses_;
    mutable std::vector<double> breakpoints_;
    mutable bool sorted_ = true;
};

struct StepOutputs {
    std::vector<double> i_g, i_sink, i_cp, i_gd, v_ctrl;
    double i_d = 0.0;
};

struct Channel {
    double i = 0.0;
    double di_dvgs = 0.0;
    double di_dvds = 0.0;
};

/// Saturation current g_m * softplus(v_gs - v_th) blended into the ohmic
/// region through s * tanh(v_ds / (r_on * s)).
Channel channel_current(const DeviceParams& p, double v_gs, double v_ds);

class Network {
public:
    Network(const StackScenario& s, const SolverOpts& opts, std::vector<SinkConfig> sinks);

    /// Advances `st` by h with inputs taken at the step midpoint. Returns
    /// false when Newton fails to converge (state untouched).
    bool step(SimState& st, double h, const InputSchedule& in, StepOutputs* out) const;

    /// DC operating point with fixed driver levels and no sink activity. When
    /// i_fixed is set the inductor current is pinned to it.
    SimState dc(double v_drv, std::optional<double> i_fixed, const SimState& guess) const;

    [[nodiscard]] const StackScenario& scenario() const { return s_; }
    [[nodiscard]] const SolverOpts& opts() const { return opts_; }

private:
    struct Frozen;
    bool newton(Eigen::VectorXd& x, const Frozen& f, double h) const;
    void assemble(const Eigen::VectorXd& x, const Frozen& f, double h, Eigen::VectorXd& r, Eigen::MatrixXd& jac) const;

    StackScenario s_;
    SolverOpts opts_;
    std::vector<SinkConfig> sinks_;
};

using StepObserver = std::function<void(const SimState& before, const SimState& after, const StepOutputs&)>;

/// Owns a network, its inputs, and the stepping policy.
class Simulator {
public:
    Simulator(const StackScenario& s, const SolverOpts& opts, std::vector<SinkConfig> sinks, SimState initial,
              double initial_driver_level);

    InputSchedule& inputs() { return inputs_; }
    void add_fine_interval(double a, double b);
    SimState& state() { return state_; }
    [[nodiscard]] const Network& network() const { return net_; }

    /// Steps to exactly t_target, landing on every breakpoint on the way.
    void advance_to(double t_target, const StepObserver& obs = {});

private:
    [[nodiscard]] double nominal_step(double t) const;

    Network net_;
    InputSchedule inputs_;
    SimState state_;
    std::vector<std::pair<double, double>> fine_;
};

}  // namespace stacksim::detail
