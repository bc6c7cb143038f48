#pragma once

#include <stdexcept>
#include <string>

namespace stacksim {

/// Input that violates a documented precondition or invariant.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Newton failure or non-finite state inside the transient integrator.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, double time)
        : std::runtime_error(what + " at t=" + std::to_string(time) + " s"), time_(time) {}

    [[nodiscard]] double time() const noexcept { return time_; }

private:
    double time_;
};

/// A design or timing budget that cannot be met.
class Infeasible : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace stacksim
