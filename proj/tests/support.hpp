#pragma once

#include "stacksim/scenario_io.hpp"

#include <doctest.h>

#include <string>

namespace stacksim::test {

/// Purely relative comparison; doctest's default scale would make small SI
/// quantities compare as equal to anything nearby.
inline doctest::Approx approx(double v, double rel = 1e-9) {
    // A zero target still needs a nonzero tolerance for exact matches to pass.
    return doctest::Approx(v).epsilon(rel).scale(v == 0.0 ? 1e-300 : 0.0);
}

inline std::string data_path(const std::string& file) { return std::string(STACKSIM_TEST_DATA_DIR) + "/" + file; }

inline DeviceParams bundled_device() { return load_device(data_path("c2m0040120d.json")); }

inline ScenarioBundle bundled(const std::string& name) { return load_scenario(data_path(name + ".json")); }

/// Two bundled devices at 1 kV on a 50 Ohm load with the given skew and
/// isolation capacitance on the upper device.
inline StackScenario two_device(double skew = 0.0, double c_p = 0.0) {
    StackScenario s;
    const auto d = bundled_device();
    s.devices = {StackDevice{d, 15.0, skew, 0.0}, StackDevice{d, 15.0, 0.0, c_p}};
    s.load = ResistiveLoad{50.0};
    return s;
}

inline std::vector<DriveCommand> idle(const StackScenario& s) { return std::vector<DriveCommand>(s.n()); }

}  // namespace stacksim::test
