#pragma once

// =============================================================================
// JSON device, scenario and design-input files; CSV and manifest output.
// =============================================================================

#include "stacksim/analysis.hpp"
#include "stacksim/circuit_sim.hpp"
#include "stacksim/design_calc.hpp"
#include "stacksim/gate_drive_ctl.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stacksim {

inline constexpr const char* kToolVersion = "1.0.0";

/// Everything a scenario file describes.
struct ScenarioBundle {
    StackScenario scenario;
    std::vector<GateDriveConfig> drives;       ///< one per device
    std::vector<ControllerState> controllers;  ///< one per device
    SolverOpts solver;
    std::optional<double> i_load;              ///< initial load current for single transients
    std::vector<SweepSpec> sweeps;             ///< base scenario and solver filled in from the bundle
    std::optional<DptSpec> dpt;
};

/// Parsers take the text and a source name used in messages. Relative
/// "device_file" references resolve against base_dir.
DeviceParams parse_device(const std::string& text, const std::string& source = "<device>");
ScenarioBundle parse_scenario(const std::string& text, const std::filesystem::path& base_dir,
                              const std::string& source = "<scenario>");
DesignInputs parse_design_inputs(const std::string& text, const std::filesystem::path& base_dir,
                                 const std::string& source = "<design>");

DeviceParams load_device(const std::filesystem::path& path);
ScenarioBundle load_scenario(const std::filesystem::path& path);
DesignInputs load_design_inputs(const std::filesystem::path& path);

/// Canonical, self-contained JSON (sorted keys, devices inline).
std::string write_device(const DeviceParams& d);
std::string write_scenario(const ScenarioBundle& b);

/// SHA-256 of the canonical scenario text, hex encoded.
std::string scenario_hash(const ScenarioBundle& b);

// --- CSV ---------------------------------------------------------------------

std::string waveform_csv(const WaveformSet& w);
std::string cycles_csv(const std::vector<CycleRecord>& cycles);
/// Columns: cycle, device, mode, e, v_o, v_daout.
std::string controller_log_csv(const std::vector<CycleRecord>& cycles);
std::string energy_csv(const DptResult& r);
std::string design_report_text(const DesignReport& r);
std::string design_report_json(const DesignReport& r);

// --- run directories ---------------------------------------------------------

struct RunResults {
    std::string command;  ///< subdirectory name inside the run directory
    std::optional<WaveformSet> waveform;
    std::vector<CycleRecord> cycles;
    std::vector<std::vector<SweepRow>> sweeps;
    std::optional<DptResult> dpt;
    bool emit_plots = false;
};

struct RunManifest {
    std::string scenario_hash;
    std::string tool_version;
    std::string created_utc;
    SolverOpts solver;
    std::filesystem::path directory;
    std::vector<std::string> files;  ///< relative to directory, manifest included
};

/// Writes into out_root/<hash prefix>/<command>/. CSV content depends only on
/// the inputs; the manifest carries the timestamp.
RunManifest write_outputs(const ScenarioBundle& b, const RunResults& r, const std::filesystem::path& out_root);

/// Writes text to path, surfacing I/O failures with the path.
void write_file(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

}  // namespace stacksim
