#include "support.hpp"

#include "stacksim/cli.hpp"

#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <unistd.h>

using namespace stacksim;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

struct TempDir {
    fs::path path = fs::temp_directory_path() / ("stacksim_cli_" + std::to_string(::getpid()));
    TempDir() { fs::remove_all(path); }
    ~TempDir() { fs::remove_all(path); }
};

std::string data(const std::string& f) { return test::data_path(f); }

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run({}).code == kExitInvalid);
    CHECK(run({"frobnicate"}).code == kExitInvalid);
    CHECK(run({"simulate"}).code == kExitInvalid);
    CHECK(run({"simulate", "--scenario", data("resistive.json"), "--bogus"}).code == kExitInvalid);
    const auto help = run({"--help"});
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("closedloop") != std::string::npos);
}

TEST_CASE("missing or malformed inputs exit with 1") {
    TempDir tmp;
    const auto r = run({"simulate", "--scenario", "/nonexistent/scenario.json", "--out", tmp.path.string()});
    CHECK(r.code == kExitInvalid);
    CHECK(r.err.find("invalid input") != std::string::npos);
    CHECK(run({"design", "--inputs", data("resistive.json")}).code == kExitInvalid);
    CHECK(run({"closedloop", "--scenario", data("resistive.json"), "--cycles", "0", "--out", tmp.path.string()})
              .code == kExitInvalid);
}

TEST_CASE("design report for the worked example") {
    const auto r = run({"design", "--inputs", data("design_c2m.json")});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("96.9") != std::string::npos);
    CHECK(r.out.find("3.58") != std::string::npos);
}

TEST_CASE("design resolves bundled names") {
    CHECK(run({"design", "--inputs", "design_c2m"}).code == kExitOk);
}

TEST_CASE("design with a smaller gate resistor is infeasible") {
    TempDir tmp;
    const auto r = run({"design", "--inputs", data("design_c2m_rg10.json"), "--out", tmp.path.string()});
    CHECK(r.code == kExitInfeasible);
    CHECK(fs::exists(tmp.path / "design" / "design_report.json"));
}

TEST_CASE("closed loop takes the first step and settles") {
    TempDir tmp;
    const auto r = run({"closedloop", "--scenario", data("resistive.json"), "--cycles", "4", "--out",
                        tmp.path.string()});
    REQUIRE(r.code == kExitOk);
    // +2 V step after DAC quantization.
    CHECK(r.out.find("cycle 2:") != std::string::npos);
    CHECK(r.out.find("v_daout 1.992 0.000") != std::string::npos);
    CHECK(r.out.find("settled (alpha <= 5%): cycle") != std::string::npos);
    const auto dirs = fs::directory_iterator(tmp.path);
    REQUIRE(dirs != fs::directory_iterator());
    const auto run_dir = dirs->path() / "closedloop";
    CHECK(fs::exists(run_dir / "cycles.csv"));
    CHECK(fs::exists(run_dir / "controller_log.csv"));
    CHECK(fs::exists(run_dir / "manifest.json"));
}

TEST_CASE("simulate writes a waveform") {
    TempDir tmp;
    const auto r = run({"simulate", "--scenario", data("skew.json"), "--out", tmp.path.string(), "--emit-plots"});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("alpha:") != std::string::npos);
    const auto run_dir = fs::directory_iterator(tmp.path)->path() / "simulate";
    CHECK(fs::exists(run_dir / "waveform.csv"));
    CHECK(fs::exists(run_dir / "plot_waveform.py"));
}

TEST_CASE("sweep without sweeps is invalid") {
    TempDir tmp;
    CHECK(run({"sweep", "--scenario", data("resistive.json"), "--out", tmp.path.string()}).code == kExitInvalid);
}
