#include "stacksim/scenario_io.hpp"

#include "format.hpp"
#include "stacksim/errors.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace stacksim {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using detail::sci;

namespace {

[[noreturn]] void fail(const std::string& ctx, const std::string& msg) { throw InvalidInput(ctx + ": " + msg); }

json parse_text(const std::string& text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1;
        std::size_t col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::ostringstream os;
        os << source << ":" << line << ":" << col << ": parse error: " << e.what();
        throw InvalidInput(os.str());
    }
}

void check_object(const json& j, const std::string& ctx, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(ctx, "expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) fail(ctx, "unknown key '" + k + "'");
}

double num(const json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) fail(ctx, std::string("missing key '") + key + "'");
    const auto& v = j.at(key);
    if (!v.is_number()) fail(ctx + "." + key, "expected a number");
    return v.get<double>();
}

double num_or(const json& j, const char* key, double fallback, const std::string& ctx) {
    return j.contains(key) ? num(j, key, ctx) : fallback;
}

int int_or(const json& j, const char* key, int fallback, const std::string& ctx) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer()) fail(ctx + "." + key, "expected an integer");
    return v.get<int>();
}

std::string str(const json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) fail(ctx, std::string("missing key '") + key + "'");
    const auto& v = j.at(key);
    if (!v.is_string()) fail(ctx + "." + key, "expected a string");
    return v.get<std::string>();
}

std::vector<double> num_list(const json& j, const std::string& ctx) {
    if (!j.is_array()) fail(ctx, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& x : j) {
        if (!x.is_number()) fail(ctx, "expected an array of numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

std::string read_or_fail(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- capacitance laws -------------------------------------------------------

std::vector<CapPoint> points_from(const json& j, const std::string& ctx) {
    if (!j.is_array()) fail(ctx, "expected an array of [v, c] pairs");
    std::vector<CapPoint> pts;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& row = j[i];
        if (!row.is_array() || row.size() != 2 || !row[0].is_number() || !row[1].is_number())
            fail(ctx + " row " + std::to_string(i), "expected [v, c]");
        pts.push_back({row[0].get<double>(), row[1].get<double>()});
    }
    return pts;
}

json points_to(const std::vector<CapPoint>& pts) {
    json a = json::array();
    for (const auto& p : pts) a.push_back(json::array({p.v, p.c}));
    return a;
}

template <class Law>
Law law_from(const json& j, const std::string& ctx, bool allow_constant) {
    if (!j.is_object()) fail(ctx, "expected an object");
    const std::string type = str(j, "type", ctx);
    if (type == "parametric") {
        check_object(j, ctx, {"type", "c0", "v_k"});
        return ParametricLaw{num(j, "c0", ctx), num(j, "v_k", ctx)};
    }
    if (type == "table") {
        check_object(j, ctx, {"type", "points"});
        if (!j.contains("points")) fail(ctx, "missing key 'points'");
        return TabulatedLaw{points_from(j.at("points"), ctx + ".points")};
    }
    if (type == "constant" && allow_constant) {
        check_object(j, ctx, {"type", "c"});
        if constexpr (std::is_same_v<Law, CdsLaw>) return ConstantLaw{num(j, "c", ctx)};
    }
    fail(ctx + ".type", "unsupported law '" + type + "'");
}

json law_to(const ParametricLaw& l) { return {{"type", "parametric"}, {"c0", l.c0}, {"v_k", l.v_k}}; }
json law_to(const TabulatedLaw& l) { return {{"type", "table"}, {"points", points_to(l.points)}}; }
json law_to(const ConstantLaw& l) { return {{"type", "constant"}, {"c", l.c}}; }

// ---- device -----------------------------------------------------------------

DeviceParams device_from(const json& j, const std::string& ctx) {
    check_object(j, ctx,
                 {"name", "v_th", "g_m", "c_gs", "c_gd_on", "r_ds_on", "r_g_int", "cgd_law", "c_ds", "switch_times",
                  "crss_table", "fit", "notes"});
    DeviceParams d;
    d.name = j.contains("name") ? str(j, "name", ctx) : std::string{};
    d.v_th = num(j, "v_th", ctx);
    d.g_m = num(j, "g_m", ctx);
    d.c_gs = num(j, "c_gs", ctx);
    d.c_gd_on = num(j, "c_gd_on", ctx);
    d.r_ds_on = num(j, "r_ds_on", ctx);
    d.r_g_int = num_or(j, "r_g_int", 0.0, ctx);
    if (!j.contains("cgd_law")) fail(ctx, "missing key 'cgd_law'");
    d.cgd_law = law_from<CgdLaw>(j.at("cgd_law"), ctx + ".cgd_law", false);
    if (!j.contains("c_ds")) fail(ctx, "missing key 'c_ds'");
    d.c_ds = law_from<CdsLaw>(j.at("c_ds"), ctx + ".c_ds", true);
    if (j.contains("switch_times")) {
        const auto& st = j.at("switch_times");
        if (!st.is_array()) fail(ctx + ".switch_times", "expected an array");
        for (std::size_t i = 0; i < st.size(); ++i) {
            const std::string rctx = ctx + ".switch_times[" + std::to_string(i) + "]";
            check_object(st[i], rctx, {"r_g", "t_d_off", "t_f"});
            d.switch_times.push_back({num(st[i], "r_g", rctx), num(st[i], "t_d_off", rctx), num(st[i], "t_f", rctx)});
        }
    }
    try {
        d.validate();
    } catch (const InvalidInput& e) {
        fail(ctx, e.what());
    }
    return d;
}

json device_to(const DeviceParams& d) {
    json j;
    j["name"] = d.name;
    j["v_th"] = d.v_th;
    j["g_m"] = d.g_m;
    j["c_gs"] = d.c_gs;
    j["c_gd_on"] = d.c_gd_on;
    j["r_ds_on"] = d.r_ds_on;
    j["r_g_int"] = d.r_g_int;
    j["cgd_law"] = std::visit([](const auto& l) { return law_to(l); }, d.cgd_law);
    j["c_ds"] = std::visit([](const auto& l) { return law_to(l); }, d.c_ds);
    json st = json::array();
    for (const auto& r : d.switch_times) st.push_back({{"r_g", r.r_g}, {"t_d_off", r.t_d_off}, {"t_f", r.t_f}});
    j["switch_times"] = st;
    return j;
}

DeviceParams device_ref(const json& holder, const fs::path& base_dir, const std::string& ctx) {
    if (holder.contains("device")) return device_from(holder.at("device"), ctx + ".device");
    if (holder.contains("device_file")) {
        const fs::path p = base_dir / str(holder, "device_file", ctx);
        return device_from(parse_text(read_or_fail(p), p.string()), p.string());
    }
    fail(ctx, "missing key 'device' or 'device_file'");
}

// ---- gate drive and controller ----------------------------------------------

void apply_gate_drive(const json& j, GateDriveConfig& g, const std::string& ctx) {
    check_object(j, ctx, {"sink", "trigger", "sampler", "v_da_max"});
    if (j.contains("sink")) {
        const auto& s = j.at("sink");
        const std::string c = ctx + ".sink";
        check_object(s, c,
                     {"r1", "r2", "r3", "r4", "r5", "v_be_on", "v_ce1_sat", "v_ce3_sat", "prop_delay", "v_out_neg"});
        g.sink.r1 = num_or(s, "r1", g.sink.r1, c);
        g.sink.r2 = num_or(s, "r2", g.sink.r2, c);
        g.sink.r3 = num_or(s, "r3", g.sink.r3, c);
        g.sink.r4 = num_or(s, "r4", g.sink.r4, c);
        g.sink.r5 = num_or(s, "r5", g.sink.r5, c);
        g.sink.v_be_on = num_or(s, "v_be_on", g.sink.v_be_on, c);
        g.sink.v_ce1_sat = num_or(s, "v_ce1_sat", g.sink.v_ce1_sat, c);
        g.sink.v_ce3_sat = num_or(s, "v_ce3_sat", g.sink.v_ce3_sat, c);
        g.sink.prop_delay = num_or(s, "prop_delay", g.sink.prop_delay, c);
        g.sink.v_out_neg = num_or(s, "v_out_neg", g.sink.v_out_neg, c);
    }
    if (j.contains("trigger")) {
        const auto& t = j.at("trigger");
        const std::string c = ctx + ".trigger";
        check_object(t, c, {"t_st", "t_ctrl", "prop_delay"});
        g.trigger.t_st = num_or(t, "t_st", g.trigger.t_st, c);
        g.trigger.t_ctrl = num_or(t, "t_ctrl", g.trigger.t_ctrl, c);
        g.trigger.prop_delay = num_or(t, "prop_delay", g.trigger.prop_delay, c);
    }
    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        const std::string c = ctx + ".sampler";
        check_object(s, c,
                     {"divider_k", "adc_bits", "adc_vref", "adc_conv_time", "algo_time", "dac_bits", "dac_vref",
                      "dac_settle", "dac_prop"});
        g.sampler.divider_k = num_or(s, "divider_k", g.sampler.divider_k, c);
        g.sampler.adc_bits = int_or(s, "adc_bits", g.sampler.adc_bits, c);
        g.sampler.adc_vref = num_or(s, "adc_vref", g.sampler.adc_vref, c);
        g.sampler.adc_conv_time = num_or(s, "adc_conv_time", g.sampler.adc_conv_time, c);
        g.sampler.algo_time = num_or(s, "algo_time", g.sampler.algo_time, c);
        g.sampler.dac_bits = int_or(s, "dac_bits", g.sampler.dac_bits, c);
        g.sampler.dac_vref = num_or(s, "dac_vref", g.sampler.dac_vref, c);
        g.sampler.dac_settle = num_or(s, "dac_settle", g.sampler.dac_settle, c);
        g.sampler.dac_prop = num_or(s, "dac_prop", g.sampler.dac_prop, c);
    }
    g.v_da_max = num_or(j, "v_da_max", g.v_da_max, ctx);
}

json gate_drive_to(const GateDriveConfig& g) {
    json j;
    j["sink"] = {{"r1", g.sink.r1},
                 {"r2", g.sink.r2},
                 {"r3", g.sink.r3},
                 {"r4", g.sink.r4},
                 {"r5", g.sink.r5},
                 {"v_be_on", g.sink.v_be_on},
                 {"v_ce1_sat", g.sink.v_ce1_sat},
                 {"v_ce3_sat", g.sink.v_ce3_sat},
                 {"prop_delay", g.sink.prop_delay},
                 {"v_out_neg", g.sink.v_out_neg}};
    j["trigger"] = {{"t_st", g.trigger.t_st}, {"t_ctrl", g.trigger.t_ctrl}, {"prop_delay", g.trigger.prop_delay}};
    j["sampler"] = {{"divider_k", g.sampler.divider_k},   {"adc_bits", g.sampler.adc_bits},
                    {"adc_vref", g.sampler.adc_vref},     {"adc_conv_time", g.sampler.adc_conv_time},
                    {"algo_time", g.sampler.algo_time},   {"dac_bits", g.sampler.dac_bits},
                    {"dac_vref", g.sampler.dac_vref},     {"dac_settle", g.sampler.dac_settle},
                    {"dac_prop", g.sampler.dac_prop}};
    j["v_da_max"] = g.v_da_max;
    return j;
}

void apply_controller(const json& j, ControllerState& c, const std::string& ctx) {
    check_object(j, ctx, {"e_th1", "e_th2", "e_th3", "v_th1", "v_th2", "v_th3", "k_p", "k_i", "v_ds_star", "v_o"});
    c.e_th1 = num_or(j, "e_th1", c.e_th1, ctx);
    c.e_th2 = num_or(j, "e_th2", c.e_th2, ctx);
    c.e_th3 = num_or(j, "e_th3", c.e_th3, ctx);
    c.v_th1 = num_or(j, "v_th1", c.v_th1, ctx);
    c.v_th2 = num_or(j, "v_th2", c.v_th2, ctx);
    c.v_th3 = num_or(j, "v_th3", c.v_th3, ctx);
    c.k_p = num_or(j, "k_p", c.k_p, ctx);
    c.k_i = num_or(j, "k_i", c.k_i, ctx);
    c.v_ds_star = num_or(j, "v_ds_star", c.v_ds_star, ctx);
    c.v_o = num_or(j, "v_o", c.v_o, ctx);
}

json controller_to(const ControllerState& c) {
    return {{"e_th1", c.e_th1}, {"e_th2", c.e_th2}, {"e_th3", c.e_th3}, {"v_th1", c.v_th1},
            {"v_th2", c.v_th2}, {"v_th3", c.v_th3}, {"k_p", c.k_p},     {"k_i", c.k_i},
            {"v_ds_star", c.v_ds_star}, {"v_o", c.v_o}};
}

void apply_solver(const json& j, SolverOpts& o, const std::string& ctx) {
    check_object(j, ctx,
                 {"dt", "coarse_dt", "fine_window", "sample_delay", "record_dt", "max_newton", "v_tol", "i_tol"});
    o.dt = num_or(j, "dt", o.dt, ctx);
    o.coarse_dt = num_or(j, "coarse_dt", o.coarse_dt, ctx);
    o.fine_window = num_or(j, "fine_window", o.fine_window, ctx);
    o.sample_delay = num_or(j, "sample_delay", o.sample_delay, ctx);
    o.record_dt = num_or(j, "record_dt", o.record_dt, ctx);
    o.max_newton = int_or(j, "max_newton", o.max_newton, ctx);
    o.v_tol = num_or(j, "v_tol", o.v_tol, ctx);
    o.i_tol = num_or(j, "i_tol", o.i_tol, ctx);
}

json solver_to(const SolverOpts& o) {
    return {{"dt", o.dt},       {"coarse_dt", o.coarse_dt},   {"fine_window", o.fine_window},
            {"sample_delay", o.sample_delay}, {"record_dt", o.record_dt}, {"max_newton", o.max_newton},
            {"v_tol", o.v_tol}, {"i_tol", o.i_tol}};
}

SweepSpec sweep_from(const json& j, const std::string& ctx) {
    check_object(j, ctx, {"axis", "grid", "delta_q_goff", "i_d", "v_dc", "pulse_width", "inject_device"});
    SweepSpec s;
    s.axis = sweep_axis_from_string(str(j, "axis", ctx));
    if (!j.contains("grid")) fail(ctx, "missing key 'grid'");
    s.grid = num_list(j.at("grid"), ctx + ".grid");
    s.delta_q_goff = num_or(j, "delta_q_goff", s.delta_q_goff, ctx);
    s.i_d = num_or(j, "i_d", s.i_d, ctx);
    s.v_dc = num_or(j, "v_dc", s.v_dc, ctx);
    s.pulse_width = num_or(j, "pulse_width", s.pulse_width, ctx);
    s.inject_device = static_cast<std::size_t>(int_or(j, "inject_device", static_cast<int>(s.inject_device), ctx));
    return s;
}

json sweep_to(const SweepSpec& s) {
    return {{"axis", to_string(s.axis)},   {"grid", s.grid},
            {"delta_q_goff", s.delta_q_goff}, {"i_d", s.i_d},
            {"v_dc", s.v_dc},             {"pulse_width", s.pulse_width},
            {"inject_device", s.inject_device}};
}

std::optional<Window> window_from(const json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) return std::nullopt;
    const auto v = num_list(j.at(key), ctx + "." + key);
    if (v.size() != 2) fail(ctx + "." + key, "expected [start, end]");
    return Window{v[0], v[1]};
}

DptSpec dpt_from(const json& j, const std::string& ctx) {
    check_object(j, ctx, {"i_test", "t_gap", "t_after", "offset", "off_window", "on_window"});
    DptSpec d;
    d.i_test = num_or(j, "i_test", d.i_test, ctx);
    d.t_gap = num_or(j, "t_gap", d.t_gap, ctx);
    d.t_after = num_or(j, "t_after", d.t_after, ctx);
    d.offset = num_or(j, "offset", d.offset, ctx);
    d.off_window = window_from(j, "off_window", ctx);
    d.on_window = window_from(j, "on_window", ctx);
    return d;
}

json dpt_to(const DptSpec& d) {
    json j = {{"i_test", d.i_test}, {"t_gap", d.t_gap}, {"t_after", d.t_after}, {"offset", d.offset}};
    if (d.off_window) j["off_window"] = {d.off_window->start, d.off_window->end};
    if (d.on_window) j["on_window"] = {d.on_window->start, d.on_window->end};
    return j;
}

std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("SHA-256 digest failed");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

}  // namespace

// ---- public parsing ---------------------------------------------------------

DeviceParams parse_device(const std::string& text, const std::string& source) {
    return device_from(parse_text(text, source), source);
}

ScenarioBundle parse_scenario(const std::string& text, const fs::path& base_dir, const std::string& source) {
    const json j = parse_text(text, source);
    const std::string& ctx = source;
    check_object(j, ctx,
                 {"name", "device", "device_file", "devices", "v_dc", "rails", "load", "freewheel",
                  "static_balance_r", "f_s", "duty", "gate_drive", "controller", "solver", "i_load", "sweeps", "dpt",
                  "notes"});
    ScenarioBundle b;
    auto& s = b.scenario;
    s.name = j.contains("name") ? str(j, "name", ctx) : std::string{};
    s.v_dc = num_or(j, "v_dc", s.v_dc, ctx);
    s.f_s = num_or(j, "f_s", s.f_s, ctx);
    s.duty = num_or(j, "duty", s.duty, ctx);
    s.static_balance_r = num_or(j, "static_balance_r", s.static_balance_r, ctx);
    if (j.contains("rails")) {
        check_object(j.at("rails"), ctx + ".rails", {"v_dd", "v_ee"});
        s.rails.v_dd = num_or(j.at("rails"), "v_dd", s.rails.v_dd, ctx + ".rails");
        s.rails.v_ee = num_or(j.at("rails"), "v_ee", s.rails.v_ee, ctx + ".rails");
    }
    if (j.contains("load")) {
        const auto& l = j.at("load");
        const std::string c = ctx + ".load";
        const std::string type = str(l, "type", c);
        if (type == "resistive") {
            check_object(l, c, {"type", "r"});
            s.load = ResistiveLoad{num(l, "r", c)};
        } else if (type == "inductive") {
            check_object(l, c, {"type", "r", "l"});
            s.load = InductiveLoad{num(l, "r", c), num(l, "l", c)};
        } else {
            fail(c + ".type", "expected 'resistive' or 'inductive', got '" + type + "'");
        }
    }
    if (j.contains("freewheel")) {
        const auto& f = j.at("freewheel");
        const std::string c = ctx + ".freewheel";
        check_object(f, c, {"diodes", "v_forward", "r_balance"});
        s.freewheel.diodes = int_or(f, "diodes", s.freewheel.diodes, c);
        s.freewheel.v_forward = num_or(f, "v_forward", s.freewheel.v_forward, c);
        s.freewheel.r_balance = num_or(f, "r_balance", s.freewheel.r_balance, c);
    }

    GateDriveConfig gd_default;
    if (j.contains("gate_drive")) apply_gate_drive(j.at("gate_drive"), gd_default, ctx + ".gate_drive");
    ControllerState ctl_default;
    if (j.contains("controller")) apply_controller(j.at("controller"), ctl_default, ctx + ".controller");

    std::optional<DeviceParams> shared_device;
    if (j.contains("device") || j.contains("device_file")) shared_device = device_ref(j, base_dir, ctx);

    if (!j.contains("devices") || !j.at("devices").is_array()) fail(ctx, "missing array 'devices'");
    const auto& devs = j.at("devices");
    if (devs.empty()) fail(ctx + ".devices", "must not be empty");
    for (std::size_t k = 0; k < devs.size(); ++k) {
        const auto& d = devs[k];
        const std::string c = ctx + ".devices[" + std::to_string(k) + "]";
        check_object(d, c, {"device", "device_file", "r_g", "t_delay", "c_p", "gate_drive", "controller"});
        StackDevice sd;
        if (d.contains("device") || d.contains("device_file")) {
            sd.device = device_ref(d, base_dir, c);
        } else if (shared_device) {
            sd.device = *shared_device;
        } else {
            fail(c, "no device given and no scenario-level device");
        }
        sd.r_g = num_or(d, "r_g", sd.r_g, c);
        sd.t_delay = num_or(d, "t_delay", sd.t_delay, c);
        sd.c_p = num_or(d, "c_p", sd.c_p, c);
        s.devices.push_back(sd);
        GateDriveConfig gd = gd_default;
        if (d.contains("gate_drive")) apply_gate_drive(d.at("gate_drive"), gd, c + ".gate_drive");
        ControllerState cs = ctl_default;
        if (d.contains("controller")) apply_controller(d.at("controller"), cs, c + ".controller");
        b.drives.push_back(gd);
        b.controllers.push_back(cs);
    }
    if (j.contains("solver")) apply_solver(j.at("solver"), b.solver, ctx + ".solver");
    if (j.contains("i_load")) b.i_load = num(j, "i_load", ctx);
    if (j.contains("sweeps")) {
        const auto& sw = j.at("sweeps");
        if (!sw.is_array()) fail(ctx + ".sweeps", "expected an array");
        for (std::size_t i = 0; i < sw.size(); ++i) {
            auto spec = sweep_from(sw[i], ctx + ".sweeps[" + std::to_string(i) + "]");
            spec.base = s;
            spec.opts = b.solver;
            b.sweeps.push_back(std::move(spec));
        }
    }
    if (j.contains("dpt")) b.dpt = dpt_from(j.at("dpt"), ctx + ".dpt");

    try {
        s.validate();
        b.solver.validate();
        for (std::size_t k = 0; k < s.n(); ++k) {
            b.drives[k].validate();
            b.controllers[k].validate();
        }
        for (const auto& sw : b.sweeps) sw.validate();
        if (b.dpt) b.dpt->validate();
    } catch (const InvalidInput& e) {
        fail(ctx, e.what());
    }
    return b;
}

DesignInputs parse_design_inputs(const std::string& text, const fs::path& base_dir, const std::string& source) {
    const json j = parse_text(text, source);
    const std::string& c = source;
    check_object(j, c,
                 {"device", "device_file", "v_dd", "v_ee", "r_g", "i_d", "driver_skew_max", "c_p_total", "v_dc", "n",
                  "v_out_neg", "v_be_on", "v_ce1_sat", "v_ce3_sat", "aux_response", "f_s", "duty_range", "t_sa_adc",
                  "installed", "notes"});
    DesignInputs d;
    d.device = device_ref(j, base_dir, c);
    d.v_dd = num_or(j, "v_dd", d.v_dd, c);
    d.v_ee = num_or(j, "v_ee", d.v_ee, c);
    d.r_g = num_or(j, "r_g", d.r_g, c);
    d.i_d = num_or(j, "i_d", d.i_d, c);
    d.driver_skew_max = num_or(j, "driver_skew_max", d.driver_skew_max, c);
    d.c_p_total = num_or(j, "c_p_total", d.c_p_total, c);
    d.v_dc = num_or(j, "v_dc", d.v_dc, c);
    d.n = int_or(j, "n", d.n, c);
    d.v_out_neg = num_or(j, "v_out_neg", d.v_out_neg, c);
    d.v_be_on = num_or(j, "v_be_on", d.v_be_on, c);
    d.v_ce1_sat = num_or(j, "v_ce1_sat", d.v_ce1_sat, c);
    d.v_ce3_sat = num_or(j, "v_ce3_sat", d.v_ce3_sat, c);
    d.aux_response = num_or(j, "aux_response", d.aux_response, c);
    d.f_s = num_or(j, "f_s", d.f_s, c);
    if (j.contains("duty_range")) {
        const auto v = num_list(j.at("duty_range"), c + ".duty_range");
        if (v.size() != 2) fail(c + ".duty_range", "expected [min, max]");
        d.duty_range = {v[0], v[1]};
    }
    d.t_sa_adc = num_or(j, "t_sa_adc", d.t_sa_adc, c);
    if (j.contains("installed")) {
        const auto& in = j.at("installed");
        const std::string ic = c + ".installed";
        check_object(in, ic, {"r3", "r4", "r5", "v_da_max"});
        d.installed.r3 = num_or(in, "r3", d.installed.r3, ic);
        d.installed.r4 = num_or(in, "r4", d.installed.r4, ic);
        d.installed.r5 = num_or(in, "r5", d.installed.r5, ic);
        d.installed.v_da_max = num_or(in, "v_da_max", d.installed.v_da_max, ic);
    }
    try {
        d.validate();
    } catch (const InvalidInput& e) {
        fail(c, e.what());
    }
    return d;
}

DeviceParams load_device(const fs::path& path) { return parse_device(read_or_fail(path), path.string()); }

ScenarioBundle load_scenario(const fs::path& path) {
    return parse_scenario(read_or_fail(path), path.parent_path(), path.string());
}

DesignInputs load_design_inputs(const fs::path& path) {
    return parse_design_inputs(read_or_fail(path), path.parent_path(), path.string());
}

// ---- writing ----------------------------------------------------------------

std::string write_device(const DeviceParams& d) { return device_to(d).dump(2) + "\n"; }

std::string write_scenario(const ScenarioBundle& b) {
    const auto& s = b.scenario;
    json j;
    j["name"] = s.name;
    j["v_dc"] = s.v_dc;
    j["f_s"] = s.f_s;
    j["duty"] = s.duty;
    j["static_balance_r"] = s.static_balance_r;
    j["rails"] = {{"v_dd", s.rails.v_dd}, {"v_ee", s.rails.v_ee}};
    if (const auto* r = std::get_if<ResistiveLoad>(&s.load)) {
        j["load"] = {{"type", "resistive"}, {"r", r->r}};
    } else {
        const auto& l = std::get<InductiveLoad>(s.load);
        j["load"] = {{"type", "inductive"}, {"r", l.r}, {"l", l.l}};
    }
    j["freewheel"] = {{"diodes", s.freewheel.diodes},
                      {"v_forward", s.freewheel.v_forward},
                      {"r_balance", s.freewheel.r_balance}};
    json devs = json::array();
    for (std::size_t k = 0; k < s.n(); ++k) {
        const auto& d = s.devices[k];
        json e;
        e["device"] = device_to(d.device);
        e["r_g"] = d.r_g;
        e["t_delay"] = d.t_delay;
        e["c_p"] = d.c_p;
        e["gate_drive"] = gate_drive_to(k < b.drives.size() ? b.drives[k] : GateDriveConfig{});
        e["controller"] = controller_to(k < b.controllers.size() ? b.controllers[k] : ControllerState{});
        devs.push_back(e);
    }
    j["devices"] = devs;
    j["solver"] = solver_to(b.solver);
    if (b.i_load) j["i_load"] = *b.i_load;
    if (!b.sweeps.empty()) {
        json sw = json::array();
        for (const auto& x : b.sweeps) sw.push_back(sweep_to(x));
        j["sweeps"] = sw;
    }
    if (b.dpt) j["dpt"] = dpt_to(*b.dpt);
    return j.dump(2) + "\n";
}

std::string scenario_hash(const ScenarioBundle& b) {
    // Hash the compact form with sorted keys so formatting never matters.
    const nlohmann::json sorted = nlohmann::json::parse(write_scenario(b));
    return sha256_hex(sorted.dump());
}

// ---- CSV --------------------------------------------------------------------

std::string waveform_csv(const WaveformSet& w) {
    std::ostringstream os;
    os << "time";
    static const char* names[] = {"v_gs", "v_ds", "i_g", "i_sink", "i_cp", "i_gd", "v_ctrl"};
    for (std::size_t k = 0; k < w.devices.size(); ++k)
        for (const char* n : names) os << ",dev" << k << '.' << n;
    os << ",i_d\n";
    for (std::size_t i = 0; i < w.size(); ++i) {
        os << sci(w.time[i]);
        for (const auto& ch : w.devices) {
            for (const auto* v : {&ch.v_gs, &ch.v_ds, &ch.i_g, &ch.i_sink, &ch.i_cp, &ch.i_gd, &ch.v_ctrl})
                os << ',' << sci((*v)[i]);
        }
        os << ',' << sci(w.i_d[i]) << '\n';
    }
    return os.str();
}

std::string cycles_csv(const std::vector<CycleRecord>& cycles) {
    std::ostringstream os;
    const std::size_t n = cycles.empty() ? 0 : cycles.front().v_dsoff.size();
    os << "cycle,i_load_at_off";
    for (std::size_t k = 0; k < n; ++k) os << ",dev" << k << ".v_dsoff";
    for (std::size_t k = 0; k < n; ++k) os << ",dev" << k << ".v_daout";
    os << ",alpha\n";
    for (const auto& c : cycles) {
        os << c.cycle << ',' << sci(c.i_load_at_off);
        for (double v : c.v_dsoff) os << ',' << sci(v);
        for (double v : c.v_daout) os << ',' << sci(v);
        os << ',' << sci(c.alpha) << '\n';
    }
    return os.str();
}

std::string controller_log_csv(const std::vector<CycleRecord>& cycles) {
    std::ostringstream os;
    os << "cycle,device,mode,e,v_o,v_daout\n";
    for (const auto& c : cycles)
        for (std::size_t k = 0; k < c.v_dsoff.size(); ++k)
            os << c.cycle << ',' << k << ',' << to_string(c.mode[k]) << ',' << sci(c.error[k]) << ',' << sci(c.v_o[k])
               << ',' << sci(c.v_daout[k]) << '\n';
    return os.str();
}

std::string energy_csv(const DptResult& r) {
    std::ostringstream os;
    os << "run,device,v_ctrl,e_off,e_on\n";
    auto rows = [&](const char* name, const DptRun& run) {
        for (std::size_t k = 0; k < run.energy.e_off.size(); ++k)
            os << name << ',' << k << ',' << sci(run.v_ctrl[k]) << ',' << sci(run.energy.e_off[k]) << ','
               << sci(run.energy.e_on[k]) << '\n';
        os << name << ",total,," << sci(run.energy.e_off_total) << ',' << sci(run.energy.e_on_total) << '\n';
    };
    rows("uncompensated", r.uncompensated);
    rows("compensated", r.compensated);
    return os.str();
}

std::string design_report_text(const DesignReport& r) {
    std::ostringstream os;
    os << std::setprecision(4);
    os << "Miller plateau voltage      " << r.v_miller << " V\n"
       << "dQ_delay (max)              " << r.charges.dq_delay_max * 1e9 << " nC\n"
       << "dQ_cp                       " << r.charges.dq_cp * 1e9 << " nC\n"
       << "dQ_GD (max)                 " << r.charges.dq_gd_max * 1e9 << " nC\n"
       << "t_off                       " << r.t_off * 1e9 << " ns\n";
    if (r.timing_feasible) {
        os << "t_c (min)                   " << r.sink.t_c_min * 1e9 << " ns\n"
           << "V_R3 (max)                  " << r.sink.v_r3_max << " V\n"
           << "R3                          " << r.sink.r3 << " Ohm\n"
           << "I_ctrl (max)                " << r.sink.i_ctrl_max << " A\n"
           << "R1/R2 (max)                 " << r.sink.r12_max << " Ohm\n"
           << "V_ctrl needed (installed)   " << r.v_ctrl_required << " V\n";
    }
    os << "T_ctrl                      " << r.windows.t_ctrl * 1e9 << " ns\n"
       << "T_ST bounds                 (" << r.windows.t_st_lower * 1e9 << " ns, " << r.windows.t_st_upper * 1e6
       << " us)\n"
       << "controller latency          " << r.controller_latency * 1e6 << " us\n"
       << "feasible                    " << (r.feasible() ? "yes" : "no") << "\n";
    for (const auto& n : r.notes) os << "note: " << n << "\n";
    return os.str();
}

std::string design_report_json(const DesignReport& r) {
    json j;
    j["v_miller"] = r.v_miller;
    j["dq_delay_max"] = r.charges.dq_delay_max;
    j["dq_cp"] = r.charges.dq_cp;
    j["dq_gd_max"] = r.charges.dq_gd_max;
    j["t_off"] = r.t_off;
    j["t_c_min"] = r.sink.t_c_min;
    j["v_r3_max"] = r.sink.v_r3_max;
    j["r3"] = r.sink.r3;
    j["i_ctrl_max"] = r.sink.i_ctrl_max;
    j["r12_max"] = r.sink.r12_max;
    j["t_ctrl"] = r.windows.t_ctrl;
    j["t_st_bounds"] = {r.windows.t_st_lower, r.windows.t_st_upper};
    j["controller_latency"] = r.controller_latency;
    j["v_ctrl_required"] = r.v_ctrl_required;
    j["timing_feasible"] = r.timing_feasible;
    j["t_st_feasible"] = r.t_st_feasible;
    j["sink_within_dac_range"] = r.sink_within_dac_range;
    j["feasible"] = r.feasible();
    j["notes"] = r.notes;
    return j.dump(2) + "\n";
}

// ---- run directories ----------------------------------------------------------

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    out.close();
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_file(const fs::path& path) { return read_or_fail(path); }

RunManifest write_outputs(const ScenarioBundle& b, const RunResults& r, const fs::path& out_root) {
    RunManifest m;
    m.scenario_hash = scenario_hash(b);
    m.tool_version = kToolVersion;
    m.solver = b.solver;
    m.directory = out_root / m.scenario_hash.substr(0, 12) / r.command;
    std::error_code ec;
    fs::create_directories(m.directory, ec);
    if (ec) throw std::runtime_error("cannot create " + m.directory.string() + ": " + ec.message());

    auto put = [&](const std::string& name, const std::string& text) {
        write_file(m.directory / name, text);
        m.files.push_back(name);
    };
    put("scenario.json", write_scenario(b));
    std::vector<std::string> wave_files;
    if (r.waveform) {
        put("waveform.csv", waveform_csv(*r.waveform));
        wave_files.push_back("waveform.csv");
    }
    if (!r.cycles.empty()) {
        put("cycles.csv", cycles_csv(r.cycles));
        put("controller_log.csv", controller_log_csv(r.cycles));
    }
    std::vector<std::string> sweep_files;
    for (std::size_t i = 0; i < r.sweeps.size(); ++i) {
        const std::string axis = i < b.sweeps.size() ? to_string(b.sweeps[i].axis) : "sweep";
        const std::string name = "sweep_" + std::to_string(i) + "_" + axis + ".csv";
        put(name, sweep_csv(r.sweeps[i], b.scenario.n()));
        sweep_files.push_back(name);
    }
    if (r.dpt) {
        put("dpt_energy.csv", energy_csv(*r.dpt));
        put("dpt_uncompensated_waveform.csv", waveform_csv(r.dpt->uncompensated.transient.waveform));
        put("dpt_compensated_waveform.csv", waveform_csv(r.dpt->compensated.transient.waveform));
        wave_files.push_back("dpt_uncompensated_waveform.csv");
        wave_files.push_back("dpt_compensated_waveform.csv");
    }
    if (r.emit_plots) {
        if (!wave_files.empty()) put("plot_waveform.py", plot_script("waveform", wave_files));
        if (!r.cycles.empty()) put("plot_closedloop.py", plot_script("closedloop", {"cycles.csv"}));
        if (!sweep_files.empty()) put("plot_sweep.py", plot_script("sweep", sweep_files));
    }

    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ts;
    ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    m.created_utc = ts.str();

    m.files.push_back("manifest.json");
    json mj;
    mj["scenario_hash"] = m.scenario_hash;
    mj["tool_version"] = m.tool_version;
    mj["created_utc"] = m.created_utc;
    mj["command"] = r.command;
    mj["solver"] = solver_to(m.solver);
    mj["files"] = m.files;
    write_file(m.directory / "manifest.json", mj.dump(2) + "\n");
    return m;
}

}  // namespace stacksim
