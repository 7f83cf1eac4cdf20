// nvwb: command-line front end for the NV workbench.
//
// Every verb reads an optional key-value config file, then NVWB_SEED, then
// --set overrides and dedicated flags (later sources win).

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nvwb/effective.hpp"
#include "nvwb/formats.hpp"
#include "nvwb/pulse_seq.hpp"
#include "nvwb/readout.hpp"
#include "nvwb/spectro_fit.hpp"
#include "nvwb/workbench.hpp"

using namespace nvwb;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNoConvergence = 3;

struct VerbInputs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::map<std::string, std::string> flags;
    std::string out = "-";
};

void add_common(CLI::App* app, VerbInputs& in) {
    app->add_option("-c,--config", in.config_path, "key-value config file");
    app->add_option("--set", in.overrides, "override a config key (key=value), repeatable");
    app->add_option("-o,--out", in.out, "output path ('-' for stdout)");
}

/// Flag that writes straight into config key `key`.
void add_key_flag(CLI::App* app, VerbInputs& in, const std::string& flag, const std::string& key,
                  const std::string& help) {
    app->add_option_function<std::string>(flag, [&in, key](const std::string& v) { in.flags[key] = v; }, help);
}

bool is_theta_key(const std::string& key) { return key.rfind("theta.", 0) == 0; }

KeyValueConfig load_config(const VerbInputs& in, const std::set<std::string>& allowed, bool rate_keys, bool theta_keys,
                           bool seeded, const std::string& context) {
    KeyValueConfig cfg = in.config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(in.config_path);
    if (seeded) {
        if (const char* env = std::getenv("NVWB_SEED"); env && *env) cfg.set("seed", env);
    }
    for (const auto& o : in.overrides) cfg.apply_override(o);
    for (const auto& [k, v] : in.flags) cfg.set(k, v);
    for (const auto& key : cfg.keys()) {
        if (allowed.count(key)) continue;
        if (rate_keys && is_rate_table_key(key)) continue;
        if (theta_keys && is_theta_key(key)) continue;
        throw ValidationError("unknown key '" + key + "' for " + context);
    }
    return cfg;
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        std::cout.flush();
        if (!std::cout) throw IoError("error writing to stdout");
        return;
    }
    write_text_file(path, text);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string comment_header(const KeyValueConfig& cfg) {
    std::string out;
    for (const auto& key : cfg.keys()) out += "# config: " + key + " = " + cfg.text(key) + "\n";
    return out;
}

std::uint64_t seed_of(const KeyValueConfig& cfg) {
    const auto s = cfg.integer_or("seed", 1);
    if (s < 0) throw ValidationError("seed must be >= 0");
    return static_cast<std::uint64_t>(s);
}

// ---- rate table and protocol ------------------------------------------------

const std::set<std::string> kPhysicsKeys{"t1_s", "power_density_w_per_um2", "init_s", "wait_s", "readout_s",
                                         "samples"};

RateTable table_from(const KeyValueConfig& cfg) {
    if (cfg.has("t1_s") && cfg.has("gamma_sl")) throw ValidationError("set either t1_s or gamma_sl, not both");
    if (cfg.has("power_density_w_per_um2") && cfg.has("eta")) {
        throw ValidationError("set either eta or power_density_w_per_um2, not both");
    }
    RateTable table = apply_rate_keys(cfg, RateTable::nv_default(5e3));
    if (cfg.has("t1_s")) table.set_spin_lattice(gamma_sl_from_t1(cfg.number("t1_s")));
    if (cfg.has("power_density_w_per_um2")) {
        PumpSpec spec;
        spec.power_density_w_per_um2 = cfg.number("power_density_w_per_um2");
        table.set_pump(pump_rate_from_power_density(spec));
    }
    return table;
}

PhaseProtocol protocol_from(const KeyValueConfig& cfg, const RateTable& table) {
    auto p = PhaseProtocol::standard(table.pump(), cfg.number_or("init_s", 3.2e-3), cfg.number_or("wait_s", 1e-6),
                                     cfg.number_or("readout_s", 3.2e-3));
    p.samples_per_phase = static_cast<int>(cfg.integer_or("samples", PhaseProtocol::kDefaultSamples));
    p.validate();
    return p;
}

json table_json(const RateTable& table) {
    return {{"eta_hz", table.pump()}, {"gamma_sl_hz", table.rate(1, 2)}};
}

// ---- synthetic configs ------------------------------------------------------

const std::set<std::string> kSynthKeys{"model", "dips", "x", "points", "x_min", "x_max", "noise_sigma", "noise_fraction",
                                       "seed"};

SyntheticConfig synth_from(const KeyValueConfig& cfg, ModelKind kind) {
    ReferenceCase ref = reference_case(kind);
    if (kind == ModelKind::lorentzian_multi && cfg.integer_or("dips", 1) == 4) {
        ref.truth = four_dip_odmr();
        ref.x_min = 2.70e9;
        ref.x_max = 3.04e9;
    } else if (cfg.integer_or("dips", 1) != 1 && kind == ModelKind::lorentzian_multi) {
        throw ValidationError("built-in odmr truths exist for dips = 1 or 4; give theta.* keys on top of one");
    }
    SyntheticConfig s;
    s.model = ref.truth;
    const auto names = s.model.parameter_names();
    for (const auto& key : cfg.keys()) {
        if (!is_theta_key(key)) continue;
        const auto name = key.substr(6);
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw ValidationError("model " + std::string(to_string(kind)) + " has no parameter '" + name + "'");
        s.model.theta[it - names.begin()] = cfg.number(key);
    }
    if (kind == ModelKind::hahn) s.model.revivals = FitModel::revivals_for(cfg.number_or("x_max", ref.x_max), s.model.theta[3]);
    if (cfg.has("x")) {
        s.x = cfg.list("x");
    } else {
        const auto points = cfg.integer_or("points", 401);
        if (points < 2) throw ValidationError("points must be >= 2");
        s.x = uniform_axis(cfg.number_or("x_min", ref.x_min), cfg.number_or("x_max", ref.x_max),
                           static_cast<std::size_t>(points));
    }
    if (cfg.has("noise_sigma") && cfg.has("noise_fraction")) {
        throw ValidationError("set either noise_sigma or noise_fraction, not both");
    }
    s.noise_sigma = cfg.has("noise_fraction") ? cfg.number("noise_fraction") * std::abs(s.model.theta[0])
                                              : cfg.number_or("noise_sigma", 0.0);
    s.seed = seed_of(cfg);
    s.validate();
    return s;
}

std::string units_for(ModelKind kind) { return kind == ModelKind::lorentzian_multi ? "Hz" : "s"; }

json derived_json(const FitModel& m) {
    json d = json::object();
    if (m.kind == ModelKind::rabi) {
        const auto [half, pi] = derive_pi_pulses(m.theta[1]);
        d["pi_half_s"] = half;
        d["pi_s"] = pi;
    }
    if (m.kind == ModelKind::lorentzian_multi && m.dips >= 2) {
        std::vector<double> centers;
        for (int k = 0; k < m.dips; ++k) centers.push_back(m.theta[3 * k + 1]);
        const auto [lo, hi] = std::minmax_element(centers.begin(), centers.end());
        d["b_field_gauss"] = b_field_from_splitting(*lo, *hi);
    }
    if (m.kind == ModelKind::t1_exp) d["gamma_sl_hz"] = gamma_sl_from_t1(m.theta[1]);
    return d;
}

json dataset_json(const Dataset& d) { return {{"x", d.x}, {"y", d.y}}; }

// ---- verbs ------------------------------------------------------------------

int run_simulate_readout(const VerbInputs& in, const std::string& json_path, const std::string& trajectory_path,
                         const std::string& effective_path) {
    std::set<std::string> allowed = kPhysicsKeys;
    allowed.insert({"windows", "window_spacing", "window_first_s", "window_last_s", "window_count", "decay",
                    "trajectory_phase"});
    const auto cfg = load_config(in, allowed, true, false, false, "simulate readout");
    const RateTable table = table_from(cfg);
    const PhaseProtocol protocol = protocol_from(cfg, table);

    std::vector<double> windows;
    if (cfg.has("windows")) {
        windows = cfg.list("windows");
    } else {
        const double limit = std::min(protocol.signal().duration_s, protocol.reference().duration_s);
        const double last = cfg.number_or("window_last_s", limit);
        const int count = static_cast<int>(cfg.integer_or("window_count", 400));
        const auto spacing = cfg.text_or("window_spacing", "geometric");
        if (spacing == "geometric") {
            windows = geometric_windows(cfg.number_or("window_first_s", 1e-8), last, count);
        } else if (spacing == "linear") {
            windows = linear_windows(last, count);
        } else {
            throw ValidationError("window_spacing must be 'geometric' or 'linear'");
        }
    }

    const auto trajs = run_protocol(table, protocol);
    const RateTable pumped = table.with_pump(protocol.signal().eta_hz);
    detail::check_shared_pump(protocol);
    const auto curve =
        detail::contrast_from(PlIntegral(trajs.front(), pumped), PlIntegral(trajs.back(), pumped), windows);
    emit(in.out, format_contrast_csv(curve));

    if (!json_path.empty()) {
        std::optional<double> decay;
        if (cfg.boolean_or("decay", true)) {
            try {
                decay = contrast_decay_time(curve);
            } catch (const FitError&) {
                decay.reset();
            }
        }
        json j = readout_json(table.pump(), curve, decay);
        j["config"] = cfg.serialize();
        emit(json_path, dump(j));
    }
    if (!trajectory_path.empty()) {
        const auto phase = cfg.text_or("trajectory_phase", "readout");
        std::size_t index = trajs.size();
        for (std::size_t k = 0; k < protocol.phases.size(); ++k) {
            if (protocol.phases[k].label == phase) index = k;
        }
        if (index == trajs.size()) throw ValidationError("trajectory_phase must be init, wait or readout");
        emit(trajectory_path, format_trajectory_csv(trajs[index], table.with_pump(protocol.phases[index].eta_hz)));
    }
    if (!effective_path.empty()) emit(effective_path, format_effective_rates(eliminate(table)));
    return kExitOk;
}

int run_simulate_relaxometry(const VerbInputs& in, const std::string& json_path) {
    std::set<std::string> allowed = kPhysicsKeys;
    allowed.insert({"window_s", "delays"});
    const auto cfg = load_config(in, allowed, true, false, false, "simulate relaxometry");
    const RateTable table = table_from(cfg);
    const PhaseProtocol protocol = protocol_from(cfg, table);
    const auto delays = cfg.has("delays") ? cfg.list("delays") : default_delays();
    const double window = cfg.number_or("window_s", 500e-6);

    Dataset d;
    std::vector<double> signal, reference;
    for (const auto& p : relaxometry_points(table, protocol, delays, window)) {
        d.x.push_back(p.delay_s);
        d.y.push_back(p.contrast());
        signal.push_back(p.signal);
        reference.push_back(p.reference);
    }
    emit(in.out, comment_header(cfg) + format_dataset_csv(d, "s"));
    if (!json_path.empty()) {
        json j;
        j["table"] = table_json(table);
        j["window_s"] = window;
        j["delays_s"] = d.x;
        j["contrast"] = d.y;
        j["signal"] = signal;
        j["reference"] = reference;
        j["config"] = cfg.serialize();
        emit(json_path, dump(j));
    }
    return kExitOk;
}

int run_sequence_emit(const VerbInputs& in, const std::string& out_dir) {
    std::set<std::string> allowed = ProtocolSpec::config_keys();
    allowed.insert("value");
    const auto cfg = load_config(in, allowed, false, false, false, "sequence emit");
    KeyValueConfig spec_cfg;
    for (const auto& key : cfg.keys()) {
        if (key != "value") spec_cfg.set(key, cfg.text(key));
    }
    if (!spec_cfg.has("sweep") && cfg.has("value")) spec_cfg.set("sweep", cfg.text("value"));
    const ProtocolSpec spec = ProtocolSpec::from_config(spec_cfg);

    auto checked = [](const PulseSequence& seq) {
        const auto bad = validate(seq);
        if (!bad.empty()) throw ValidationError("built sequence violates: " + bad.front().message);
        return export_timing_table(seq);
    };
    if (cfg.has("value")) {
        emit(in.out, checked(build(spec, cfg.number("value"))));
        return kExitOk;
    }
    if (spec.sweep.size() == 1) {
        emit(in.out, checked(build(spec, spec.sweep.front())));
        return kExitOk;
    }
    if (out_dir.empty()) throw ValidationError("a sweep with several values needs --out-dir (or pick one with value)");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
    std::string index = "index,value,file\n";
    for (std::size_t k = 0; k < spec.sweep.size(); ++k) {
        const std::string name = std::string(to_string(spec.kind)) + "_" + std::to_string(k) + ".csv";
        write_text_file(std::filesystem::path(out_dir) / name, checked(build(spec, spec.sweep[k])));
        index += std::to_string(k) + "," + format_double(spec.sweep[k]) + "," + name + "\n";
    }
    emit(in.out, index);
    return kExitOk;
}

int run_fit(const VerbInputs& in) {
    const auto cfg = load_config(in, {"data", "model", "dips", "initial"}, false, false, false, "fit");
    const auto file = parse_dataset_csv(read_text_file(cfg.text("data")));
    const ModelKind kind = parse_model_kind(cfg.text("model"));
    std::optional<FitModel> initial;
    if (cfg.has("initial")) {
        initial = fit_model_from_json(parse_json(read_text_file(cfg.text("initial")), "initial model"));
        if (initial->kind != kind) throw ValidationError("initial model kind does not match 'model'");
    }
    FitOptions opts;
    opts.dips = static_cast<int>(cfg.integer_or("dips", 0));
    const FitResult r = fit(file.data, kind, initial, opts);
    json j = fit_result_json(r, goodness(file.data, r.model));
    j["derived"] = derived_json(r.model);
    j["x_units"] = file.x_units;
    j["config"] = cfg.serialize();
    emit(in.out, dump(j));
    return r.converged ? kExitOk : kExitNoConvergence;
}

int run_synth(const VerbInputs& in) {
    const auto cfg = load_config(in, kSynthKeys, false, true, true, "synth");
    const ModelKind kind = parse_model_kind(cfg.text_or("model", "rabi"));
    const auto s = synth_from(cfg, kind);
    const std::string header = "# seed = " + std::to_string(s.seed) + "\n" + comment_header(cfg);
    emit(in.out, header + format_dataset_csv(synthesize(s), units_for(kind)));
    return kExitOk;
}

int run_pipeline(const VerbInputs& in, const std::string& data_path) {
    std::set<std::string> allowed = kPhysicsKeys;
    allowed.insert({"protocol", "window_s", "delays"});
    allowed.insert(kSynthKeys.begin(), kSynthKeys.end());
    auto cfg = load_config(in, allowed, true, true, true, "pipeline");
    PipelineConfig pc;
    pc.kind = parse_protocol_kind(cfg.text_or("protocol", "t1"));
    if (pc.kind == ProtocolKind::t1) {
        pc.table = table_from(cfg);
        pc.protocol = protocol_from(cfg, pc.table);
        pc.window_s = cfg.number_or("window_s", pc.window_s);
        if (cfg.has("delays")) pc.delays_s = cfg.list("delays");
    } else {
        if (cfg.has("model") && parse_model_kind(cfg.text("model")) != model_for(pc.kind)) {
            throw ValidationError("model does not match protocol");
        }
        pc.synth = synth_from(cfg, model_for(pc.kind));
    }
    const auto rep = pipeline_run(pc);

    json j;
    j["protocol"] = std::string(to_string(rep.kind));
    j["seed"] = pc.kind == ProtocolKind::t1 ? json(nullptr) : json(rep.seed);
    j["config"] = cfg.serialize();
    j["fit"] = fit_result_json(rep.fit, rep.stats);
    j["derived"] = derived_json(rep.fit.model);
    if (rep.kind == ProtocolKind::t1) {
        j["table"] = table_json(pc.table);
        j["window_s"] = pc.window_s;
        j["expected_t1_s"] = rep.expected_t1_s;
        j["fitted_t1_s"] = rep.fitted_t1_s;
        j["reference_t1_s"] = rep.reference_t1_s;
        j["max_abs_contrast"] = rep.max_abs_contrast;
        j["contrast_at_window"] = rep.contrast_curve_value;
    } else {
        FitResult truth;
        truth.model = *rep.truth;
        truth.uncertainty.assign(static_cast<std::size_t>(truth.model.parameter_count()), 0.0);
        j["truth"] = fit_result_json(truth, {})["theta"];
        json rec = json::object();
        const auto names = rep.truth->parameter_names();
        bool all = true;
        for (std::size_t k = 0; k < names.size(); ++k) {
            rec[names[k]] = static_cast<bool>(rep.recovered[k]);
            all = all && rep.recovered[k];
        }
        j["recovered"] = rec;
        j["all_recovered"] = all;
    }
    emit(in.out, dump(j));
    if (!data_path.empty()) emit(data_path, comment_header(cfg) + format_dataset_csv(rep.data, units_for(rep.fit.model.kind)));
    return rep.fit.converged ? kExitOk : kExitNoConvergence;
}

int run_roi(const VerbInputs& in, const std::string& mask_path) {
    const auto cfg = load_config(in, {"image", "fraction"}, false, false, false, "roi");
    const std::string path = cfg.text("image");
    const std::string text = read_text_file(path);
    const bool pgm = std::filesystem::path(path).extension() == ".pgm" || text.rfind("P2", 0) == 0;
    const FluorescenceImage img = pgm ? parse_pgm(text) : parse_image_csv(text);
    const auto r = roi_mask(img, cfg.number_or("fraction", 0.85));
    json j{{"width", img.width},   {"height", img.height}, {"threshold", r.threshold},
           {"count", r.count},     {"mean", r.mean},       {"config", cfg.serialize()}};
    emit(in.out, dump(j));
    if (!mask_path.empty()) {
        FluorescenceImage mask{img.width, img.height, std::vector<double>(r.mask.begin(), r.mask.end())};
        emit(mask_path, format_pgm(mask));
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NV-center workbench: readout simulation, pulse sequences and spectroscopy fits"};
    app.require_subcommand(1);
    std::function<int()> action;

    auto* simulate = app.add_subcommand("simulate", "rate-model simulations");
    simulate->require_subcommand(1);

    VerbInputs readout_in;
    std::string readout_json_path, trajectory_path, effective_path;
    auto* readout = simulate->add_subcommand("readout", "contrast curve of the init/wait/readout protocol");
    add_common(readout, readout_in);
    add_key_flag(readout, readout_in, "--eta", "eta", "pump rate (Hz)");
    add_key_flag(readout, readout_in, "--windows", "windows", "window list or a:b:step range (s)");
    readout->add_option("--json", readout_json_path, "write the summary JSON here");
    readout->add_option("--trajectory", trajectory_path, "write one phase's populations and PL as CSV");
    readout->add_option("--effective-rates", effective_path, "write the adiabatically eliminated ground rates");
    readout->callback([&] { action = [&] { return run_simulate_readout(readout_in, readout_json_path, trajectory_path, effective_path); }; });

    VerbInputs relax_in;
    std::string relax_json_path;
    auto* relax = simulate->add_subcommand("relaxometry", "contrast versus dark delay at a fixed window");
    add_common(relax, relax_in);
    add_key_flag(relax, relax_in, "--eta", "eta", "pump rate (Hz)");
    add_key_flag(relax, relax_in, "--window", "window_s", "integration window (s)");
    add_key_flag(relax, relax_in, "--delays", "delays", "delay list or a:b:step range (s)");
    relax->add_option("--json", relax_json_path, "write signal/reference details as JSON");
    relax->callback([&] { action = [&] { return run_simulate_relaxometry(relax_in, relax_json_path); }; });

    auto* sequence = app.add_subcommand("sequence", "pulse sequences");
    sequence->require_subcommand(1);
    VerbInputs seq_in;
    std::string seq_dir;
    auto* seq_emit = sequence->add_subcommand("emit", "timing table for one protocol instance or a whole sweep");
    add_common(seq_emit, seq_in);
    add_key_flag(seq_emit, seq_in, "--kind", "kind", "odmr, rabi, ramsey, hahn or t1");
    add_key_flag(seq_emit, seq_in, "--value", "value", "sweep value (Hz for odmr, ns otherwise)");
    seq_emit->add_option("--out-dir", seq_dir, "write one table per sweep value into this directory");
    seq_emit->callback([&] { action = [&] { return run_sequence_emit(seq_in, seq_dir); }; });

    VerbInputs fit_in;
    auto* fit_cmd = app.add_subcommand("fit", "fit a dataset CSV with one of the five models");
    add_common(fit_cmd, fit_in);
    add_key_flag(fit_cmd, fit_in, "--data", "data", "dataset CSV (x,y[,sigma])");
    add_key_flag(fit_cmd, fit_in, "--model", "model", "lorentzian_multi, rabi, ramsey, hahn or t1_exp");
    add_key_flag(fit_cmd, fit_in, "--dips", "dips", "Lorentzian line count (0 = auto)");
    add_key_flag(fit_cmd, fit_in, "--initial", "initial", "starting model JSON");
    fit_cmd->callback([&] { action = [&] { return run_fit(fit_in); }; });

    VerbInputs synth_in;
    auto* synth = app.add_subcommand("synth", "seeded synthetic dataset from a model");
    add_common(synth, synth_in);
    add_key_flag(synth, synth_in, "--model", "model", "model kind");
    add_key_flag(synth, synth_in, "--seed", "seed", "noise seed");
    add_key_flag(synth, synth_in, "--noise", "noise_sigma", "Gaussian noise sigma");
    synth->callback([&] { action = [&] { return run_synth(synth_in); }; });

    VerbInputs pipe_in;
    std::string pipe_data;
    auto* pipe = app.add_subcommand("pipeline", "t1: simulate and fit; other protocols: synth and fit round trip");
    add_common(pipe, pipe_in);
    add_key_flag(pipe, pipe_in, "--protocol", "protocol", "odmr, rabi, ramsey, hahn or t1");
    add_key_flag(pipe, pipe_in, "--seed", "seed", "noise seed");
    pipe->add_option("--data-out", pipe_data, "also write the fitted dataset CSV");
    pipe->callback([&] { action = [&] { return run_pipeline(pipe_in, pipe_data); }; });

    VerbInputs roi_in;
    std::string mask_path;
    auto* roi = app.add_subcommand("roi", "bright-region mask of a fluorescence image (PGM or CSV)");
    add_common(roi, roi_in);
    add_key_flag(roi, roi_in, "--image", "image", "image path");
    add_key_flag(roi, roi_in, "--fraction", "fraction", "threshold as a fraction of the peak");
    roi->add_option("--mask", mask_path, "write the mask as a 0/1 PGM");
    roi->callback([&] { action = [&] { return run_roi(roi_in, mask_path); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    try {
        return action ? action() : kExitValidation;
    } catch (const Error& e) {
        std::cerr << "nvwb: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "nvwb: " << e.what() << "\n";
        return kExitValidation;
    }
}
