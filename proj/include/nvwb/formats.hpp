#pragma once

// Text and JSON formats: rate tables, effective rates, trajectories,
// contrast curves, datasets and fit results. Numbers are written with 17
// significant digits so every writer/parser pair round-trips exactly.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <optional>
#include <vector>

#include "nvwb/config.hpp"
#include "nvwb/effective.hpp"
#include "nvwb/errors.hpp"
#include "nvwb/fit_models.hpp"
#include "nvwb/kinetics.hpp"
#include "nvwb/readout.hpp"
#include "nvwb/spectro_fit.hpp"

namespace nvwb {

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::stringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("error reading '" + path.string() + "'");
    return buf.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    out.flush();
    if (!out) throw IoError("error writing '" + path.string() + "'");
}

// ---- rate tables ---------------------------------------------------------

namespace detail {

/// Parses `k_<from>_<to>`; returns false for any other key.
inline bool parse_rate_key(std::string_view key, int& from, int& to) {
    if (key.size() != 5 || key[0] != 'k' || key[1] != '_' || key[3] != '_') return false;
    if (key[2] < '1' || key[2] > '8' || key[4] < '1' || key[4] > '8') return false;
    from = key[2] - '0';
    to = key[4] - '0';
    return true;
}

}  // namespace detail

inline bool is_rate_table_key(std::string_view key) {
    int f = 0, t = 0;
    return key == "eta" || key == "gamma_sl" || detail::parse_rate_key(key, f, t);
}

/// Applies the rate keys of `cfg` on top of `base`. gamma_sl is applied
/// before individual k_i_j entries so explicit entries win.
inline RateTable apply_rate_keys(const KeyValueConfig& cfg, RateTable base) {
    if (cfg.has("gamma_sl")) base.set_spin_lattice(cfg.number("gamma_sl"));
    if (cfg.has("eta")) base.set_pump(cfg.number("eta"));
    for (const auto& key : cfg.keys()) {
        int from = 0, to = 0;
        if (detail::parse_rate_key(key, from, to)) base.set(from, to, cfg.number(key));
    }
    return base;
}

/// Rate table file: only `k_i_j`, `eta` and `gamma_sl`; absent rates are 0.
inline RateTable parse_rate_table(std::string_view text) {
    const auto cfg = KeyValueConfig::parse(text, "rate table");
    for (const auto& key : cfg.keys()) {
        if (!is_rate_table_key(key)) throw ValidationError("unknown key '" + key + "' in rate table");
    }
    return apply_rate_keys(cfg, RateTable{});
}

inline std::string format_rate_table(const RateTable& table) {
    std::string out = "# rates in Hz; k_<from>_<to>\n";
    out += "eta = " + format_double(table.pump()) + "\n";
    for (int f = 1; f <= kLevelCount; ++f) {
        for (int t = 1; t <= kLevelCount; ++t) {
            if (f == t || is_pump_transition(LevelIndex(f), LevelIndex(t))) continue;
            const double k = table.rate(f, t);
            if (k != 0.0) out += "k_" + std::to_string(f) + "_" + std::to_string(t) + " = " + format_double(k) + "\n";
        }
    }
    return out;
}

/// `ktilde_<from>_<to>` for transfers and `ktilde_<i>_<i>` for return rates.
inline std::string format_effective_rates(const EffectiveRates& r) {
    std::string out = "# effective ground-triplet rates in Hz; ktilde_<from>_<to>\n";
    for (int f = 0; f < 3; ++f) {
        for (int t = 0; t < 3; ++t) {
            const double v = f == t ? r.return_rate[f] : r.transfer[f][t];
            out += "ktilde_" + std::to_string(f + 1) + "_" + std::to_string(t + 1) + " = " + format_double(v) + "\n";
        }
    }
    return out;
}

// ---- CSV helpers ---------------------------------------------------------

namespace detail {

inline std::vector<std::vector<double>> parse_numeric_csv(std::string_view text, const std::vector<std::string>& header,
                                                          std::string_view what, std::string* comment = nullptr,
                                                          std::size_t optional_tail = 0) {
    std::vector<std::vector<double>> rows;
    bool seen_header = false;
    std::size_t columns = header.size();
    std::size_t line_no = 0;
    for (auto line : split(text, '\n')) {
        ++line_no;
        const auto t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '#') {
            if (comment) *comment += std::string(trim(t.substr(1))) + "\n";
            continue;
        }
        const auto cells = split(t, ',');
        if (!seen_header) {
            if (cells.size() < header.size() - optional_tail || cells.size() > header.size()) {
                throw ValidationError(std::string(what) + ": unexpected header");
            }
            for (std::size_t k = 0; k < cells.size(); ++k) {
                if (trim(cells[k]) != header[k]) throw ValidationError(std::string(what) + ": unexpected header");
            }
            columns = cells.size();
            seen_header = true;
            continue;
        }
        if (cells.size() != columns) {
            throw ValidationError(std::string(what) + " line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(columns) + " fields");
        }
        std::vector<double> row;
        row.reserve(columns);
        for (auto c : cells) row.push_back(parse_double(c, what));
        rows.push_back(std::move(row));
    }
    if (!seen_header) throw ValidationError(std::string(what) + ": missing header");
    return rows;
}

}  // namespace detail

// ---- trajectories --------------------------------------------------------

inline std::string format_trajectory_csv(const Trajectory& traj, const RateTable& table) {
    std::string out = "t_s,p1,p2,p3,p4,p5,p6,p7,p8,pl_hz\n";
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        out += format_double(traj.times[k]);
        for (int i = 0; i < kLevelCount; ++i) out += "," + format_double(traj.states[k].vector()[i]);
        out += "," + format_double(pl_rate(traj.states[k], table)) + "\n";
    }
    return out;
}

inline Trajectory parse_trajectory_csv(std::string_view text) {
    const auto rows = detail::parse_numeric_csv(
        text, {"t_s", "p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8", "pl_hz"}, "trajectory csv");
    std::vector<double> times;
    std::vector<PopulationState> states;
    for (const auto& r : rows) {
        times.push_back(r[0]);
        PopulationVector p;
        for (int i = 0; i < kLevelCount; ++i) p[i] = r[static_cast<std::size_t>(i) + 1];
        states.emplace_back(p);
    }
    return Trajectory(std::move(times), std::move(states));
}

// ---- contrast curves -----------------------------------------------------

inline std::string format_contrast_csv(const ContrastCurve& curve) {
    std::string out = "window_s,contrast\n";
    for (std::size_t k = 0; k < curve.windows.size(); ++k) {
        out += format_double(curve.windows[k]) + "," + format_double(curve.contrast[k]) + "\n";
    }
    return out;
}

inline ContrastCurve parse_contrast_csv(std::string_view text) {
    ContrastCurve c;
    for (const auto& r : detail::parse_numeric_csv(text, {"window_s", "contrast"}, "contrast csv")) {
        c.windows.push_back(r[0]);
        c.contrast.push_back(r[1]);
    }
    c.validate();
    return c;
}

/// Readout summary object; decay_time_s is null when no decay fit exists.
inline nlohmann::json readout_json(double eta_hz, const ContrastCurve& curve, std::optional<double> decay_time_s) {
    const auto ext = curve.extremum();
    nlohmann::json j;
    j["eta_hz"] = eta_hz;
    j["windows_s"] = curve.windows;
    j["contrast"] = curve.contrast;
    j["extremum"] = {{"w_s", ext.window_s}, {"c", ext.contrast}};
    j["decay_time_s"] = decay_time_s ? nlohmann::json(*decay_time_s) : nlohmann::json(nullptr);
    return j;
}

// ---- datasets ------------------------------------------------------------

struct DatasetFile {
    Dataset data;
    std::string x_units;
};

inline std::string format_dataset_csv(const Dataset& d, std::string_view x_units) {
    std::string out = "# units: x=" + std::string(x_units) + ", y=contrast\n";
    out += d.has_sigma() ? "x,y,sigma\n" : "x,y\n";
    for (std::size_t k = 0; k < d.x.size(); ++k) {
        out += format_double(d.x[k]) + "," + format_double(d.y[k]);
        if (d.has_sigma()) out += "," + format_double(d.sigma[k]);
        out += "\n";
    }
    return out;
}

inline DatasetFile parse_dataset_csv(std::string_view text) {
    std::string comments;
    const auto rows = detail::parse_numeric_csv(text, {"x", "y", "sigma"}, "dataset csv", &comments, 1);
    DatasetFile f;
    for (const auto& r : rows) {
        f.data.x.push_back(r[0]);
        f.data.y.push_back(r[1]);
        if (r.size() == 3) f.data.sigma.push_back(r[2]);
    }
    for (auto line : detail::split(comments, '\n')) {
        const auto t = detail::trim(line);
        if (t.rfind("units:", 0) != 0) continue;
        for (auto part : detail::split(t.substr(6), ',')) {
            const auto p = detail::trim(part);
            if (p.rfind("x=", 0) == 0) f.x_units = std::string(detail::trim(p.substr(2)));
        }
    }
    return f;
}

// ---- fit results ---------------------------------------------------------

inline nlohmann::json fit_result_json(const FitResult& r, const ResidualStats& stats) {
    nlohmann::json theta = nlohmann::json::object();
    nlohmann::json sigma = nlohmann::json::object();
    const auto names = r.model.parameter_names();
    for (std::size_t k = 0; k < names.size(); ++k) {
        theta[names[k]] = r.model.theta[static_cast<Eigen::Index>(k)];
        if (k < r.uncertainty.size() && std::isfinite(r.uncertainty[k])) {
            sigma[names[k]] = r.uncertainty[k];
        } else {
            sigma[names[k]] = nullptr;
        }
    }
    nlohmann::json j;
    j["model"] = std::string(to_string(r.model.kind));
    j["theta"] = theta;
    j["uncertainty"] = sigma;
    j["rms"] = stats.rms;
    j["residual_norm"] = r.residual_norm;
    j["converged"] = r.converged;
    j["iterations"] = r.iterations;
    if (r.model.kind == ModelKind::lorentzian_multi) j["dips"] = r.model.dips;
    if (r.model.kind == ModelKind::hahn) j["revivals"] = r.model.revivals;
    return j;
}

/// Reads {"model", "theta": {name: value}, ["dips"], ["revivals"]}.
inline FitModel fit_model_from_json(const nlohmann::json& j) {
    try {
        FitModel m;
        m.kind = parse_model_kind(j.at("model").get<std::string>());
        const auto& theta = j.at("theta");
        if (m.kind == ModelKind::lorentzian_multi) {
            m.dips = j.contains("dips") ? j.at("dips").get<int>() : static_cast<int>((theta.size() - 1) / 3);
        }
        if (m.kind == ModelKind::hahn && j.contains("revivals")) m.revivals = j.at("revivals").get<int>();
        const auto names = m.parameter_names();
        if (theta.size() != names.size()) throw ValidationError("theta has the wrong number of parameters");
        m.theta.resize(static_cast<Eigen::Index>(names.size()));
        for (std::size_t k = 0; k < names.size(); ++k) {
            m.theta[static_cast<Eigen::Index>(k)] = theta.at(names[k]).get<double>();
        }
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model json: ") + e.what());
    }
}

inline nlohmann::json parse_json(std::string_view text, std::string_view what) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string(what) + ": " + e.what());
    }
}

}  // namespace nvwb
