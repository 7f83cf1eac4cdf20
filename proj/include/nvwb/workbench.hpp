#pragma once

// Fluorescence-image ROI selection, seeded synthetic datasets and the
// simulate -> fit pipelines behind the command-line tool.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nvwb/config.hpp"
#include "nvwb/errors.hpp"
#include "nvwb/fit_models.hpp"
#include "nvwb/kinetics.hpp"
#include "nvwb/pulse_seq.hpp"
#include "nvwb/readout.hpp"
#include "nvwb/spectro_fit.hpp"

namespace nvwb {

// ---- images --------------------------------------------------------------

struct FluorescenceImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> pixels;  // row-major

    double at(std::size_t col, std::size_t row) const { return pixels[row * width + col]; }

    void validate() const {
        if (width == 0 || height == 0) throw ValidationError("image must be non-empty");
        if (pixels.size() != width * height) throw ValidationError("image pixel count does not match its size");
        for (double p : pixels) {
            if (!std::isfinite(p) || p < 0.0) throw ValidationError("image pixels must be finite and >= 0");
        }
    }
};

struct RoiResult {
    std::vector<std::uint8_t> mask;  // 1 inside the ROI, row-major
    double threshold = 0.0;
    double mean = 0.0;
    std::size_t count = 0;
};

/// Pixels at or above `fraction` of the brightest pixel, and their mean.
inline RoiResult roi_mask(const FluorescenceImage& img, double fraction = 0.85) {
    img.validate();
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("threshold fraction must lie in (0, 1]");
    const double peak = *std::max_element(img.pixels.begin(), img.pixels.end());
    if (peak == 0.0) throw ValidationError("image is all zero; ROI undefined");
    RoiResult r;
    r.threshold = fraction * peak;
    r.mask.assign(img.pixels.size(), 0);
    double sum = 0.0;
    for (std::size_t p = 0; p < img.pixels.size(); ++p) {
        if (img.pixels[p] >= r.threshold) {
            r.mask[p] = 1;
            sum += img.pixels[p];
            ++r.count;
        }
    }
    r.mean = sum / static_cast<double>(r.count);
    return r;
}

/// Gaussian spot on a flat background.
inline FluorescenceImage gaussian_spot(std::size_t width, std::size_t height, double cx, double cy, double sigma,
                                       double peak, double background = 0.0) {
    FluorescenceImage img{width, height, std::vector<double>(width * height)};
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const double dx = static_cast<double>(c) - cx;
            const double dy = static_cast<double>(r) - cy;
            img.pixels[r * width + c] = background + peak * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
    }
    return img;
}

/// Plain (P2) portable graymap.
inline FluorescenceImage parse_pgm(std::string_view text) {
    std::string cleaned;
    for (auto line : detail::split(text, '\n')) {
        const auto hash = line.find('#');
        cleaned += std::string(line.substr(0, hash)) + "\n";
    }
    std::istringstream in(cleaned);
    std::string magic;
    in >> magic;
    if (magic != "P2") throw ValidationError("only plain PGM (P2) images are supported");
    long long w = 0, h = 0, maxval = 0;
    if (!(in >> w >> h >> maxval) || w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
        throw ValidationError("bad PGM header");
    }
    FluorescenceImage img{static_cast<std::size_t>(w), static_cast<std::size_t>(h), {}};
    img.pixels.reserve(img.width * img.height);
    for (std::size_t k = 0; k < img.width * img.height; ++k) {
        long long v = 0;
        if (!(in >> v) || v < 0 || v > maxval) throw ValidationError("bad or missing PGM pixel value");
        img.pixels.push_back(static_cast<double>(v));
    }
    return img;
}

/// Writes a P2 graymap; pixels are rounded to integers.
inline std::string format_pgm(const FluorescenceImage& img) {
    img.validate();
    const double peak = *std::max_element(img.pixels.begin(), img.pixels.end());
    const long long maxval = std::clamp<long long>(std::llround(peak), 1, 65535);
    std::string out = "P2\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                      std::to_string(maxval) + "\n";
    for (std::size_t r = 0; r < img.height; ++r) {
        for (std::size_t c = 0; c < img.width; ++c) {
            if (c) out += " ";
            out += std::to_string(std::min(maxval, std::llround(img.at(c, r))));
        }
        out += "\n";
    }
    return out;
}

/// Comma-separated rows of intensities.
inline FluorescenceImage parse_image_csv(std::string_view text) {
    FluorescenceImage img;
    for (auto line : detail::split(text, '\n')) {
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto cells = detail::split(t, ',');
        if (img.height == 0) img.width = cells.size();
        if (cells.size() != img.width) throw ValidationError("image csv rows differ in length");
        for (auto c : cells) img.pixels.push_back(detail::parse_double(c, "image csv"));
        ++img.height;
    }
    img.validate();
    return img;
}

inline std::string format_image_csv(const FluorescenceImage& img) {
    std::string out;
    for (std::size_t r = 0; r < img.height; ++r) {
        for (std::size_t c = 0; c < img.width; ++c) {
            if (c) out += ",";
            out += format_double(img.at(c, r));
        }
        out += "\n";
    }
    return out;
}

// ---- synthetic data ------------------------------------------------------

struct SyntheticConfig {
    FitModel model;
    std::vector<double> x;
    double noise_sigma = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        model.validate();
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ValidationError("noise_sigma must be >= 0");
        Dataset probe{x, std::vector<double>(x.size(), 0.0), {}};
        probe.validate(static_cast<std::size_t>(model.parameter_count()) + 1);
    }
};

/// x values of a protocol sweep in fit units: Hz for ODMR, seconds
/// (from ns) otherwise.
inline std::vector<double> sweep_axis(const ProtocolSpec& spec) {
    std::vector<double> x = spec.sweep;
    if (spec.kind != ProtocolKind::odmr) {
        for (double& v : x) v *= 1e-9;
    }
    return x;
}

inline std::vector<double> uniform_axis(double x_min, double x_max, std::size_t count) {
    if (count < 2 || !(x_max > x_min)) throw ValidationError("axis needs count >= 2 and x_max > x_min");
    std::vector<double> x(count);
    for (std::size_t k = 0; k < count; ++k) {
        x[k] = x_min + (x_max - x_min) * static_cast<double>(k) / static_cast<double>(count - 1);
    }
    return x;
}

/// Model samples plus seeded additive Gaussian noise.
inline Dataset synthesize(const SyntheticConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset d;
    d.x = cfg.x;
    d.y.reserve(cfg.x.size());
    for (double x : cfg.x) {
        const double n = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * noise(rng) : 0.0;
        d.y.push_back(cfg.model.evaluate(x) + n);
    }
    return d;
}

// ---- reference parameter sets --------------------------------------------

/// Fit-model parameters reported for the measured sample, with the x-range
/// each experiment covered.
struct ReferenceCase {
    FitModel truth;
    double x_min = 0.0;
    double x_max = 0.0;
    std::string x_units;
};

inline ReferenceCase reference_case(ModelKind kind) {
    auto make = [&](std::vector<double> theta, double lo, double hi, std::string units) {
        ReferenceCase c;
        c.truth.kind = kind;
        c.truth.theta = Eigen::Map<Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
        c.x_min = lo;
        c.x_max = hi;
        c.x_units = std::move(units);
        if (kind == ModelKind::hahn) c.truth.revivals = FitModel::revivals_for(hi, c.truth.theta[3]);
        return c;
    };
    switch (kind) {
        case ModelKind::lorentzian_multi: return make({-0.136, 2869.8e6, 17.7e6, 0.0}, 2.80e9, 2.94e9, "Hz");
        case ModelKind::rabi: return make({-0.0377, 28.96e6, -3.1, 138.68e-9, -0.028}, 0.0, 400e-9, "s");
        case ModelKind::ramsey: return make({3.17e-3, 14.5e6, -8.62, 549e-9, -0.0084}, 0.0, 2e-6, "s");
        case ModelKind::hahn: return make({-0.014, 21e-6, 0.61, 46.7e-6, 7.2e-6, -0.0214}, 0.0, 120e-6, "s");
        case ModelKind::t1_exp: return make({-0.015, 5.2e-3, -0.122}, 0.0, 15e-3, "s");
    }
    throw ValidationError("unknown model kind");
}

/// Four-dip ODMR line parameters (C_i, f_i, gamma_i, ..., C_off).
inline FitModel four_dip_odmr() {
    FitModel m;
    m.kind = ModelKind::lorentzian_multi;
    m.dips = 4;
    m.theta.resize(13);
    m.theta << -0.0211, 2759.08e6, 15.48e6, -0.0438, 2841.59e6, 17.41e6, -0.0427, 2911.40e6, 15.48e6, -0.0212,
        2981.12e6, 14.04e6, 0.0;
    return m;
}

/// Points needed on a uniform grid over [x_min, x_max] so that the
/// Cramer-Rao standard error of every parameter is at most `target` of its
/// scale (|theta|, |C0| for zero-valued parameters, 3 rad for phases).
inline std::size_t crlb_sample_count(const FitModel& truth, double x_min, double x_max, double noise_sigma,
                                     double target = 0.04, std::size_t base = 1000) {
    truth.validate();
    if (!(noise_sigma > 0.0)) throw ValidationError("noise_sigma must be > 0");
    const auto x = uniform_axis(x_min, x_max, base);
    const Eigen::Index p = truth.parameter_count();
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(base), p);
    for (std::size_t i = 0; i < base; ++i) jac.row(static_cast<Eigen::Index>(i)) = truth.gradient(x[i]) / noise_sigma;
    const Eigen::MatrixXd cov = (jac.transpose() * jac).inverse();
    const auto names = truth.parameter_names();
    double worst = 0.0;
    for (Eigen::Index k = 0; k < p; ++k) {
        double scale = std::abs(truth.theta[k]);
        if (names[static_cast<std::size_t>(k)] == "phi") scale = 3.0;
        if (scale == 0.0) scale = std::abs(truth.theta[0]);
        worst = std::max(worst, std::sqrt(cov(k, k)) / scale);
    }
    const double ratio = worst / target;
    return std::max(base, static_cast<std::size_t>(std::ceil(static_cast<double>(base) * ratio * ratio)));
}

/// Per-parameter recovery check used by round-trip reports: phases by
/// wrapped difference, zero-valued truths against |C0|, others relative.
inline std::vector<bool> parameters_recovered(const FitModel& truth, const FitModel& fitted, double rel_tol = 0.1,
                                              double phase_tol = 0.3) {
    FitModel a = truth;
    FitModel b = fitted;
    a.canonicalize();
    b.canonicalize();
    std::vector<bool> ok(static_cast<std::size_t>(a.parameter_count()), false);
    if (b.theta.size() != a.theta.size()) return ok;
    const auto names = a.parameter_names();
    for (Eigen::Index k = 0; k < a.theta.size(); ++k) {
        const double t = a.theta[k];
        const double f = b.theta[k];
        bool good = false;
        if (names[static_cast<std::size_t>(k)] == "phi") {
            good = std::abs(wrap_phase(f - t)) < phase_tol;
        } else if (t == 0.0) {
            good = std::abs(f) <= rel_tol * std::abs(a.theta[0]);
        } else {
            good = std::abs(f - t) <= rel_tol * std::abs(t);
        }
        ok[static_cast<std::size_t>(k)] = good;
    }
    return ok;
}

// ---- pipelines -----------------------------------------------------------

struct PipelineConfig {
    ProtocolKind kind = ProtocolKind::t1;
    RateTable table = RateTable::nv_default();
    PhaseProtocol protocol = PhaseProtocol::standard(5e3);
    double window_s = 500e-6;
    // Relaxometry delays; default 0..15 ms in 0.1 ms steps.
    std::vector<double> delays_s;
    // Round-trip pipelines (non-t1).
    std::optional<SyntheticConfig> synth;
};

struct PipelineReport {
    ProtocolKind kind = ProtocolKind::t1;
    Dataset data;
    FitResult fit;
    ResidualStats stats;
    // t1 pipeline
    double expected_t1_s = 0.0;
    double fitted_t1_s = 0.0;
    double reference_t1_s = 0.0;
    double max_abs_contrast = 0.0;
    double contrast_curve_value = 0.0;
    // round trip
    std::optional<FitModel> truth;
    std::vector<bool> recovered;
    std::uint64_t seed = 0;
};

inline std::vector<double> default_delays() { return parse_number_list("0:15e-3:1e-4", "delays"); }

inline ModelKind model_for(ProtocolKind kind) {
    switch (kind) {
        case ProtocolKind::odmr: return ModelKind::lorentzian_multi;
        case ProtocolKind::rabi: return ModelKind::rabi;
        case ProtocolKind::ramsey: return ModelKind::ramsey;
        case ProtocolKind::hahn: return ModelKind::hahn;
        case ProtocolKind::t1: return ModelKind::t1_exp;
    }
    throw ValidationError("unknown protocol");
}

/// t1: simulated relaxometry sweep fitted with the exponential model.
/// Other kinds: synthesize -> fit round trip against the known truth.
inline PipelineReport pipeline_run(const PipelineConfig& cfg) {
    PipelineReport rep;
    rep.kind = cfg.kind;
    if (cfg.kind == ProtocolKind::t1) {
        const auto delays = cfg.delays_s.empty() ? default_delays() : cfg.delays_s;
        const auto points = relaxometry_points(cfg.table, cfg.protocol, delays, cfg.window_s);
        Dataset reference;
        for (const auto& p : points) {
            rep.data.x.push_back(p.delay_s);
            rep.data.y.push_back(p.contrast());
            reference.x.push_back(p.delay_s);
            reference.y.push_back(p.reference / points.back().reference);
        }
        rep.fit = fit(rep.data, ModelKind::t1_exp);
        rep.stats = goodness(rep.data, rep.fit.model);
        rep.fitted_t1_s = rep.fit.model.theta[1];
        rep.reference_t1_s = fit(reference, ModelKind::t1_exp).model.theta[1];
        const double gamma = cfg.table.rate(1, 2);
        rep.expected_t1_s = gamma > 0.0 ? 1.0 / (3.0 * gamma) : std::numeric_limits<double>::infinity();
        for (double c : rep.data.y) rep.max_abs_contrast = std::max(rep.max_abs_contrast, std::abs(c));
        const std::vector<double> w{cfg.window_s};
        rep.contrast_curve_value = contrast_curve(cfg.table, cfg.protocol, w).contrast.front();
        return rep;
    }
    if (!cfg.synth) throw ValidationError("round-trip pipeline needs a synthetic config");
    const auto& s = *cfg.synth;
    if (s.model.kind != model_for(cfg.kind)) throw ValidationError("synthetic model does not match the protocol");
    rep.seed = s.seed;
    rep.data = synthesize(s);
    FitOptions opts;
    if (s.model.kind == ModelKind::lorentzian_multi) opts.dips = s.model.dips;
    rep.fit = fit(rep.data, s.model.kind, std::nullopt, opts);
    rep.stats = goodness(rep.data, rep.fit.model);
    rep.truth = s.model;
    rep.recovered = parameters_recovered(s.model, rep.fit.model);
    return rep;
}

}  // namespace nvwb
