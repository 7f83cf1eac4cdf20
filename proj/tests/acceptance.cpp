// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nvwb/effective.hpp"
#include "nvwb/pulse_seq.hpp"
#include "nvwb/readout.hpp"
#include "nvwb/spectro_fit.hpp"
#include "nvwb/workbench.hpp"

using namespace nvwb;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << "[failed: " << what << "] ";
        }
    }
};

bool near(double got, double want, double tol) { return std::abs(got - want) <= tol; }

struct Sample {
    double time = 0.0;
    double rate = 0.0;
};

Sample global_max(const PlIntegral& pl) {
    const auto it = std::max_element(pl.rates().begin(), pl.rates().end());
    const auto k = static_cast<std::size_t>(it - pl.rates().begin());
    return {pl.times()[k], pl.rates()[k]};
}

Sample first_local_min(const PlIntegral& pl) {
    const auto& r = pl.rates();
    for (std::size_t k = 1; k + 1 < r.size(); ++k) {
        if (r[k] < r[k - 1] && r[k] < r[k + 1]) return {pl.times()[k], r[k]};
    }
    return {};
}

void strong_readout(Outcome& o) {
    const auto table = RateTable::nv_default();
    const auto pumped = table.with_pump(10e6);
    const auto trajs = run_protocol(table, PhaseProtocol::standard(10e6));
    const PlIntegral init(trajs.front(), pumped);
    const PlIntegral ro(trajs.back(), pumped);
    const auto peak = global_max(ro);
    const auto dip = first_local_min(init);
    const double steady = pl_rate(steady_state(build_rate_matrix(pumped)), pumped);
    o.detail << "peak " << peak.rate / 1e6 << " Mcps at " << peak.time * 1e9 << " ns; dip " << dip.rate / 1e6
             << " Mcps at " << dip.time * 1e9 << " ns; steady " << steady / 1e6 << " Mcps ";
    o.check(near(peak.rate, 7.12e6, 0.05 * 7.12e6), "peak value");
    o.check(near(peak.time, 46e-9, 0.25 * 46e-9), "peak time");
    o.check(near(dip.rate, 4.93e6, 0.05 * 4.93e6), "dip value");
    o.check(near(dip.time, 220e-9, 0.25 * 220e-9), "dip time");
    o.check(near(steady, 6.18e6, 0.05 * 6.18e6), "steady value");
}

void strong_contrast(Outcome& o) {
    const auto table = RateTable::nv_default();
    const auto p = PhaseProtocol::standard(10e6);
    const std::vector<double> w{0.25e-6};
    const double c = contrast_curve(table, p, w).contrast[0];
    const double tau = contrast_decay_time(contrast_curve(table, p, linear_windows(3.2e-6, 400)));
    o.detail << "c(0.25 us) " << 100.0 * c << " %; tau " << tau * 1e6 << " us ";
    o.check(near(c, -0.224, 0.015), "contrast at 0.25 us");
    o.check(near(tau, 1.26e-6, 0.1 * 1.26e-6), "decay time");
}

void weak_contrast(Outcome& o) {
    const auto table = RateTable::nv_default();
    const auto p = PhaseProtocol::standard(5e3);
    const auto ext = contrast_curve(table, p, geometric_windows(1e-8, 3.2e-3, 600)).extremum();
    const double tau = contrast_decay_time(contrast_curve(table, p, linear_windows(3.2e-3, 400)));
    const std::vector<double> w{500e-6};
    const double c500 = contrast_curve(table, p, w).contrast[0];
    o.detail << "extremum " << 100.0 * ext.contrast << " % at " << ext.window_s * 1e6 << " us; tau " << tau * 1e3
             << " ms; c(500 us) " << 100.0 * c500 << " % ";
    o.check(near(ext.contrast, -0.185, 0.015), "extremum value");
    o.check(near(ext.window_s, 5e-6, 0.5 * 5e-6), "extremum window");
    o.check(near(tau, 1.12e-3, 0.1 * 1.12e-3), "decay time");
    o.check(near(c500, -0.12, 0.015), "contrast at 500 us");
}

void prediction_34khz(Outcome& o) {
    const auto table = RateTable::nv_default().with_spin_lattice(gamma_sl_from_t1(3.24e-3));
    const double c = relaxometry_prediction(table, PhaseProtocol::standard(34e3), 1e-6, 250e-6);
    o.detail << "contrast " << 100.0 * c << " % ";
    o.check(near(c, -0.0728, 0.01), "contrast");
}

void equivalence(Outcome& o) {
    const auto table = RateTable::nv_default();
    const double weak = validate_equivalence(table, PhaseProtocol::standard(5e3));
    const double dark = validate_equivalence(table, PhaseProtocol::standard(0.0));
    o.detail << "max discrepancy " << weak << " at 5 kHz, " << dark << " at 0 ";
    o.check(weak < 1e-3, "5 kHz");
    o.check(dark < 1e-12, "no pump");
}

void pump_conversions(Outcome& o) {
    const struct {
        double density;
        double expected;
    } cases[] = {{1.5e-3, 9.9e6}, {0.72e-6, 4.752e3}, {5.1e-6, 33.66e3}};
    for (const auto& c : cases) {
        PumpSpec s;
        s.power_density_w_per_um2 = c.density;
        const double eta = pump_rate_from_power_density(s);
        o.detail << eta << " Hz; ";
        o.check(near(eta, c.expected, 0.01 * c.expected), "conversion of " + std::to_string(c.density));
    }
}

void round_trips(Outcome& o) {
    constexpr int kRuns = 50;
    for (auto kind : {ModelKind::lorentzian_multi, ModelKind::rabi, ModelKind::ramsey, ModelKind::hahn,
                      ModelKind::t1_exp}) {
        const auto c = reference_case(kind);
        const double sigma = 0.2 * std::abs(c.truth.theta[0]);
        const auto n = crlb_sample_count(c.truth, c.x_min, c.x_max, sigma);
        const auto x = uniform_axis(c.x_min, c.x_max, n);
        int ok = 0;
        for (int seed = 1; seed <= kRuns; ++seed) {
            SyntheticConfig s{c.truth, x, sigma, static_cast<std::uint64_t>(seed)};
            FitOptions opts;
            opts.dips = c.truth.dips;
            try {
                const auto r = fit(synthesize(s), kind, std::nullopt, opts);
                const auto rec = parameters_recovered(c.truth, r.model);
                if (r.converged && std::all_of(rec.begin(), rec.end(), [](bool b) { return b; })) ++ok;
            } catch (const FitError&) {
            }
        }
        o.detail << to_string(kind) << " " << ok << "/" << kRuns << " (n=" << n << "); ";
        o.check(ok >= 45, std::string(to_string(kind)) + " below 90%");
    }
}

void derived(Outcome& o) {
    const auto [half, pi] = derive_pi_pulses(28.96e6);
    const double half_ns = std::round(half * 1e9 * 100.0) / 100.0;
    const double pi_ns = std::round(pi * 1e9 * 100.0) / 100.0;
    const double b = b_field_from_splitting(2759.08e6, 2981.12e6);
    o.detail << "pi/2 " << half_ns << " ns, pi " << pi_ns << " ns, B " << b << " G ";
    o.check(half_ns == 54.24 && pi_ns == 108.48, "pi pulses at 0.01 ns");
    o.check(near(b, 39.65, 0.01), "field");
}

RateTable random_table(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> exponent(1.0, 9.0);
    RateTable t;
    for (int f = 1; f <= 8; ++f) {
        for (int g = 1; g <= 8; ++g) {
            if (f != g && !is_pump_transition(LevelIndex(f), LevelIndex(g))) t.set(f, g, std::pow(10.0, exponent(rng)));
        }
    }
    t.set_pump(std::pow(10.0, exponent(rng)));
    return t;
}

void properties(Outcome& o) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst_sum = 0.0, worst_column = 0.0, worst_steady = 0.0;
    for (int k = 0; k < 120; ++k) {
        const auto table = random_table(rng);
        const auto m = build_rate_matrix(table);
        worst_column = std::max(worst_column, m.colwise().sum().cwiseAbs().maxCoeff() / m.cwiseAbs().maxCoeff());
        PopulationVector p;
        for (int i = 0; i < 8; ++i) p[i] = unit(rng);
        p /= p.sum();
        const auto traj = propagate(m, PopulationState(p), phase_grid(std::pow(10.0, -9.0 + 8.0 * unit(rng)), 100));
        for (const auto& s : traj.states) worst_sum = std::max(worst_sum, std::abs(s.vector().sum() - 1.0));
        double slowest = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 8; ++i) {
            for (int j = 0; j < 8; ++j) {
                if (i != j && m(i, j) > 0.0) slowest = std::min(slowest, m(i, j));
            }
        }
        const std::vector<double> times{0.0, 100.0 / slowest};
        const auto late = propagate(m, PopulationState::thermal_ground(), times).final_state();
        worst_steady = std::max(worst_steady, (late.vector() - steady_state(m).vector()).cwiseAbs().maxCoeff());
    }
    o.detail << "conservation " << worst_sum << ", column sums " << worst_column << ", steady " << worst_steady << "; ";
    o.check(worst_sum <= 1e-9, "conservation");
    o.check(worst_column <= 1e-12, "column sums");
    o.check(worst_steady <= 1e-9, "steady state");

    int built = 0, invalid = 0, nondeterministic = 0;
    std::uniform_int_distribution<std::int64_t> len(1, 5000);
    for (int n = 0; n < 500; ++n) {
        ProtocolSpec s;
        s.kind = static_cast<ProtocolKind>(n % 5);
        s.init_laser_ns = len(rng) * 100;
        s.exposure_ns = len(rng) * 10;
        s.guard_ns = len(rng) % 2000;
        s.pi_half_ns = len(rng) % 300 + 1;
        s.pi_ns = 2 * s.pi_half_ns;
        const double offset = s.kind == ProtocolKind::odmr ? 2.87e9 : 0.0;
        s.sweep = {offset + static_cast<double>(len(rng) * 3), offset};
        s.include_reference = n % 2 == 0;
        for (double v : s.sweep) {
            const auto a = build(s, v);
            ++built;
            if (!validate(a).empty()) ++invalid;
            if (export_timing_table(a) != export_timing_table(build(s, v))) ++nondeterministic;
        }
    }
    o.detail << "sequences " << built << " built, " << invalid << " invalid, " << nondeterministic
             << " nondeterministic; ";
    o.check(invalid == 0, "validator");
    o.check(nondeterministic == 0, "determinism");

    int mismatches = 0;
    for (int n = 0; n < 40; ++n) {
        auto img = gaussian_spot(16 + n, 12 + n / 3, 3.0 + 8.0 * unit(rng), 3.0 + 5.0 * unit(rng), 1.0 + 3.0 * unit(rng),
                                 500.0 * unit(rng) + 1.0, 10.0 * unit(rng));
        for (double& px : img.pixels) px += 3.0 * unit(rng);
        const auto r = roi_mask(img);
        double peak = 0.0;
        for (double px : img.pixels) peak = std::max(peak, px);
        double sum = 0.0;
        std::size_t count = 0;
        bool same_mask = true;
        for (std::size_t row = 0; row < img.height; ++row) {
            for (std::size_t col = 0; col < img.width; ++col) {
                const bool in = img.at(col, row) >= 0.85 * peak;
                if (in != (r.mask[row * img.width + col] != 0)) same_mask = false;
                if (in) {
                    sum += img.at(col, row);
                    ++count;
                }
            }
        }
        if (!same_mask || r.mean != sum / static_cast<double>(count)) ++mismatches;
    }
    o.detail << "roi mismatches " << mismatches << " ";
    o.check(mismatches == 0, "roi oracle");
}

void t1_pipeline(Outcome& o) {
    const auto rep = pipeline_run(PipelineConfig{});
    o.detail << "fitted T1 " << rep.fitted_t1_s * 1e3 << " ms (expected 1/(3 gamma) " << rep.expected_t1_s * 1e3
             << " ms), max |c| " << 100.0 * rep.max_abs_contrast << " % ";
    o.check(rep.fit.converged, "fit converged");
    o.check(rep.fitted_t1_s >= 4.6e-3 && rep.fitted_t1_s <= 5.7e-3, "T1 in [4.6, 5.7] ms");
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<void(Outcome&)> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "strong-pump readout landmarks", 5.0, strong_readout},
        {2, "strong-pump contrast", 0.0, strong_contrast},
        {3, "weak-pump contrast", 30.0, weak_contrast},
        {4, "relaxometry prediction at 34 kHz", 0.0, prediction_34khz},
        {5, "effective-model equivalence", 0.0, equivalence},
        {6, "pump-rate conversions", 0.0, pump_conversions},
        {7, "fit round trips", 60.0, round_trips},
        {8, "derived quantities", 0.0, derived},
        {9, "property suites", 0.0, properties},
        {10, "t1 pipeline", 0.0, t1_pipeline},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        const auto start = std::chrono::steady_clock::now();
        try {
            c.run(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "[exception: " << e.what() << "] ";
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget_s > 0.0 && secs > c.budget_s) {
            o.pass = false;
            o.detail << "[over budget " << c.budget_s << " s] ";
        }
        if (!o.pass) ++failed;
        std::printf("%s criterion %d (%s): %s(%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                    o.detail.str().c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
