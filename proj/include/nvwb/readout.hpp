#pragma once

// Three-phase readout protocol (initialize, wait, read out) on the
// eight-level model: integrated fluorescence, contrast against
// integration window, and relaxometry predictions.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nvwb/errors.hpp"
#include "nvwb/kinetics.hpp"
#include "nvwb/matrix_exp.hpp"
#include "nvwb/spectro_fit.hpp"

namespace nvwb {

struct Phase {
    std::string label;
    double duration_s = 0.0;
    double eta_hz = 0.0;
};

/// Ordered phases; the first is the signal (init) phase and the last the
/// reference (readout) phase. Phases in between are free evolution.
struct PhaseProtocol {
    std::vector<Phase> phases;
    int samples_per_phase = kDefaultSamples;

    static constexpr int kDefaultSamples = 4000;

    static PhaseProtocol standard(double eta_hz, double init_s = 3.2e-3, double wait_s = 1e-6,
                                  double readout_s = 3.2e-3) {
        PhaseProtocol p;
        p.phases = {{"init", init_s, eta_hz}, {"wait", wait_s, 0.0}, {"readout", readout_s, eta_hz}};
        return p;
    }

    void validate() const {
        if (phases.size() < 2) throw ValidationError("protocol needs at least an init and a readout phase");
        if (samples_per_phase < 100) throw ValidationError("samples_per_phase must be >= 100");
        for (const auto& ph : phases) {
            if (!(ph.duration_s > 0.0) || !std::isfinite(ph.duration_s)) {
                throw ValidationError("phase '" + ph.label + "' duration must be finite and > 0");
            }
            if (!(ph.eta_hz >= 0.0) || !std::isfinite(ph.eta_hz)) {
                throw InvalidRateError("phase '" + ph.label + "' pump rate must be finite and >= 0");
            }
        }
    }

    const Phase& signal() const { return phases.front(); }
    const Phase& reference() const { return phases.back(); }
};

/// Step propagators for one generator on one sample grid, so a phase can be
/// replayed from many starting states at the cost of matrix-vector products.
class PhasePropagator {
  public:
    PhasePropagator(const Generator& generator, std::vector<double> times) : times_(std::move(times)) {
        if (times_.size() < 2 || times_.front() != 0.0) {
            throw ValidationError("phase grid must start at 0 with at least 2 samples");
        }
        if (!generator.allFinite()) throw NumericError("generator has non-finite entries");
        steps_.reserve(times_.size() - 1);
        double cached_dt = -1.0;
        Generator step = Generator::Identity();
        for (std::size_t k = 1; k < times_.size(); ++k) {
            const double dt = times_[k] - times_[k - 1];
            if (!(dt > 0.0)) throw ValidationError("phase grid must be strictly increasing");
            if (std::abs(dt - cached_dt) > 1e-12 * dt) {
                step = generator_exp(generator, dt);
                cached_dt = dt;
            }
            steps_.push_back(step);
        }
    }

    Trajectory run(const PopulationState& initial) const {
        std::vector<PopulationState> states;
        states.reserve(times_.size());
        PopulationVector p = initial.vector();
        states.emplace_back(p);
        for (const auto& s : steps_) {
            p = s * p;
            states.emplace_back(p);
        }
        return Trajectory(times_, std::move(states));
    }

    const std::vector<double>& times() const { return times_; }

  private:
    std::vector<double> times_;
    std::vector<Generator> steps_;
};

/// One trajectory per phase, each on phase-relative time starting at 0.
inline std::vector<Trajectory> run_protocol(const RateTable& table, const PhaseProtocol& protocol,
                                            const PopulationState& initial = PopulationState::thermal_ground()) {
    protocol.validate();
    std::vector<Trajectory> out;
    out.reserve(protocol.phases.size());
    PopulationState state = initial;
    for (const auto& phase : protocol.phases) {
        const Generator m = build_rate_matrix(table.with_pump(phase.eta_hz));
        const auto grid = phase_grid(phase.duration_s, protocol.samples_per_phase);
        out.push_back(propagate(m, state, grid));
        state = out.back().final_state();
    }
    return out;
}

/// Running trapezoid integral of the PL rate along a trajectory. Windows
/// falling inside a sample interval interpolate the rate linearly.
class PlIntegral {
  public:
    PlIntegral(const Trajectory& traj, const RateTable& table) : t0_(traj.times.front()) {
        times_.reserve(traj.times.size());
        rate_.reserve(traj.times.size());
        for (std::size_t k = 0; k < traj.times.size(); ++k) {
            times_.push_back(traj.times[k] - t0_);
            rate_.push_back(pl_rate(traj.states[k], table));
        }
        cumulative_.assign(times_.size(), 0.0);
        for (std::size_t k = 1; k < times_.size(); ++k) {
            cumulative_[k] = cumulative_[k - 1] + 0.5 * (rate_[k] + rate_[k - 1]) * (times_[k] - times_[k - 1]);
        }
    }

    double duration() const { return times_.back(); }
    const std::vector<double>& times() const { return times_; }
    const std::vector<double>& rates() const { return rate_; }

    double operator()(double window) const {
        if (!(window >= 0.0)) throw OutOfRangeError("integration window must be >= 0");
        if (window > duration() * (1.0 + 1e-12)) {
            throw OutOfRangeError("integration window " + std::to_string(window) + " s exceeds trajectory duration " +
                                  std::to_string(duration()) + " s");
        }
        window = std::min(window, duration());
        const auto it = std::upper_bound(times_.begin(), times_.end(), window);
        const auto k = static_cast<std::size_t>(std::distance(times_.begin(), it)) - 1;
        if (k + 1 >= times_.size()) return cumulative_.back();
        const double h = window - times_[k];
        const double frac = h / (times_[k + 1] - times_[k]);
        const double r_end = rate_[k] + frac * (rate_[k + 1] - rate_[k]);
        return cumulative_[k] + 0.5 * (rate_[k] + r_end) * h;
    }

  private:
    double t0_;
    std::vector<double> times_;
    std::vector<double> rate_;
    std::vector<double> cumulative_;
};

/// Photons emitted in [0, window] of the trajectory (trapezoid rule).
inline double integrated_pl(const Trajectory& traj, const RateTable& table, double window_s) {
    return PlIntegral(traj, table)(window_s);
}

struct ContrastExtremum {
    std::size_t index = 0;
    double window_s = 0.0;
    double contrast = 0.0;
};

struct ContrastCurve {
    std::vector<double> windows;
    std::vector<double> contrast;

    void validate() const {
        if (windows.size() != contrast.size()) throw ValidationError("contrast curve lengths differ");
        if (windows.empty()) throw ValidationError("contrast curve is empty");
        for (std::size_t k = 0; k < windows.size(); ++k) {
            if (!std::isfinite(contrast[k])) throw NumericError("contrast values must be finite");
            if (k > 0 && !(windows[k] > windows[k - 1])) throw ValidationError("windows must be increasing");
        }
    }

    /// First sample where |contrast| reaches its global maximum.
    ContrastExtremum extremum() const {
        validate();
        std::size_t best = 0;
        for (std::size_t k = 1; k < contrast.size(); ++k) {
            if (std::abs(contrast[k]) > std::abs(contrast[best])) best = k;
        }
        return {best, windows[best], contrast[best]};
    }
};

namespace detail {

inline void check_shared_pump(const PhaseProtocol& protocol) {
    if (protocol.signal().eta_hz != protocol.reference().eta_hz) {
        throw PreconditionError("init and readout phases must share the pump rate");
    }
}

inline ContrastCurve contrast_from(const PlIntegral& signal, const PlIntegral& reference,
                                   std::span<const double> windows) {
    const double limit = std::min(signal.duration(), reference.duration());
    ContrastCurve curve;
    curve.windows.reserve(windows.size());
    curve.contrast.reserve(windows.size());
    for (double w : windows) {
        if (!(w > 0.0) || w > limit * (1.0 + 1e-12)) {
            throw OutOfRangeError("window " + std::to_string(w) + " s outside (0, " + std::to_string(limit) + "] s");
        }
        const double s = signal(w);
        const double r = reference(w);
        if (r == 0.0) throw NumericError("reference fluorescence is zero; contrast undefined");
        curve.windows.push_back(w);
        curve.contrast.push_back((s - r) / r);
    }
    return curve;
}

}  // namespace detail

/// (S - R) / R with S the init-phase and R the readout-phase fluorescence
/// integrated over the same window.
inline ContrastCurve contrast_curve(const RateTable& table, const PhaseProtocol& protocol,
                                    std::span<const double> windows,
                                    const PopulationState& initial = PopulationState::thermal_ground()) {
    protocol.validate();
    detail::check_shared_pump(protocol);
    const auto trajs = run_protocol(table, protocol, initial);
    const RateTable pumped = table.with_pump(protocol.signal().eta_hz);
    return detail::contrast_from(PlIntegral(trajs.front(), pumped), PlIntegral(trajs.back(), pumped), windows);
}

/// Evenly spaced windows over (0, span].
inline std::vector<double> linear_windows(double span_s, int count) {
    if (!(span_s > 0.0) || count < 1) throw ValidationError("linear_windows needs span > 0 and count >= 1");
    std::vector<double> w(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) w[static_cast<std::size_t>(k)] = span_s * (k + 1) / count;
    return w;
}

/// Log-spaced windows over [first, last].
inline std::vector<double> geometric_windows(double first_s, double last_s, int count) {
    if (!(first_s > 0.0) || !(last_s > first_s) || count < 2) {
        throw ValidationError("geometric_windows needs 0 < first < last and count >= 2");
    }
    std::vector<double> w(static_cast<std::size_t>(count));
    const double ratio = std::pow(last_s / first_s, 1.0 / (count - 1));
    for (int k = 0; k < count; ++k) w[static_cast<std::size_t>(k)] = first_s * std::pow(ratio, k);
    w.back() = last_s;
    return w;
}

/// Characteristic time of the |contrast| tail after its extremum, from a
/// fit of A exp(-w/tau) + B.
inline double contrast_decay_time(const ContrastCurve& curve) {
    const auto peak = curve.extremum();
    const std::size_t first = peak.index + 1;
    if (curve.windows.size() < first + 4) {
        throw FitError("fewer than 4 samples after the contrast extremum");
    }
    Dataset tail;
    const double origin = curve.windows[first];
    double scale = 0.0;
    for (std::size_t k = first; k < curve.windows.size(); ++k) scale = std::max(scale, std::abs(curve.contrast[k]));
    for (std::size_t k = first; k < curve.windows.size(); ++k) {
        const double v = std::abs(curve.contrast[k]);
        if (!tail.y.empty() && v > tail.y.back() + 1e-12 * scale) {
            throw FitError("|contrast| is not monotone after its extremum");
        }
        tail.x.push_back(curve.windows[k] - origin);
        tail.y.push_back(v);
    }
    const auto result = fit(tail, ModelKind::t1_exp);
    if (!result.converged) throw FitError("decay fit did not converge");
    return result.model.theta[1];
}

namespace detail {

/// Protocol with the free-evolution part replaced by one pump-off phase of
/// length `delay` (dropped when delay is 0).
inline PhaseProtocol with_delay(const PhaseProtocol& protocol, double delay_s) {
    if (!(delay_s >= 0.0) || !std::isfinite(delay_s)) throw ValidationError("delay must be finite and >= 0");
    if (protocol.phases.size() > 3) {
        throw ValidationError("relaxometry needs an init, optional wait and readout phase");
    }
    PhaseProtocol out = protocol;
    Phase wait = protocol.phases.size() == 3 ? protocol.phases[1] : Phase{"wait", 0.0, 0.0};
    out.phases = {protocol.signal()};
    if (delay_s > 0.0) {
        wait.duration_s = delay_s;
        out.phases.push_back(wait);
    }
    out.phases.push_back(protocol.reference());
    return out;
}

}  // namespace detail

/// Signal and reference fluorescence at one relaxometry delay.
struct RelaxometryPoint {
    double delay_s = 0.0;
    double signal = 0.0;
    double reference = 0.0;

    double contrast() const {
        if (reference == 0.0) throw NumericError("reference fluorescence is zero; contrast undefined");
        return (signal - reference) / reference;
    }
};

/// Integrated fluorescence over `window` for each delay between
/// initialization and readout. The init phase and the readout step
/// propagators are computed once for the whole sweep.
inline std::vector<RelaxometryPoint> relaxometry_points(const RateTable& table, const PhaseProtocol& protocol,
                                                        std::span<const double> delays, double window_s,
                                                        const PopulationState& initial =
                                                            PopulationState::thermal_ground()) {
    protocol.validate();
    detail::check_shared_pump(protocol);
    const double limit = std::min(protocol.signal().duration_s, protocol.reference().duration_s);
    if (!(window_s > 0.0) || window_s > limit * (1.0 + 1e-12)) {
        throw OutOfRangeError("window " + std::to_string(window_s) + " s outside (0, " + std::to_string(limit) + "] s");
    }
    const RateTable pumped = table.with_pump(protocol.signal().eta_hz);
    const Generator m_pump = build_rate_matrix(pumped);
    const Trajectory init =
        propagate(m_pump, initial, phase_grid(protocol.signal().duration_s, protocol.samples_per_phase));
    const double signal = PlIntegral(init, pumped)(window_s);
    const PhasePropagator readout(m_pump, phase_grid(protocol.reference().duration_s, protocol.samples_per_phase));

    std::vector<RelaxometryPoint> out;
    out.reserve(delays.size());
    for (double delay : delays) {
        const PhaseProtocol p = detail::with_delay(protocol, delay);
        PopulationVector state = init.final_state().vector();
        if (p.phases.size() == 3) {
            const Generator m_wait = build_rate_matrix(table.with_pump(p.phases[1].eta_hz));
            state = generator_exp(m_wait, delay) * state;
        }
        const Trajectory ro = readout.run(PopulationState(state));
        out.push_back({delay, signal, PlIntegral(ro, pumped)(window_s)});
    }
    return out;
}

/// Contrast at `window` for each delay.
inline std::vector<double> relaxometry_sweep(const RateTable& table, const PhaseProtocol& protocol,
                                             std::span<const double> delays, double window_s,
                                             const PopulationState& initial = PopulationState::thermal_ground()) {
    std::vector<double> out;
    for (const auto& p : relaxometry_points(table, protocol, delays, window_s, initial)) out.push_back(p.contrast());
    return out;
}

inline double relaxometry_prediction(const RateTable& table, const PhaseProtocol& protocol, double delay_s,
                                     double window_s,
                                     const PopulationState& initial = PopulationState::thermal_ground()) {
    const std::vector<double> delays{delay_s};
    return relaxometry_sweep(table, protocol, delays, window_s, initial).front();
}

}  // namespace nvwb
