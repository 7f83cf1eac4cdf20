#pragma once

// Eight-level NV rate model. Level numbering (1-based, as in all files):
//   1..3  ground triplet 3A2, ms = 0, -1, +1
//   4..6  excited triplet 3E, ms = 0, -1, +1
//   7     singlet 1A1
//   8     singlet 1E
// All rates are in Hz, all times in seconds.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nvwb/errors.hpp"
#include "nvwb/matrix_exp.hpp"

namespace nvwb {

inline constexpr int kLevelCount = 8;

using Generator = Eigen::Matrix<double, kLevelCount, kLevelCount>;
using PopulationVector = Eigen::Matrix<double, kLevelCount, 1>;

class LevelIndex {
  public:
    constexpr explicit LevelIndex(int one_based) : value_(one_based) {
        if (one_based < 1 || one_based > kLevelCount) {
            throw ValidationError("level index must be in 1..8, got " + std::to_string(one_based));
        }
    }
    constexpr int value() const noexcept { return value_; }
    constexpr int offset() const noexcept { return value_ - 1; }
    friend constexpr bool operator==(LevelIndex, LevelIndex) = default;

  private:
    int value_;
};

/// True for the optical pumping transitions 1->4, 2->5, 3->6, which are
/// driven uniformly by the table's pump rate.
constexpr bool is_pump_transition(LevelIndex from, LevelIndex to) noexcept {
    return from.value() <= 3 && to.value() == from.value() + 3;
}

/// All k(i->j) of the eight-level model. Pump transitions are not stored
/// per entry; they all read the single pump rate eta.
class RateTable {
  public:
    RateTable() = default;

    /// Literature values used for a single NV under diffraction-limited
    /// illumination, with spin-lattice relaxation at 65 Hz.
    static RateTable nv_default(double pump_hz = 0.0) {
        RateTable t;
        t.set(4, 1, 0.075e9);
        t.set(5, 2, 0.08e9);
        t.set(6, 3, 0.08e9);
        t.set(4, 7, 0.0083e9);
        t.set(5, 7, 0.062857e9);
        t.set(6, 7, 0.062857e9);
        t.set(7, 8, 1e9);
        t.set(8, 1, 0.0032558e9);
        t.set(8, 2, 0.001279e9);
        t.set(8, 3, 0.001279e9);
        t.set_spin_lattice(kDefaultSpinLatticeHz);
        t.set_pump(pump_hz);
        return t;
    }

    static constexpr double kDefaultSpinLatticeHz = 65.0;

    double rate(LevelIndex from, LevelIndex to) const {
        if (from == to) return 0.0;
        if (is_pump_transition(from, to)) return pump_;
        return rates_[slot(from, to)];
    }
    double rate(int from, int to) const { return rate(LevelIndex(from), LevelIndex(to)); }

    RateTable& set(LevelIndex from, LevelIndex to, double hz) {
        if (from == to) {
            throw ValidationError("self-transition k_" + std::to_string(from.value()) + "_" +
                                  std::to_string(to.value()) + " is not allowed");
        }
        if (is_pump_transition(from, to)) {
            throw ValidationError("pump transitions are set through the pump rate (eta)");
        }
        check_rate(hz, "k_" + std::to_string(from.value()) + "_" + std::to_string(to.value()));
        rates_[slot(from, to)] = hz;
        return *this;
    }
    RateTable& set(int from, int to, double hz) { return set(LevelIndex(from), LevelIndex(to), hz); }

    RateTable& set_pump(double hz) {
        check_rate(hz, "eta");
        pump_ = hz;
        return *this;
    }

    /// Symmetric spin-lattice relaxation between ms=0 and ms=+-1.
    RateTable& set_spin_lattice(double hz) {
        set(1, 2, hz);
        set(1, 3, hz);
        set(2, 1, hz);
        set(3, 1, hz);
        return *this;
    }

    double pump() const noexcept { return pump_; }

    RateTable with_pump(double hz) const {
        RateTable copy = *this;
        copy.set_pump(hz);
        return copy;
    }
    RateTable with_spin_lattice(double hz) const {
        RateTable copy = *this;
        copy.set_spin_lattice(hz);
        return copy;
    }

    friend bool operator==(const RateTable&, const RateTable&) = default;

  private:
    static std::size_t slot(LevelIndex from, LevelIndex to) {
        return static_cast<std::size_t>(from.offset() * kLevelCount + to.offset());
    }
    static void check_rate(double hz, const std::string& name) {
        if (!std::isfinite(hz) || hz < 0.0) {
            throw InvalidRateError("rate " + name + " must be finite and >= 0, got " + std::to_string(hz));
        }
    }

    std::array<double, kLevelCount * kLevelCount> rates_{};
    double pump_ = 0.0;
};

/// Eight occupation probabilities. Entries may carry round-off of order
/// 1e-12 below zero; the sum is held to 1 within 1e-9.
class PopulationState {
  public:
    static constexpr double kSumTolerance = 1e-9;
    static constexpr double kNegativeTolerance = 1e-12;

    explicit PopulationState(const PopulationVector& p) : p_(p) {
        if (!p_.allFinite()) {
            throw NumericError("population state has non-finite entries");
        }
        for (int i = 0; i < kLevelCount; ++i) {
            if (p_[i] < -kNegativeTolerance || p_[i] > 1.0 + kNegativeTolerance) {
                throw ValidationError("population p" + std::to_string(i + 1) + " = " + std::to_string(p_[i]) +
                                      " outside [0, 1]");
            }
        }
        if (std::abs(p_.sum() - 1.0) > kSumTolerance) {
            throw ValidationError("populations sum to " + std::to_string(p_.sum()) + ", expected 1");
        }
    }

    /// Equal thirds on the ground triplet, the state before any illumination.
    static PopulationState thermal_ground() {
        PopulationVector p = PopulationVector::Zero();
        p.head<3>().setConstant(1.0 / 3.0);
        return PopulationState(p);
    }

    /// All population on one level.
    static PopulationState pure(LevelIndex level) {
        PopulationVector p = PopulationVector::Zero();
        p[level.offset()] = 1.0;
        return PopulationState(p);
    }

    const PopulationVector& vector() const noexcept { return p_; }
    double operator[](LevelIndex level) const { return p_[level.offset()]; }

    /// Share of the ground-triplet population sitting in ms = 0.
    double ground_polarization() const {
        const double ground = p_.head<3>().sum();
        return ground > 0.0 ? p_[0] / ground : 0.0;
    }

  private:
    PopulationVector p_;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<PopulationState> states;

    Trajectory(std::vector<double> t, std::vector<PopulationState> s) : times(std::move(t)), states(std::move(s)) {
        if (times.size() != states.size() || times.size() < 2) {
            throw ValidationError("trajectory needs matching times/states with at least 2 samples");
        }
        for (std::size_t k = 1; k < times.size(); ++k) {
            if (!(times[k] > times[k - 1])) {
                throw ValidationError("trajectory times must be strictly increasing");
            }
        }
    }

    double duration() const { return times.back() - times.front(); }
    const PopulationState& final_state() const { return states.back(); }
};

/// Laser illumination described by power density on a diffraction-limited
/// spot, converted to a pump rate through a fixed Hz-per-mW coefficient.
struct PumpSpec {
    double power_density_w_per_um2 = 0.0;
    double diffraction_area_um2 = 0.22;
    double eta_hz_per_mw = 30e6;

    void validate() const {
        if (!(power_density_w_per_um2 > 0.0) || !(diffraction_area_um2 > 0.0) || !(eta_hz_per_mw > 0.0)) {
            throw ValidationError("pump spec fields must all be > 0");
        }
    }
};

/// Column-generator of dP/dt = M P: M(j,i) = k(i->j), M(i,i) = -sum_j k(i->j).
inline Generator build_rate_matrix(const RateTable& table) {
    Generator m = Generator::Zero();
    for (int i = 1; i <= kLevelCount; ++i) {
        for (int j = 1; j <= kLevelCount; ++j) {
            if (i == j) continue;
            const double k = table.rate(i, j);
            if (k < 0.0) {
                throw InvalidRateError("negative rate in table");
            }
            m(j - 1, i - 1) += k;
            m(i - 1, i - 1) -= k;
        }
    }
    return m;
}

inline Trajectory propagate(const Generator& generator, const PopulationState& initial,
                            std::span<const double> times) {
    if (times.size() < 2) {
        throw ValidationError("propagate needs at least 2 sample times");
    }
    const auto raw = propagate_linear<kLevelCount>(generator, initial.vector(), times);
    std::vector<PopulationState> states;
    states.reserve(raw.size());
    for (const auto& p : raw) {
        states.emplace_back(p);
    }
    return Trajectory(std::vector<double>(times.begin(), times.end()), std::move(states));
}

/// Unique stationary distribution of the generator. Tables whose levels
/// split into more than one closed class are rejected.
inline PopulationState steady_state(const Generator& generator) {
    if (!generator.allFinite()) {
        throw NumericError("steady_state: generator has non-finite entries");
    }
    Eigen::FullPivLU<Generator> lu(generator);
    if (lu.rank() != kLevelCount - 1) {
        throw NonUniqueSteadyStateError("steady_state: generator null space has dimension " +
                                        std::to_string(kLevelCount - lu.rank()));
    }
    // Replace the last balance equation by normalization.
    Generator system = generator;
    system.row(kLevelCount - 1).setOnes();
    PopulationVector rhs = PopulationVector::Zero();
    rhs[kLevelCount - 1] = 1.0;
    PopulationVector p = system.fullPivLu().solve(rhs);
    // Stationary entries of transient levels can come out as -1e-20.
    p = p.cwiseMax(0.0);
    p /= p.sum();
    return PopulationState(p);
}

/// Photon emission rate from the excited triplet: k41 P4 + k52 P5 + k63 P6.
inline double pl_rate(const PopulationState& state, const RateTable& table) {
    return table.rate(4, 1) * state[LevelIndex(4)] + table.rate(5, 2) * state[LevelIndex(5)] +
           table.rate(6, 3) * state[LevelIndex(6)];
}

inline double pump_rate_from_power_density(const PumpSpec& spec) {
    spec.validate();
    const double power_mw = spec.power_density_w_per_um2 * spec.diffraction_area_um2 * 1e3;
    return spec.eta_hz_per_mw * power_mw;
}

/// Symmetric spin-lattice rate whose ground-state polarization decays with
/// time constant t1 (the mode relaxes at 3 gamma).
inline double gamma_sl_from_t1(double t1_s) {
    if (!(t1_s > 0.0)) {
        throw ValidationError("T1 must be > 0");
    }
    if (std::isinf(t1_s)) return 0.0;
    return 1.0 / (3.0 * t1_s);
}

/// Sample grid for one phase: t = 0, a geometric run from duration*1e-8
/// and a uniform run, merged. Resolves ns features inside ms phases.
inline std::vector<double> phase_grid(double duration_s, int sample_count) {
    if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
        throw ValidationError("phase duration must be finite and > 0");
    }
    if (sample_count < 100) {
        throw ValidationError("phase sample count must be >= 100");
    }
    const int geometric = sample_count / 2;
    const int linear = sample_count - geometric;
    const double first = duration_s * 1e-8;
    const double ratio = std::pow(duration_s / first, 1.0 / (geometric - 1));

    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(sample_count) + 1);
    grid.push_back(0.0);
    for (int k = 0; k < geometric; ++k) {
        grid.push_back(first * std::pow(ratio, k));
    }
    for (int k = 1; k <= linear; ++k) {
        grid.push_back(duration_s * k / linear);
    }
    std::sort(grid.begin(), grid.end());
    std::vector<double> merged;
    merged.reserve(grid.size());
    for (double t : grid) {
        if (merged.empty() || t - merged.back() > 1e-12 * duration_s) {
            merged.push_back(t);
        }
    }
    merged.back() = duration_s;
    return merged;
}

}  // namespace nvwb
