#pragma once

// Adiabatic elimination of the excited and singlet levels under weak
// pumping, leaving a three-level model on the ground triplet.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nvwb/errors.hpp"
#include "nvwb/kinetics.hpp"
#include "nvwb/matrix_exp.hpp"
#include "nvwb/readout.hpp"

namespace nvwb {

using GroundVector = Eigen::Vector3d;

/// Effective rates among ground levels 1..3, stored in from->to direction
/// and 0-based: transfer[f][t] is the rate carrying population from level
/// f+1 to level t+1 through the excited/singlet cycle.
struct EffectiveRates {
    // Rate at which pumped population comes back to its own ground level.
    std::array<double, 3> return_rate{};
    std::array<std::array<double, 3>, 3> transfer{};
    std::array<std::array<double, 3>, 3> spin_lattice{};
    std::array<double, 3> pump{};
    bool weak_pump = true;

    /// 3x3 column generator, same convention as build_rate_matrix.
    Eigen::Matrix3d generator() const {
        Eigen::Matrix3d g = Eigen::Matrix3d::Zero();
        for (int f = 0; f < 3; ++f) {
            double out = pump[f] - return_rate[f];
            for (int t = 0; t < 3; ++t) {
                if (t == f) continue;
                g(t, f) += transfer[f][t] + spin_lattice[f][t];
                out += spin_lattice[f][t];
            }
            g(f, f) = -out;
        }
        return g;
    }
};

/// Ratio below which the pump counts as weak relative to k(4->1).
inline constexpr double kWeakPumpRatio = 1e-3;

inline bool is_weak_pump(const RateTable& table) {
    return table.pump() < kWeakPumpRatio * table.rate(4, 1);
}

namespace detail {

/// True when k(from->to) belongs to the cycle the elimination formulas cover.
inline bool modelled_transition(int from, int to) {
    if (from <= 3 && to <= 3) return true;
    if (from <= 3) return to == from + 3;
    if (from <= 6) return to == from - 3 || to == 7;
    if (from == 7) return to == 8;
    return to <= 3;
}

}  // namespace detail

/// Closed-form elimination. For ground level i with excited partner e=i+3
/// and D_e = k(e->i) + k(e->7), S = k(8->1) + k(8->2) + k(8->3):
///   return_rate(i)  = eta / D_e * [k(e->i) + k(8->i) k(e->7) / S]
///   transfer(i->j)  = eta * k(e->7) / D_e * k(8->j) / S
/// The net loss eta - return_rate(i) equals the sum of transfers out of i.
inline EffectiveRates eliminate(const RateTable& table) {
    for (int f = 1; f <= kLevelCount; ++f) {
        for (int t = 1; t <= kLevelCount; ++t) {
            if (f != t && table.rate(f, t) != 0.0 && !detail::modelled_transition(f, t)) {
                throw PreconditionError("elimination does not cover transition k_" + std::to_string(f) + "_" +
                                        std::to_string(t));
            }
        }
    }
    const double singlet_out = table.rate(8, 1) + table.rate(8, 2) + table.rate(8, 3);
    if (!(singlet_out > 0.0) || !(table.rate(7, 8) > 0.0)) {
        throw DegenerateTableError("singlet levels have no decay path back to the ground triplet");
    }
    EffectiveRates r;
    r.weak_pump = is_weak_pump(table);
    const double eta = table.pump();
    for (int i = 0; i < 3; ++i) {
        const int g = i + 1;
        const int e = i + 4;
        const double decay = table.rate(e, g) + table.rate(e, 7);
        if (!(decay > 0.0)) {
            throw DegenerateTableError("excited level " + std::to_string(e) + " has no decay (k_" + std::to_string(e) +
                                       "_" + std::to_string(g) + " + k_" + std::to_string(e) + "_7 = 0)");
        }
        const double isc = table.rate(e, 7);
        r.pump[i] = eta;
        r.return_rate[i] = eta / decay * (table.rate(e, g) + table.rate(8, g) * isc / singlet_out);
        for (int j = 0; j < 3; ++j) {
            if (j == i) continue;
            r.transfer[i][j] = eta * isc / decay * table.rate(8, j + 1) / singlet_out;
            r.spin_lattice[i][j] = table.rate(g, j + 1);
        }
        const double net_loss = r.pump[i] - r.return_rate[i];
        if (net_loss < -1e-12 * eta) {
            throw NumericError("effective net loss of level " + std::to_string(g) + " is negative");
        }
    }
    return r;
}

/// Embeds a ground-triplet distribution into the eight-level state.
inline PopulationState embed_ground(const GroundVector& p) {
    PopulationVector full = PopulationVector::Zero();
    full.head<3>() = p;
    return PopulationState(full);
}

/// Solves the three-level model; states are returned as eight-level
/// populations with levels 4..8 empty.
inline Trajectory propagate_effective(const EffectiveRates& rates, const GroundVector& p0,
                                      std::span<const double> times) {
    if (!p0.allFinite() || (p0.array() < 0.0).any() || std::abs(p0.sum() - 1.0) > PopulationState::kSumTolerance) {
        throw ValidationError("ground populations must be >= 0 and sum to 1");
    }
    if (times.size() < 2) throw ValidationError("propagate_effective needs at least 2 sample times");
    const auto raw = propagate_linear<3>(rates.generator(), p0, times);
    std::vector<PopulationState> states;
    states.reserve(raw.size());
    for (const auto& p : raw) states.push_back(embed_ground(p));
    return Trajectory(std::vector<double>(times.begin(), times.end()), std::move(states));
}

/// Ground-triplet stationary distribution of the effective model.
inline GroundVector effective_steady_state(const EffectiveRates& rates) {
    Eigen::Matrix3d system = rates.generator();
    Eigen::FullPivLU<Eigen::Matrix3d> lu(system);
    if (lu.rank() != 2) throw NonUniqueSteadyStateError("effective generator has no unique steady state");
    system.row(2).setOnes();
    const GroundVector p = system.fullPivLu().solve(GroundVector(0.0, 0.0, 1.0));
    return p.cwiseMax(0.0) / p.cwiseMax(0.0).sum();
}

/// Runs the full and effective models phase by phase on the same grid and
/// returns max |P_full - P_eff| over samples and ground levels.
inline double validate_equivalence(const RateTable& table, const PhaseProtocol& protocol,
                                   const GroundVector& p0 = GroundVector::Constant(1.0 / 3.0)) {
    protocol.validate();
    for (const auto& phase : protocol.phases) {
        if (!is_weak_pump(table.with_pump(phase.eta_hz))) {
            throw PreconditionError("phase '" + phase.label + "' pump rate is not weak; elimination invalid");
        }
    }
    const auto full = run_protocol(table, protocol, embed_ground(p0));
    double worst = 0.0;
    GroundVector state = p0;
    for (std::size_t k = 0; k < protocol.phases.size(); ++k) {
        const auto rates = eliminate(table.with_pump(protocol.phases[k].eta_hz));
        const auto& ref = full[k];
        const auto eff = propagate_effective(rates, state, ref.times);
        for (std::size_t s = 0; s < ref.times.size(); ++s) {
            const auto diff = (ref.states[s].vector().head<3>() - eff.states[s].vector().head<3>()).cwiseAbs();
            worst = std::max(worst, diff.maxCoeff());
        }
        state = eff.final_state().vector().head<3>();
    }
    return worst;
}

}  // namespace nvwb
