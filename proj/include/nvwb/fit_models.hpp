#pragma once

// Parametric contrast curves used for ODMR, Rabi, Ramsey, Hahn echo and
// spin relaxometry. x is in Hz for ODMR and in seconds otherwise;
// angular frequencies are rad/s.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "nvwb/errors.hpp"

namespace nvwb {

enum class ModelKind { lorentzian_multi, rabi, ramsey, hahn, t1_exp };

inline std::string_view to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::lorentzian_multi: return "lorentzian_multi";
        case ModelKind::rabi: return "rabi";
        case ModelKind::ramsey: return "ramsey";
        case ModelKind::hahn: return "hahn";
        case ModelKind::t1_exp: return "t1_exp";
    }
    return "?";
}

inline ModelKind parse_model_kind(std::string_view name) {
    if (name == "lorentzian_multi" || name == "odmr" || name == "lorentzian") return ModelKind::lorentzian_multi;
    if (name == "rabi") return ModelKind::rabi;
    if (name == "ramsey") return ModelKind::ramsey;
    if (name == "hahn") return ModelKind::hahn;
    if (name == "t1_exp" || name == "t1") return ModelKind::t1_exp;
    throw ValidationError("unknown model kind '" + std::string(name) + "'");
}

/// How a parameter is mapped to the unconstrained optimizer coordinate.
enum class Transform {
    identity,
    log,          // strictly positive scale
    bounded_0_3,  // stretch exponent p in (0, 3)
};

inline double to_internal(Transform t, double value) {
    switch (t) {
        case Transform::identity: return value;
        case Transform::log: return std::log(value);
        case Transform::bounded_0_3: {
            const double s = std::clamp(value / 3.0, 1e-12, 1.0 - 1e-12);
            return std::log(s / (1.0 - s));
        }
    }
    return value;
}

inline double to_natural(Transform t, double u) {
    switch (t) {
        case Transform::identity: return u;
        case Transform::log: return std::exp(u);
        case Transform::bounded_0_3: return 3.0 / (1.0 + std::exp(-u));
    }
    return u;
}

/// d(natural)/d(internal) at internal coordinate u.
inline double natural_derivative(Transform t, double u) {
    switch (t) {
        case Transform::identity: return 1.0;
        case Transform::log: return std::exp(u);
        case Transform::bounded_0_3: {
            const double e = std::exp(-u);
            return 3.0 * e / ((1.0 + e) * (1.0 + e));
        }
    }
    return 1.0;
}

inline double wrap_phase(double phi) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double w = std::fmod(phi + std::numbers::pi, two_pi);
    if (w <= 0.0) w += two_pi;
    return w - std::numbers::pi;
}

/// One of the five curve families with its parameter vector.
///
/// Parameter layouts:
///   lorentzian_multi  C_1, f_1, gamma_1, ..., C_n, f_n, gamma_n, C_off
///   rabi              C0, omega, phi, tau_R, C1
///   ramsey            C0, omega, phi, T2star, C1
///   hahn              C0, T2, p, tau_R, tau_W, C1   (+ structural revival count N)
///   t1_exp            C0, T1, C1
struct FitModel {
    ModelKind kind = ModelKind::t1_exp;
    Eigen::VectorXd theta;
    int dips = 1;
    int revivals = 0;

    static constexpr double kRevivalCutoffWidths = 5.0;

    static int parameter_count(ModelKind kind, int dips = 1) {
        switch (kind) {
            case ModelKind::lorentzian_multi: return 3 * dips + 1;
            case ModelKind::rabi: return 5;
            case ModelKind::ramsey: return 5;
            case ModelKind::hahn: return 6;
            case ModelKind::t1_exp: return 3;
        }
        return 0;
    }

    int parameter_count() const { return parameter_count(kind, dips); }

    std::vector<std::string> parameter_names() const {
        switch (kind) {
            case ModelKind::lorentzian_multi: {
                std::vector<std::string> names;
                for (int i = 1; i <= dips; ++i) {
                    names.push_back("C_" + std::to_string(i));
                    names.push_back("f_" + std::to_string(i));
                    names.push_back("gamma_" + std::to_string(i));
                }
                names.emplace_back("C_off");
                return names;
            }
            case ModelKind::rabi: return {"C0", "omega", "phi", "tau_R", "C1"};
            case ModelKind::ramsey: return {"C0", "omega", "phi", "T2star", "C1"};
            case ModelKind::hahn: return {"C0", "T2", "p", "tau_R", "tau_W", "C1"};
            case ModelKind::t1_exp: return {"C0", "T1", "C1"};
        }
        return {};
    }

    std::vector<Transform> transforms() const {
        using T = Transform;
        switch (kind) {
            case ModelKind::lorentzian_multi: {
                std::vector<T> t;
                for (int i = 0; i < dips; ++i) {
                    t.insert(t.end(), {T::identity, T::identity, T::log});
                }
                t.push_back(T::identity);
                return t;
            }
            case ModelKind::rabi:
            case ModelKind::ramsey: return {T::identity, T::log, T::identity, T::log, T::identity};
            case ModelKind::hahn: return {T::identity, T::log, T::bounded_0_3, T::log, T::log, T::identity};
            case ModelKind::t1_exp: return {T::identity, T::log, T::identity};
        }
        return {};
    }

    /// Revival count covering data up to x_max: N = ceil(x_max / tau_R).
    static int revivals_for(double x_max, double tau_r) {
        if (!(tau_r > 0.0)) return 0;
        return std::max(0, static_cast<int>(std::ceil(x_max / tau_r)));
    }

    void validate() const {
        if (dips < 1) throw ValidationError("lorentzian model needs at least one dip");
        if (theta.size() != parameter_count()) {
            throw ValidationError(std::string(to_string(kind)) + " model expects " +
                                  std::to_string(parameter_count()) + " parameters, got " +
                                  std::to_string(theta.size()));
        }
        if (!theta.allFinite()) throw ValidationError("model parameters must be finite");
        const auto t = transforms();
        const auto names = parameter_names();
        for (int k = 0; k < parameter_count(); ++k) {
            if (t[k] == Transform::log && !(theta[k] > 0.0)) {
                throw ValidationError("parameter " + names[k] + " must be > 0");
            }
            if (t[k] == Transform::bounded_0_3 && !(theta[k] > 0.0 && theta[k] <= 3.0)) {
                throw ValidationError("parameter " + names[k] + " must lie in (0, 3]");
            }
        }
        if (kind == ModelKind::hahn && revivals < 0) throw ValidationError("revival count must be >= 0");
    }

    double evaluate(double x) const {
        const auto& t = theta;
        switch (kind) {
            case ModelKind::lorentzian_multi: {
                double sum = t[3 * dips];
                for (int i = 0; i < dips; ++i) {
                    const double half = 0.5 * t[3 * i + 2];
                    const double dx = x - t[3 * i + 1];
                    sum += t[3 * i] * half * half / (dx * dx + half * half);
                }
                return sum;
            }
            case ModelKind::rabi:
                return t[0] * std::cos(t[1] * x + t[2]) * std::exp(-x / t[3]) + t[4];
            case ModelKind::ramsey: {
                const double r = x / t[3];
                return t[0] * std::cos(t[1] * x + t[2]) * std::exp(-r * r) + t[4];
            }
            case ModelKind::hahn:
                return t[0] * std::exp(-std::pow(x / t[1], t[2])) * revival_sum(x) + t[5];
            case ModelKind::t1_exp:
                return t[0] * std::exp(-x / t[1]) + t[2];
        }
        return 0.0;
    }

    /// Analytic derivative of evaluate(x) with respect to theta.
    Eigen::VectorXd gradient(double x) const {
        Eigen::VectorXd g(parameter_count());
        gradient_into(x, g);
        return g;
    }

    /// gradient() into caller storage of size parameter_count().
    void gradient_into(double x, Eigen::Ref<Eigen::VectorXd> g) const {
        const auto& t = theta;
        switch (kind) {
            case ModelKind::lorentzian_multi: {
                for (int i = 0; i < dips; ++i) {
                    const double amp = t[3 * i];
                    const double half = 0.5 * t[3 * i + 2];
                    const double dx = x - t[3 * i + 1];
                    const double q = dx * dx + half * half;
                    g[3 * i] = half * half / q;
                    g[3 * i + 1] = amp * half * half * 2.0 * dx / (q * q);
                    g[3 * i + 2] = amp * half * dx * dx / (q * q);
                }
                g[3 * dips] = 1.0;
                return;
            }
            case ModelKind::rabi: {
                const double c = std::cos(t[1] * x + t[2]);
                const double s = std::sin(t[1] * x + t[2]);
                const double e = std::exp(-x / t[3]);
                g << c * e, -t[0] * s * x * e, -t[0] * s * e, t[0] * c * e * x / (t[3] * t[3]), 1.0;
                return;
            }
            case ModelKind::ramsey: {
                const double c = std::cos(t[1] * x + t[2]);
                const double s = std::sin(t[1] * x + t[2]);
                const double r = x / t[3];
                const double e = std::exp(-r * r);
                g << c * e, -t[0] * s * x * e, -t[0] * s * e, t[0] * c * e * 2.0 * r * r / t[3], 1.0;
                return;
            }
            case ModelKind::hahn: {
                const double ratio = x / t[1];
                const double stretched = x > 0.0 ? std::pow(ratio, t[2]) : 0.0;
                const double decay = std::exp(-stretched);
                const double log_ratio = x > 0.0 ? std::log(ratio) : 0.0;
                double sum = 0.0, d_period = 0.0, d_width = 0.0;
                const double w = t[4];
                for (int i = 0; i <= revivals; ++i) {
                    const double d = x - i * t[3];
                    if (std::abs(d) > kRevivalCutoffWidths * w) continue;
                    const double gi = std::exp(-d * d / (w * w));
                    sum += gi;
                    d_period += gi * 2.0 * d * i / (w * w);
                    d_width += gi * 2.0 * d * d / (w * w * w);
                }
                g[0] = decay * sum;
                g[1] = t[0] * sum * decay * t[2] * stretched / t[1];
                g[2] = -t[0] * sum * decay * stretched * log_ratio;
                g[3] = t[0] * decay * d_period;
                g[4] = t[0] * decay * d_width;
                g[5] = 1.0;
                return;
            }
            case ModelKind::t1_exp: {
                const double e = std::exp(-x / t[1]);
                g << e, t[0] * e * x / (t[1] * t[1]), 1.0;
                return;
            }
        }
    }

    /// Removes the symmetries of the parameterization: oscillation
    /// amplitudes are made non-negative with the phase wrapped to (-pi, pi],
    /// and ODMR dips are ordered by frequency.
    void canonicalize() {
        if (kind == ModelKind::rabi || kind == ModelKind::ramsey) {
            if (theta[0] < 0.0) {
                theta[0] = -theta[0];
                theta[2] += std::numbers::pi;
            }
            theta[2] = wrap_phase(theta[2]);
        } else if (kind == ModelKind::lorentzian_multi) {
            std::vector<Eigen::Vector3d> lines;
            for (int i = 0; i < dips; ++i) lines.push_back(theta.segment<3>(3 * i));
            std::sort(lines.begin(), lines.end(), [](const auto& a, const auto& b) { return a[1] < b[1]; });
            for (int i = 0; i < dips; ++i) theta.segment<3>(3 * i) = lines[static_cast<std::size_t>(i)];
        }
    }

  private:
    double revival_sum(double x) const {
        const double w = theta[4];
        double sum = 0.0;
        for (int i = 0; i <= revivals; ++i) {
            const double d = x - i * theta[3];
            if (std::abs(d) > kRevivalCutoffWidths * w) continue;
            sum += std::exp(-d * d / (w * w));
        }
        return sum;
    }
};

}  // namespace nvwb
