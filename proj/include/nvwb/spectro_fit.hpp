#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <tuple>
#include <limits>
#include <utility>
#include <vector>

#include "nvwb/errors.hpp"
#include "nvwb/fit_models.hpp"
#include "nvwb/levenberg_marquardt.hpp"

namespace nvwb {

/// Measured (or synthesized) contrast curve. x is Hz for ODMR sweeps and
/// seconds for time sweeps; sigma, when present, weights the residuals.
struct Dataset {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> sigma;

    bool has_sigma() const { return !sigma.empty(); }
    std::size_t size() const { return x.size(); }

    void validate(std::size_t min_points = 2) const {
        if (x.size() != y.size()) throw ValidationError("dataset x and y differ in length");
        if (has_sigma() && sigma.size() != x.size()) throw ValidationError("dataset sigma length mismatch");
        if (x.size() < min_points) {
            throw ValidationError("dataset has " + std::to_string(x.size()) + " points, needs at least " +
                                  std::to_string(min_points));
        }
        for (std::size_t k = 0; k < x.size(); ++k) {
            if (!std::isfinite(x[k]) || !std::isfinite(y[k])) throw ValidationError("dataset values must be finite");
            if (k > 0 && !(x[k] > x[k - 1])) throw ValidationError("dataset x must be strictly increasing");
            if (has_sigma() && !(sigma[k] > 0.0)) throw ValidationError("dataset sigma must be > 0");
        }
    }
};

struct FitResult {
    FitModel model;
    double residual_norm = 0.0;
    std::vector<double> uncertainty;
    bool converged = false;
    int iterations = 0;
    double gradient_norm = 0.0;
};

struct FitOptions {
    // Number of Lorentzian lines; 0 lets auto_init count the dips.
    int dips = 0;
    LmOptions lm;
};

struct ResidualStats {
    double rms = 0.0;
    double max_abs = 0.0;
    std::optional<double> reduced_chi_square;
};

namespace detail {

inline double median(std::vector<double> v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + upper);
}

inline double mean(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline std::vector<double> moving_average(const std::vector<double>& y, int half_width) {
    const int n = static_cast<int>(y.size());
    std::vector<double> out(y.size());
    for (int k = 0; k < n; ++k) {
        const int lo = std::max(0, k - half_width);
        const int hi = std::min(n - 1, k + half_width);
        double s = 0.0;
        for (int j = lo; j <= hi; ++j) s += y[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(k)] = s / (hi - lo + 1);
    }
    return out;
}

/// Block-averages a dataset down to at most `max_points` samples; the
/// spectral and correlation heuristics are quadratic in the point count.
inline Dataset decimate(const Dataset& d, std::size_t max_points) {
    if (d.size() <= max_points) return d;
    const std::size_t block = (d.size() + max_points - 1) / max_points;
    Dataset out;
    for (std::size_t k = 0; k < d.size(); k += block) {
        const std::size_t end = std::min(d.size(), k + block);
        double sx = 0.0, sy = 0.0;
        for (std::size_t j = k; j < end; ++j) {
            sx += d.x[j];
            sy += d.y[j];
        }
        out.x.push_back(sx / static_cast<double>(end - k));
        out.y.push_back(sy / static_cast<double>(end - k));
    }
    return out;
}

/// Strongest angular frequency of (y - mean) on an oversampled grid from
/// one cycle per record up to the Nyquist rate of the mean spacing.
/// Returns (omega, phase, amplitude).
inline std::tuple<double, double, double> dominant_frequency(const Dataset& full) {
    const Dataset d = decimate(full, 512);
    const std::size_t n = d.size();
    const double span = d.x.back() - d.x.front();
    const double m = mean(d.y);
    const double spacing = span / static_cast<double>(n - 1);
    const double omega_min = 2.0 * std::numbers::pi / span;
    const double omega_max = std::numbers::pi / spacing;
    const double step = omega_min / 4.0;

    auto transform = [&](double omega) {
        std::complex<double> acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            acc += (d.y[k] - m) * std::polar(1.0, -omega * (d.x[k] - d.x.front()));
        }
        return acc;
    };

    double best_omega = omega_min;
    double best_power = -1.0;
    for (double omega = omega_min; omega <= omega_max; omega += step) {
        const double power = std::norm(transform(omega));
        if (power > best_power) {
            best_power = power;
            best_omega = omega;
        }
    }
    // Parabolic refinement on the log power around the peak.
    const double lo = std::log(std::norm(transform(best_omega - step)) + 1e-300);
    const double mid = std::log(best_power + 1e-300);
    const double hi = std::log(std::norm(transform(best_omega + step)) + 1e-300);
    const double denom = lo - 2.0 * mid + hi;
    if (denom < 0.0) {
        best_omega += 0.5 * step * (lo - hi) / denom;
    }
    const auto c = transform(best_omega);
    // Phase relative to x = 0 rather than the first sample.
    const double phase = std::arg(c) - best_omega * d.x.front();
    return {best_omega, phase, 2.0 * std::abs(c) / static_cast<double>(n)};
}

struct LineCandidate {
    double center;
    double depth;
    double width;
};

/// Contiguous runs of smoothed data within `fraction` of the range from
/// the extreme, one line per run at its extreme point.
inline std::vector<LineCandidate> find_lines(const Dataset& d, double baseline, double fraction = 0.3) {
    const auto n = d.size();
    const int half = std::max(1, static_cast<int>(n / 200));
    const std::vector<double> s = moving_average(d.y, half);
    const double lo = *std::min_element(s.begin(), s.end());
    const double hi = *std::max_element(s.begin(), s.end());
    // Polarity: dips unless the data deviates further upward.
    const double polarity = (baseline - lo >= hi - baseline) ? 1.0 : -1.0;
    std::vector<double> depth(n);
    for (std::size_t k = 0; k < n; ++k) depth[k] = polarity * (baseline - s[k]);
    const double top = *std::max_element(depth.begin(), depth.end());
    const double bottom = *std::min_element(depth.begin(), depth.end());
    const double threshold = top - fraction * (top - bottom);

    std::vector<LineCandidate> lines;
    std::size_t k = 0;
    while (k < n) {
        if (depth[k] < threshold) {
            ++k;
            continue;
        }
        std::size_t best = k;
        std::size_t end = k;
        while (end < n && depth[end] >= threshold) {
            if (depth[end] > depth[best]) best = end;
            ++end;
        }
        const double half_depth = 0.5 * depth[best];
        std::size_t left = best;
        while (left > 0 && depth[left] > half_depth) --left;
        std::size_t right = best;
        while (right + 1 < n && depth[right] > half_depth) ++right;
        const double min_width = 2.0 * (d.x.back() - d.x.front()) / static_cast<double>(n - 1);
        lines.push_back({d.x[best], -polarity * depth[best], std::max(d.x[right] - d.x[left], min_width)});
        k = end;
    }
    return lines;
}

}  // namespace detail

/// Starting parameters from data heuristics; see the per-model comments.
inline FitModel auto_init(const Dataset& full, ModelKind kind, int dips = 0) {
    FitModel model;
    model.kind = kind;
    const std::size_t min_points = static_cast<std::size_t>(FitModel::parameter_count(kind, std::max(dips, 1))) + 1;
    if (full.size() < std::max<std::size_t>(min_points, 5)) {
        throw FitError("too few points to initialize a " + std::string(to_string(kind)) + " fit");
    }
    full.validate(min_points);
    const Dataset data = detail::decimate(full, 2048);
    const double span = data.x.back() - data.x.front();

    switch (kind) {
        case ModelKind::lorentzian_multi: {
            // Lines: runs below min + 0.3 range; width at half depth.
            const double baseline = detail::median(data.y);
            auto lines = detail::find_lines(data, baseline);
            if (lines.empty()) throw FitError("no dip candidates found");
            // A requested count beyond the 30% runs widens the band until
            // enough separate runs appear.
            for (double fraction : {0.5, 0.7, 0.85}) {
                if (static_cast<int>(lines.size()) >= dips) break;
                lines = detail::find_lines(data, baseline, fraction);
            }
            if (dips > 0) {
                if (static_cast<int>(lines.size()) < dips) {
                    throw FitError("found " + std::to_string(lines.size()) + " dip candidates, expected " +
                                   std::to_string(dips));
                }
                std::sort(lines.begin(), lines.end(),
                          [](const auto& a, const auto& b) { return std::abs(a.depth) > std::abs(b.depth); });
                lines.resize(static_cast<std::size_t>(dips));
                std::sort(lines.begin(), lines.end(), [](const auto& a, const auto& b) { return a.center < b.center; });
            }
            model.dips = static_cast<int>(lines.size());
            model.theta.resize(model.parameter_count());
            for (int i = 0; i < model.dips; ++i) {
                const auto& l = lines[static_cast<std::size_t>(i)];
                model.theta.segment<3>(3 * i) << l.depth, l.center, l.width;
            }
            model.theta[3 * model.dips] = baseline;
            break;
        }
        case ModelKind::rabi:
        case ModelKind::ramsey: {
            // Frequency and phase from the strongest spectral line; the
            // decay guess assumes the record spans about three decay times.
            const auto [omega, phase, amplitude] = detail::dominant_frequency(data);
            const double decay = span / 3.0;
            const double envelope_mean = kind == ModelKind::rabi
                                             ? (decay / span) * (1.0 - std::exp(-span / decay))
                                             : 0.5 * std::sqrt(std::numbers::pi) * decay / span * std::erf(span / decay);
            model.theta.resize(5);
            model.theta << amplitude / envelope_mean, omega, phase, decay, detail::mean(data.y);
            break;
        }
        case ModelKind::t1_exp: {
            // Baseline from the tail; T1 by log-linear regression of
            // |y - baseline| over points clearly above the noise.
            const std::size_t n = data.size();
            const std::size_t tail = std::max<std::size_t>(1, n / 10);
            const double baseline = detail::mean(std::span(data.y).last(tail));
            const double head = detail::mean(std::span(data.y).first(std::max<std::size_t>(1, n / 20)));
            double amplitude = head - baseline;
            double t1 = span / 3.0;
            const double cutoff = 0.2 * std::abs(amplitude);
            double sx = 0, sy = 0, sxx = 0, sxy = 0;
            int count = 0;
            for (std::size_t k = 0; k < n - tail; ++k) {
                const double dev = std::abs(data.y[k] - baseline);
                if (dev <= cutoff || dev == 0.0) continue;
                const double lx = data.x[k];
                const double ly = std::log(dev);
                sx += lx;
                sy += ly;
                sxx += lx * lx;
                sxy += lx * ly;
                ++count;
            }
            if (count >= 3) {
                const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
                if (slope < 0.0 && std::isfinite(slope)) t1 = std::clamp(-1.0 / slope, span / 100.0, 10.0 * span);
            }
            if (std::abs(amplitude) < 1e-12 * (1.0 + std::abs(baseline))) {
                // Flat data: a small non-zero amplitude keeps T1 identifiable
                // at the start; the fit drives it to zero.
                amplitude = 1e-6 * (1.0 + std::abs(baseline));
            }
            model.theta.resize(3);
            model.theta << amplitude, t1, baseline;
            break;
        }
        case ModelKind::hahn: {
            // Revival period from the first autocorrelation maximum after
            // the central peak has decorrelated.
            const std::size_t n = data.size();
            const double baseline = detail::median(data.y);
            std::vector<double> dev(n);
            for (std::size_t k = 0; k < n; ++k) dev[k] = data.y[k] - baseline;
            const double spacing = span / static_cast<double>(n - 1);
            std::vector<double> acf(n / 2 + 1, 0.0);
            for (std::size_t lag = 0; lag < acf.size(); ++lag) {
                double s = 0.0;
                for (std::size_t k = 0; k + lag < n; ++k) s += dev[k] * dev[k + lag];
                acf[lag] = s / static_cast<double>(n - lag);
            }
            const std::vector<double> smooth = detail::moving_average(acf, std::max(1, static_cast<int>(n / 200)));
            std::size_t start = 1;
            while (start < smooth.size() && smooth[start] > 0.5 * smooth[0]) ++start;
            while (start + 1 < smooth.size() && smooth[start + 1] <= smooth[start]) ++start;
            if (start + 2 >= smooth.size()) throw FitError("hahn initialization: no revival structure found");
            std::size_t peak = start;
            for (std::size_t lag = start; lag < smooth.size(); ++lag) {
                if (smooth[lag] > smooth[peak]) peak = lag;
            }
            const double period = std::max(peak, std::size_t{2}) * spacing;
            const double amplitude = detail::mean(std::span(data.y).first(std::max<std::size_t>(1, n / 200))) - baseline;
            // Height of the first revival relative to the echo at zero.
            double revival = 0.0;
            const auto first = static_cast<std::size_t>(std::lround(period / spacing));
            if (first < n && amplitude != 0.0) {
                const std::size_t lo = first > 2 ? first - 2 : 0;
                const std::size_t hi = std::min(n - 1, first + 2);
                double s = 0.0;
                for (std::size_t k = lo; k <= hi; ++k) s += dev[k];
                revival = s / static_cast<double>(hi - lo + 1) / amplitude;
            }
            double t2 = span / 3.0;
            if (revival > 0.0 && revival < 1.0) t2 = period / -std::log(revival);
            model.theta.resize(6);
            model.theta << amplitude, t2, 1.0, period, period / 6.0, baseline;
            model.revivals = FitModel::revivals_for(full.x.back(), period);
            break;
        }
    }
    return model;
}

namespace detail {

/// Weighted residuals of a model in internal (unconstrained) coordinates.
class ModelProblem {
  public:
    ModelProblem(const Dataset& data, FitModel shape)
        : data_(data), shape_(std::move(shape)), transforms_(shape_.transforms()) {}

    Eigen::VectorXd to_internal_vector(const Eigen::VectorXd& theta) const {
        Eigen::VectorXd u(theta.size());
        for (Eigen::Index k = 0; k < theta.size(); ++k) u[k] = to_internal(transforms_[k], theta[k]);
        return u;
    }

    FitModel model_at(const Eigen::VectorXd& u) const {
        FitModel m = shape_;
        for (Eigen::Index k = 0; k < u.size(); ++k) m.theta[k] = to_natural(transforms_[k], u[k]);
        return m;
    }

    Eigen::VectorXd residuals(const Eigen::VectorXd& u) const {
        const FitModel m = model_at(u);
        Eigen::VectorXd r(static_cast<Eigen::Index>(data_.size()));
        for (std::size_t k = 0; k < data_.size(); ++k) {
            r[static_cast<Eigen::Index>(k)] = (data_.y[k] - m.evaluate(data_.x[k])) / weight(k);
        }
        return r;
    }

    Eigen::MatrixXd jacobian(const Eigen::VectorXd& u) const {
        const FitModel m = model_at(u);
        Eigen::MatrixXd j(static_cast<Eigen::Index>(data_.size()), u.size());
        Eigen::VectorXd chain(u.size());
        for (Eigen::Index k = 0; k < u.size(); ++k) chain[k] = natural_derivative(transforms_[k], u[k]);
        Eigen::VectorXd g(u.size());
        for (std::size_t k = 0; k < data_.size(); ++k) {
            m.gradient_into(data_.x[k], g);
            j.row(static_cast<Eigen::Index>(k)) = -(g.cwiseProduct(chain)) / weight(k);
        }
        return j;
    }

  private:
    double weight(std::size_t k) const { return data_.has_sigma() ? data_.sigma[k] : 1.0; }

    const Dataset& data_;
    FitModel shape_;
    std::vector<Transform> transforms_;
};

inline std::vector<double> parameter_uncertainty(const Dataset& data, const FitModel& model, double cost) {
    const auto n = static_cast<Eigen::Index>(data.size());
    const Eigen::Index p = model.parameter_count();
    Eigen::MatrixXd j(n, p);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double w = data.has_sigma() ? data.sigma[static_cast<std::size_t>(k)] : 1.0;
        j.row(k) = model.gradient(data.x[static_cast<std::size_t>(k)]) / w;
    }
    std::vector<double> out(static_cast<std::size_t>(p), std::numeric_limits<double>::infinity());
    if (normalized_rank(j) < p || n <= p) return out;
    const Eigen::MatrixXd cov = (j.transpose() * j).inverse() * (2.0 * cost / static_cast<double>(n - p));
    for (Eigen::Index k = 0; k < p; ++k) out[static_cast<std::size_t>(k)] = std::sqrt(std::max(0.0, cov(k, k)));
    return out;
}

/// Starting points tried when the caller gives none: the heuristic guess
/// plus rescaled decay constants (and stretch exponents for Hahn).
inline std::vector<FitModel> start_variants(const FitModel& guess) {
    std::vector<FitModel> out{guess};
    auto scaled = [&](int index, double factor) {
        FitModel m = guess;
        m.theta[index] *= factor;
        return m;
    };
    switch (guess.kind) {
        case ModelKind::rabi:
        case ModelKind::ramsey:
            out.push_back(scaled(3, 1.0 / 3.0));
            out.push_back(scaled(3, 3.0));
            break;
        case ModelKind::t1_exp:
            out.push_back(scaled(1, 1.0 / 3.0));
            out.push_back(scaled(1, 3.0));
            break;
        case ModelKind::hahn:
            for (double p : {0.5, 2.0}) {
                FitModel m = guess;
                m.theta[2] = p;
                out.push_back(m);
            }
            out.push_back(scaled(1, 1.0 / 3.0));
            out.push_back(scaled(1, 3.0));
            break;
        case ModelKind::lorentzian_multi: break;
    }
    return out;
}

inline FitResult fit_from(const Dataset& data, const FitModel& start, const LmOptions& lm) {
    start.validate();
    ModelProblem problem(data, start);
    const LmOutcome outcome = levenberg_marquardt(problem, problem.to_internal_vector(start.theta), lm);
    FitResult result;
    result.model = problem.model_at(outcome.parameters);
    result.residual_norm = std::sqrt(2.0 * outcome.cost);
    result.converged = outcome.converged;
    result.iterations = outcome.iterations;
    result.gradient_norm = outcome.gradient_norm;
    result.uncertainty = parameter_uncertainty(data, result.model, outcome.cost);
    return result;
}

}  // namespace detail

/// Levenberg-Marquardt fit of one model family to a dataset. Without an
/// initial guess, auto_init seeds a small set of starts and the lowest
/// residual wins. ODMR fits run on frequencies centred on the sweep.
inline FitResult fit(const Dataset& data, ModelKind kind, std::optional<FitModel> initial = std::nullopt,
                     const FitOptions& options = {}) {
    const int dips = initial ? initial->dips : options.dips;
    data.validate(static_cast<std::size_t>(FitModel::parameter_count(kind, std::max(dips, 1))) + 1);

    const bool centred = kind == ModelKind::lorentzian_multi;
    const double shift = centred ? 0.5 * (data.x.front() + data.x.back()) : 0.0;
    Dataset work = data;
    if (centred) {
        for (double& v : work.x) v -= shift;
    }
    auto shift_lines = [&](FitModel& m, double by) {
        if (m.kind != ModelKind::lorentzian_multi) return;
        for (int i = 0; i < m.dips; ++i) m.theta[3 * i + 1] += by;
    };

    std::vector<FitModel> starts;
    if (initial) {
        if (initial->kind != kind) throw ValidationError("initial model kind does not match requested fit");
        FitModel s = *initial;
        if (s.kind == ModelKind::hahn && s.revivals == 0) {
            s.revivals = FitModel::revivals_for(data.x.back(), s.theta[3]);
        }
        shift_lines(s, -shift);
        starts.push_back(std::move(s));
    } else {
        starts = detail::start_variants(auto_init(work, kind, options.dips));
    }

    // Large datasets: pick the best start on block-averaged data, then
    // refine only that one on the full set.
    constexpr std::size_t kCoarsePoints = 4096;
    const bool coarse = !initial && starts.size() > 1 && work.size() > 2 * kCoarsePoints && !work.has_sigma();
    const Dataset reduced = coarse ? detail::decimate(work, kCoarsePoints) : Dataset{};
    const Dataset& trial_data = coarse ? reduced : work;

    std::optional<FitResult> best;
    std::optional<RankDeficiencyError> rank_error;
    for (const auto& s : starts) {
        try {
            FitResult r = detail::fit_from(trial_data, s, options.lm);
            const bool better = !best || (r.converged && !best->converged) ||
                                (r.converged == best->converged && r.residual_norm < best->residual_norm);
            if (better) best = std::move(r);
        } catch (const RankDeficiencyError& e) {
            if (!rank_error) rank_error = e;
        }
    }
    if (!best) throw *rank_error;
    if (coarse) best = detail::fit_from(work, best->model, options.lm);
    shift_lines(best->model, shift);
    best->model.canonicalize();
    return *best;
}

/// pi/2 and pi pulse lengths for a Rabi angular frequency (rad/s).
inline std::pair<double, double> derive_pi_pulses(double omega_rad_per_s) {
    if (!(omega_rad_per_s > 0.0) || !std::isfinite(omega_rad_per_s)) {
        throw ValidationError("Rabi angular frequency must be finite and > 0");
    }
    const double half = std::numbers::pi / (2.0 * omega_rad_per_s);
    return {half, 2.0 * half};
}

inline constexpr double kNvGyromagneticHzPerGauss = 2.8e6;

/// Field along the NV axis from the ms=0->-1 and ms=0->+1 dip frequencies,
/// which are split by 2 gamma B.
inline double b_field_from_splitting(double f_low_hz, double f_high_hz) {
    if (!(f_high_hz >= f_low_hz)) throw ValidationError("f_high must be >= f_low");
    return (f_high_hz - f_low_hz) / (2.0 * kNvGyromagneticHzPerGauss);
}

inline ResidualStats goodness(const Dataset& data, const FitModel& model) {
    data.validate(1);
    model.validate();
    ResidualStats stats;
    double sq = 0.0, chi = 0.0;
    for (std::size_t k = 0; k < data.size(); ++k) {
        const double r = data.y[k] - model.evaluate(data.x[k]);
        sq += r * r;
        stats.max_abs = std::max(stats.max_abs, std::abs(r));
        if (data.has_sigma()) chi += (r / data.sigma[k]) * (r / data.sigma[k]);
    }
    stats.rms = std::sqrt(sq / static_cast<double>(data.size()));
    const auto dof = static_cast<long>(data.size()) - model.parameter_count();
    if (data.has_sigma() && dof > 0) stats.reduced_chi_square = chi / static_cast<double>(dof);
    return stats;
}

}  // namespace nvwb
