#pragma once

#include <Eigen/Dense>
#include <Eigen/LU>

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "nvwb/errors.hpp"

namespace nvwb {

namespace detail {

// Pade coefficients and 1-norm bounds for scaling and squaring
// (Higham 2005, double precision).
inline constexpr std::array<double, 4> kPade3 = {120.0, 60.0, 12.0, 1.0};
inline constexpr std::array<double, 6> kPade5 = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
inline constexpr std::array<double, 8> kPade7 = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                                                 25200.0,    1512.0,    56.0,      1.0};
inline constexpr std::array<double, 10> kPade9 = {17643225600.0, 8821612800.0, 2075673600.0,
                                                  302702400.0,   30270240.0,   2162160.0,
                                                  110880.0,      3960.0,       90.0,
                                                  1.0};
inline constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
    1323241920.0,        40840800.0,          960960.0,           16380.0,
    182.0,               1.0};

inline constexpr double kTheta3 = 1.495585217958292e-2;
inline constexpr double kTheta5 = 2.539398330063230e-1;
inline constexpr double kTheta7 = 9.504178996162932e-1;
inline constexpr double kTheta9 = 2.097847961257068e0;
inline constexpr double kTheta13 = 5.371920351148152e0;

template <typename Mat, std::size_t K>
Mat pade_low(const Mat& a, const std::array<double, K>& b) {
    const Mat ident = Mat::Identity(a.rows(), a.cols());
    const Mat a2 = a * a;
    Mat odd = b[1] * ident;
    Mat even = b[0] * ident;
    Mat power = ident;
    for (std::size_t k = 1; 2 * k < K; ++k) {
        power = power * a2;
        odd += b[2 * k + 1] * power;
        even += b[2 * k] * power;
    }
    const Mat u = a * odd;
    return (even - u).partialPivLu().solve(even + u);
}

template <typename Mat>
Mat pade13(const Mat& a) {
    const auto& b = kPade13;
    const Mat ident = Mat::Identity(a.rows(), a.cols());
    const Mat a2 = a * a;
    const Mat a4 = a2 * a2;
    const Mat a6 = a4 * a2;
    const Mat inner_u = b[13] * a6 + b[11] * a4 + b[9] * a2;
    const Mat u = a * (a6 * inner_u + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
    const Mat inner_v = b[12] * a6 + b[10] * a4 + b[8] * a2;
    const Mat v = a6 * inner_v + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
    return (v - u).partialPivLu().solve(v + u);
}

}  // namespace detail

namespace detail {

template <typename Mat>
void restore_stochastic(Mat& m) {
    m = m.cwiseMax(0.0);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double c = m.col(j).sum();
        if (c > 0.0) m.col(j) /= c;
    }
}

template <typename Mat>
Mat scaled_exp(const Mat& a, bool stochastic) {
    if (!a.allFinite()) {
        throw NumericError("matrix_exp: non-finite matrix entry");
    }
    const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
    Mat result;
    int squarings = 0;
    if (norm1 <= kTheta3) {
        result = pade_low(a, kPade3);
    } else if (norm1 <= kTheta5) {
        result = pade_low(a, kPade5);
    } else if (norm1 <= kTheta7) {
        result = pade_low(a, kPade7);
    } else if (norm1 <= kTheta9) {
        result = pade_low(a, kPade9);
    } else {
        if (norm1 > kTheta13) {
            squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / kTheta13))));
        }
        result = pade13<Mat>(a / std::ldexp(1.0, squarings));
    }
    if (stochastic) restore_stochastic(result);
    for (int i = 0; i < squarings; ++i) {
        result = result * result;
        if (stochastic) restore_stochastic(result);
    }
    return result;
}

}  // namespace detail

/// Matrix exponential by Pade scaling and squaring.
template <typename Derived>
auto matrix_exp(const Eigen::MatrixBase<Derived>& input) {
    using Mat = Eigen::Matrix<double, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>;
    return detail::scaled_exp<Mat>(input, false);
}

/// True when off-diagonal entries are >= 0 and every column sums to 0
/// (relative to the largest entry), i.e. a probability-conserving generator.
template <typename Derived>
bool is_markov_generator(const Eigen::MatrixBase<Derived>& m) {
    const double scale = m.cwiseAbs().maxCoeff();
    if (!std::isfinite(scale)) return false;
    if (scale == 0.0) return true;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            if (i != j && m(i, j) < 0.0) return false;
        }
        if (std::abs(m.col(j).sum()) > 1e-12 * scale) return false;
    }
    return true;
}

/// exp(M t) for a probability-conserving generator M. Each squaring is
/// projected back onto column-stochastic matrices, which keeps the result
/// accurate to ~1e-11 even when |M t| reaches 1e9.
template <typename Derived>
auto generator_exp(const Eigen::MatrixBase<Derived>& m, double t) {
    using Mat = Eigen::Matrix<double, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>;
    const Mat a = m * t;
    return detail::scaled_exp<Mat>(a, t >= 0.0 && is_markov_generator(m));
}

/// Solves dp/dt = M p on the given sample times, stepping with
/// exp(M dt) between consecutive samples. Step propagators are reused
/// while dt repeats, which keeps uniform grids cheap.
template <int N>
std::vector<Eigen::Matrix<double, N, 1>> propagate_linear(const Eigen::Matrix<double, N, N>& generator,
                                                          const Eigen::Matrix<double, N, 1>& initial,
                                                          std::span<const double> times) {
    using Vec = Eigen::Matrix<double, N, 1>;
    using Mat = Eigen::Matrix<double, N, N>;
    if (!generator.allFinite()) {
        throw NumericError("propagate: generator has non-finite entries");
    }
    if (times.empty()) {
        return {};
    }
    if (!(times[0] >= 0.0) || !std::isfinite(times[0])) {
        throw ValidationError("propagate: first sample time must be finite and >= 0");
    }
    for (std::size_t k = 1; k < times.size(); ++k) {
        if (!(times[k] > times[k - 1]) || !std::isfinite(times[k])) {
            throw ValidationError("propagate: sample times must be strictly increasing");
        }
    }

    std::vector<Vec> out;
    out.reserve(times.size());
    Vec state = initial;
    if (times[0] > 0.0) {
        state = generator_exp(generator, times[0]) * state;
    }
    out.push_back(state);

    double cached_dt = -1.0;
    Mat step = Mat::Identity();
    for (std::size_t k = 1; k < times.size(); ++k) {
        const double dt = times[k] - times[k - 1];
        if (std::abs(dt - cached_dt) > 1e-12 * dt) {
            step = generator_exp(generator, dt);
            cached_dt = dt;
        }
        state = step * state;
        out.push_back(state);
    }
    return out;
}

}  // namespace nvwb
