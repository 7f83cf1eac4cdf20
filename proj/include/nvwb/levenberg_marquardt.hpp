#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>

#include "nvwb/errors.hpp"

namespace nvwb {

struct LmOptions {
    int max_iterations = 500;
    double initial_damping = 1e-3;
    double damping_factor = 10.0;
    // Scaled step ||D du|| relative to ||D u||.
    double step_tolerance = 1e-8;
    // Largest cosine between the residual vector and a Jacobian column.
    double gradient_tolerance = 1e-10;
    double max_damping = 1e16;
};

struct LmOutcome {
    Eigen::VectorXd parameters;
    double cost = 0.0;  // 0.5 * ||r||^2
    double gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

template <typename P>
concept LeastSquaresProblem = requires(const P& p, const Eigen::VectorXd& u) {
    { p.residuals(u) } -> std::convertible_to<Eigen::VectorXd>;
    { p.jacobian(u) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// Numerical rank of J after normalizing its columns, so parameters on
/// very different scales do not read as degenerate.
inline Eigen::Index normalized_rank(const Eigen::MatrixXd& jacobian) {
    Eigen::MatrixXd scaled = jacobian;
    for (Eigen::Index k = 0; k < scaled.cols(); ++k) {
        const double n = scaled.col(k).norm();
        if (n == 0.0 || !std::isfinite(n)) return 0;
        scaled.col(k) /= n;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
    qr.setThreshold(1e-12);
    return qr.rank();
}

/// Damped Gauss-Newton with Marquardt diagonal scaling. Damping starts at
/// `initial_damping`, is multiplied on rejected steps and divided on
/// accepted ones. Throws RankDeficiencyError when the Jacobian at the
/// starting point is singular; later non-convergence is reported, not thrown.
template <LeastSquaresProblem Problem>
LmOutcome levenberg_marquardt(const Problem& problem, Eigen::VectorXd start, const LmOptions& options = {}) {
    const Eigen::Index n = start.size();
    Eigen::VectorXd u = std::move(start);
    Eigen::VectorXd r = problem.residuals(u);
    if (!r.allFinite()) {
        throw FitError("residuals are not finite at the starting point");
    }
    Eigen::MatrixXd jac = problem.jacobian(u);
    if (normalized_rank(jac) < n) {
        throw RankDeficiencyError("Jacobian is rank deficient at the starting point");
    }

    LmOutcome out;
    double cost = 0.5 * r.squaredNorm();
    double damping = options.initial_damping;
    Eigen::VectorXd scale = Eigen::VectorXd::Zero(n);

    auto scaled_gradient = [&](const Eigen::VectorXd& g, const Eigen::MatrixXd& j) {
        const double rn = std::sqrt(2.0 * cost);
        if (rn == 0.0) return 0.0;
        double worst = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            const double cn = j.col(k).norm();
            if (cn > 0.0) worst = std::max(worst, std::abs(g[k]) / (cn * rn));
        }
        return worst;
    };

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        out.iterations = iter + 1;
        const Eigen::MatrixXd normal = jac.transpose() * jac;
        const Eigen::VectorXd grad = jac.transpose() * r;
        scale = scale.cwiseMax(normal.diagonal());
        out.gradient_norm = scaled_gradient(grad, jac);
        if (cost == 0.0 || out.gradient_norm < options.gradient_tolerance) {
            out.converged = true;
            break;
        }

        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd damped = normal;
            damped.diagonal() += damping * scale;
            const Eigen::VectorXd step = damped.ldlt().solve(-grad);
            const Eigen::VectorXd trial = u + step;
            Eigen::VectorXd trial_r;
            double trial_cost = std::numeric_limits<double>::infinity();
            if (step.allFinite()) {
                trial_r = problem.residuals(trial);
                if (trial_r.allFinite()) trial_cost = 0.5 * trial_r.squaredNorm();
            }
            if (trial_cost < cost) {
                accepted = true;
                const Eigen::VectorXd d = scale.cwiseSqrt();
                const double step_size = d.cwiseProduct(step).norm();
                const double size = d.cwiseProduct(u).norm();
                u = trial;
                r = std::move(trial_r);
                cost = trial_cost;
                damping = std::max(damping / options.damping_factor, 1e-15);
                jac = problem.jacobian(u);
                if (step_size <= options.step_tolerance * (size + options.step_tolerance)) {
                    out.converged = true;
                }
            } else {
                damping *= options.damping_factor;
                if (damping > options.max_damping) {
                    // No descent direction is resolvable in floating point:
                    // the iterate is a minimum to working precision.
                    out.converged = out.gradient_norm < 1e-6;
                    break;
                }
            }
        }
        if (out.converged || !accepted) break;
    }

    out.parameters = u;
    out.cost = cost;
    out.gradient_norm = scaled_gradient(jac.transpose() * r, jac);
    return out;
}

}  // namespace nvwb
