#pragma once

#include "mstp/common.hpp"

#include <optional>

namespace mstp {

// Objective convention: (1/n) ||y - X beta||^2 + lambda ||beta||_1.
// Lambda scales differ across conventions; everything in this repo uses the
// 1/n form, matching the per-stage Q-model displays.
struct LassoProblem {
    MatrixXd X;
    VectorXd y;
    double lambda = 0.0;
    int max_sweeps = 100000;
    double tol = 1e-8;  // max coordinate update per sweep
    // Per-coordinate penalty multipliers; empty means all ones. A zero entry
    // leaves that column unpenalized (used for the intercept basis column).
    VectorXd penalty_factor;
};

struct LassoResult {
    VectorXd beta;
    bool converged = false;
    int sweeps = 0;
};

// sgn(z) * max(|z| - lambda, 0).
inline double soft_threshold(double z, double lambda) {
    double m = std::abs(z) - lambda;
    return m > 0.0 ? sgn(z) * m : 0.0;
}

// Cyclic coordinate descent. Handles unstandardized columns via per-column
// norms; all-zero columns keep a zero coefficient.
LassoResult solve_lasso(const LassoProblem& prob,
                        const std::optional<VectorXd>& warm_start = std::nullopt);

// Smallest lambda with the all-zero slope solution under the 1/n convention.
double lasso_lambda_max(const MatrixXd& X, const VectorXd& y);

}  // namespace mstp
