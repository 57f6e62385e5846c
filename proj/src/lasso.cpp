#include "mstp/lasso.hpp"

#include <cmath>

namespace mstp {

LassoResult solve_lasso(const LassoProblem& prob, const std::optional<VectorXd>& warm_start) {
    const Eigen::Index n = prob.X.rows();
    const Eigen::Index p = prob.X.cols();
    if (n == 0 || p == 0) throw ConfigError("lasso: empty design matrix");
    if (prob.y.size() != n) throw ConfigError("lasso: response length mismatch");
    if (prob.lambda < 0.0) throw ConfigError("lasso: lambda must be >= 0");
    if (!prob.X.allFinite() || !prob.y.allFinite())
        throw NumericError("lasso: non-finite input");
    if (prob.penalty_factor.size() != 0 && prob.penalty_factor.size() != p)
        throw ConfigError("lasso: penalty factor length mismatch");

    VectorXd beta = VectorXd::Zero(p);
    if (warm_start) {
        if (warm_start->size() != p) throw ConfigError("lasso: warm start length mismatch");
        beta = *warm_start;
    }

    const double inv_n = 2.0 / static_cast<double>(n);
    VectorXd col_scale(p);  // (2/n) ||x_j||^2
    for (Eigen::Index j = 0; j < p; ++j) col_scale[j] = inv_n * prob.X.col(j).squaredNorm();

    VectorXd residual = prob.y - prob.X * beta;
    LassoResult res;
    for (int sweep = 0; sweep < prob.max_sweeps; ++sweep) {
        double max_update = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (col_scale[j] <= 0.0) continue;  // constant-zero column stays at 0
            double old = beta[j];
            double z = inv_n * prob.X.col(j).dot(residual) + col_scale[j] * old;
            double pen = prob.lambda *
                         (prob.penalty_factor.size() ? prob.penalty_factor[j] : 1.0);
            double next = soft_threshold(z, pen) / col_scale[j];
            if (next != old) {
                residual.noalias() -= prob.X.col(j) * (next - old);
                beta[j] = next;
                max_update = std::max(max_update, std::abs(next - old));
            }
        }
        res.sweeps = sweep + 1;
        if (max_update < prob.tol) {
            res.converged = true;
            break;
        }
    }
    res.beta = std::move(beta);
    return res;
}

double lasso_lambda_max(const MatrixXd& X, const VectorXd& y) {
    return ((2.0 / static_cast<double>(X.rows())) * (X.transpose() * y))
        .cwiseAbs()
        .maxCoeff();
}

}  // namespace mstp
