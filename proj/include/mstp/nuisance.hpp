#pragma once

#include "mstp/common.hpp"
#include "mstp/data_model.hpp"
#include "mstp/importance.hpp"
#include "mstp/policy.hpp"

#include <string>
#include <vector>

namespace mstp {

// Basis phi(x); always starts with an intercept entry.
struct BasisSpec {
    enum class Kind { Linear, Polynomial2 };
    Kind kind = Kind::Linear;
    int input_dim = 0;

    // phi dimension d'; Polynomial2 adds per-coordinate squares.
    int dim() const {
        return kind == Kind::Linear ? input_dim + 1 : 2 * input_dim + 1;
    }
    VectorXd eval(const VectorXd& x) const;
};

// Stage features Phi(x, a) = [phi(x), a * phi(x)], length 2 d'.
VectorXd build_features(const BasisSpec& basis, const VectorXd& x, int a);

// Per-stage linear Q-models Q_t(x, a) = Phi(x, a)^T beta_t.
struct QModel {
    enum class Variant { Zero, Regression, VarianceMin };
    BasisSpec basis;
    std::vector<VectorXd> beta;  // T vectors, each length 2 d'
    Variant variant = Variant::Zero;
};

QModel make_zero_qmodel(const BasisSpec& basis, int horizon);

// Default lambda grid for the Q fits: n_values log-spaced from lambda_max
// down to ratio * lambda_max.
std::vector<double> lasso_lambda_grid(double lambda_max, int n_values = 50,
                                      double ratio = 1e-3);

// Square-loss Lasso per stage with CV-selected lambda, then an unpenalized
// refit on the support. Does not depend on the policy parameter.
QModel fit_q_regression(const Dataset& ds, const BasisSpec& basis, int cv_folds,
                        std::uint64_t seed,
                        const std::vector<double>& lambdas = {});

// Variance-minimizing fit at the initial policy estimate and its frozen
// ratios; CV-selected lambda, refit on support.
QModel fit_q_variance_min(const Dataset& ds, const BasisSpec& basis,
                          const PolicyParams& p, const RatioTable& ratios,
                          int cv_folds, std::uint64_t seed,
                          const std::vector<double>& lambdas = {});

double predict_q(const QModel& q, int t, const VectorXd& x, int a);

// U_t(x) = sum_a pi(a|x) Q_t(x, a), the exact mixture at the supplied policy.
double predict_u(const QModel& q, const PolicyParams& p, int t, const VectorXd& x);

void save_qmodel(const QModel& q, const std::string& path);
QModel load_qmodel(const std::string& path);

}  // namespace mstp
