#pragma once

#include "mstp/common.hpp"
#include "mstp/loss.hpp"
#include "mstp/optimizer.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mstp {

// A finite-difference estimate expressed as sum_i coeff_i * loss(probe_i),
// where each probe is the base theta with a few coordinates replaced. Every
// probe stays on the unit sphere; the intercept coordinate absorbs the step.
struct ProbeTerm {
    double coeff;
    LossContext::Overrides overrides;
};
struct ProbeScheme {
    std::vector<ProbeTerm> terms;
};

VectorXd apply_overrides(const VectorXd& theta, const LossContext::Overrides& overrides);

// Symmetric difference quotient with step
// h_j = min{1/sqrt(nT), sqrt(1 - sum_{l != 0,j} theta_l^2) - |theta_j|};
// falls back to Newton's quotient when theta_0 = 0 and to a surrogate point
// when theta_0 = theta_j = 0.
ProbeScheme gradient_scheme(const VectorXd& theta, int n, int T, int j);

// Four-point quotient for j != k, three-point for the diagonal, with Newton
// fallbacks at theta_0 = 0 and surrogate points for the fully degenerate
// cases. Symmetric in (j, k) by construction.
ProbeScheme hessian_scheme(const VectorXd& theta, int n, int T, int j, int k);

using ScalarObjective = std::function<double(const VectorXd&)>;

double numeric_gradient(const ScalarObjective& f, const VectorXd& theta, int n, int T, int j);
double numeric_hessian(const ScalarObjective& f, const VectorXd& theta, int n, int T, int j, int k);

// Batched fast paths over a LossContext (slope coordinates 1..d).
VectorXd slope_gradient(const LossContext& ctx, const VectorXd& theta);
MatrixXd slope_hessian(const LossContext& ctx, const VectorXd& theta);
// Per-sample gradient rows for sigma_S: n x d, column order theta_1..theta_d.
MatrixXd per_sample_slope_gradients(const LossContext& ctx, const VectorXd& theta);

struct DecorrelationFit {
    int j = 0;
    VectorXd w_hat;
    double lambda_w = 0.0;
    double residual = 0.0;  // ||c - H w_hat||_inf
};

// min ||w||_1 subject to ||c - H w||_inf <= lambda_w, solved exactly as a
// linear program (split w = w+ - w-). Throws NumericError on infeasibility,
// carrying an estimate of the minimal feasible lambda_w.
DecorrelationFit dantzig_solve(const MatrixXd& H_nu_nu, const VectorXd& c, double lambda_w);

// Smallest achievable ||c - H w||_inf (the infeasibility threshold), solved
// as its own LP.
double dantzig_min_feasible_lambda(const MatrixXd& H_nu_nu, const VectorXd& c);

inline double decorrelated_score(double grad_j, const VectorXd& grad_nu, const VectorXd& w_hat) {
    return grad_j - w_hat.dot(grad_nu);
}

inline constexpr double kDegenerateInfo = 1e-8;

// theta_tilde_j = theta_hat_j - score / info; |info| <= 1e-8 throws
// NumericError (callers fall back to theta_hat_j with a flag).
double one_step(double theta_hat_j, double score, double info);

// v^T [ (1/n) sum_i g_i g_i^T ] v with v = (1, -w_hat); rows of xi_grads are
// per-sample gradients in the (theta_j, nu_j) ordering.
double sigma_s_hat(const MatrixXd& xi_grads, const VectorXd& w_hat);

std::pair<double, double> asymptotic_ci(double theta_tilde, double sigma_s, double info,
                                        int n, double alpha);

// CV with the one-standard-error rule over the average per-coordinate Dantzig
// projection error on validation folds. The same lambda_w is reused for all j
// and all bootstrap replicates.
double tune_lambda_w(const Dataset& ds, const VectorXd& theta_hat, const QModel& q,
                     double tau, int folds, const std::vector<double>& grid,
                     std::uint64_t seed);

std::vector<double> default_lambda_w_grid();

struct OneStepResult {
    int j = 0;  // coordinate 1..d
    double theta_hat_j = 0.0;
    double theta_tilde = 0.0;
    double score = 0.0;
    double info = 0.0;
    double sigma_s = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::string method;  // "asymptotic" or "bootstrap"
    bool degenerate_info = false;
    double lambda_w = 0.0;
};

// One-step estimators and asymptotic CIs for every slope coordinate at the
// sparse estimate (Dantzig decorrelation at the shared lambda_w).
std::vector<OneStepResult> one_step_all(const LossContext& ctx, const VectorXd& theta_hat,
                                        double lambda_w, double alpha);

struct BootstrapOptions {
    int B = 100;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    double lambda_theta = 0.0;
    double lambda_w = 0.0;
    OptimizerConfig opt;
    bool identity_resample = false;  // test hook: every resample is 0..n-1
    int threads = 1;
    double max_drop_fraction = 0.10;
};

// Subject-level bootstrap with frozen (Q-hat, lambda_theta, lambda_w);
// percentile CIs per coordinate. Point estimates come from the full data.
std::vector<OneStepResult> bootstrap_inference(const Dataset& ds, const VectorXd& theta_hat,
                                               const QModel& q, double tau,
                                               const BootstrapOptions& options,
                                               std::vector<std::vector<double>>* replicates = nullptr);

// Inverse-ECDF quantile of a sorted sample.
double empirical_quantile(const std::vector<double>& sorted, double q);

void save_inference(const std::vector<OneStepResult>& results, int B, std::uint64_t seed,
                    const std::string& path);

}  // namespace mstp
