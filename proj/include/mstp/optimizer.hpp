#pragma once

#include "mstp/common.hpp"
#include "mstp/loss.hpp"

#include <functional>
#include <vector>

namespace mstp {

struct OptimizerConfig {
    std::vector<double> start_offsets{-0.8, -0.4, 0.0, 0.4, 0.8};
    double error_threshold = 1e-6;  // e: stop when ||theta_m - theta_{m-1}|| < e
    int max_iterations = 50;        // M: coordinate sweeps
    double scalar_tol = 1e-8;
    int scalar_max_iters = 50;
    std::vector<double> lambda_grid;  // empty -> 20 log-spaced in [1e-4, 1e-1]
    int cv_folds = 5;
    std::uint64_t seed = 0;
};

struct SparseEstimate {
    VectorXd theta;            // unit norm
    std::vector<int> support;  // nonzero coordinates
    bool converged = false;
    double objective = 0.0;  // unpenalized loss at theta
    double lambda = 0.0;
};

// Smooth objective on (a neighborhood of) the unit sphere. `slice` optionally
// supplies a fast 1-D restriction for coordinate updates; when absent the
// full evaluation is used.
struct SphereObjective {
    std::function<double(const VectorXd&)> eval;
    std::function<std::function<double(double)>(const VectorXd&, int)> slice;
};

SphereObjective make_objective(const LossContext& ctx);

// Bracketing plus Brent polish for a smooth 1-D function. Probes returning
// non-finite values are treated as +inf; throws NumericError if every probe
// is non-finite.
double minimize_scalar(const std::function<double(double)>& f, double x0,
                       double tol, int max_iters);

// The sphere-constrained proximal coordinate descent: per-coordinate
// starting-point scan, then sweeps of (1-D minimize, soft-threshold,
// renormalize), stopping on the iterate-change threshold.
SparseEstimate coordinate_descent_sphere(const SphereObjective& objective,
                                         const OptimizerConfig& config,
                                         const VectorXd& start, double lambda);

// Unpenalized minimization over {theta : ||theta||=1, theta_j=0 off support}
// by tangent-space projected gradient descent with renormalization. An empty
// support returns the start unchanged (ok=false).
VectorXd refit_on_support(const std::function<double(const VectorXd&)>& objective,
                          const std::vector<int>& support, const VectorXd& start,
                          bool* ok = nullptr);

// Full Algorithm-2 run (scan + sweeps + refit) at a fixed lambda.
SparseEstimate fit_at_lambda(const SphereObjective& objective,
                             const OptimizerConfig& config, const VectorXd& start,
                             double lambda);

// Initial (IPW, zero Q-model) estimator with CV-selected lambda.
SparseEstimate estimate_initial(const Dataset& ds, double tau, const OptimizerConfig& config);

// Final sparse estimator under the weighted AIPWE loss at the given Q-model.
SparseEstimate estimate_sparse(const Dataset& ds, const QModel& q, double tau,
                               const OptimizerConfig& config);

std::vector<double> default_theta_lambda_grid();

}  // namespace mstp
