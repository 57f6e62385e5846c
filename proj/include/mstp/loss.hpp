#pragma once

#include "mstp/common.hpp"
#include "mstp/data_model.hpp"
#include "mstp/importance.hpp"
#include "mstp/nuisance.hpp"
#include "mstp/policy.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace mstp {

// The AIPWE loss l(theta, Q) = (1/n) sum_i l_i with
//   l_i = -sum_t { rho_{i,1:t} [R_it - Q_t(X_it, A_it)]
//                  + rho_{i,1:t-1} U_t(X_it) },
// where in weighted mode each cumulative ratio is divided by its cross-subject
// stage average. rho_{i,1:0} := 1 and wbar_{1:0} := 1. The value estimate is
// -loss. With the zero Q-model the weighted loss is exactly the initial
// (IPW) objective.
//
// All probability ratios flow through a single per-record linear index, so
// the context precomputes the stage design matrix and the Q evaluations once;
// every loss evaluation is then O(nT) plus one matrix-vector product.
class LossContext {
public:
    LossContext(const Dataset& ds, const QModel& q, double tau, bool weighted);

    int n() const { return n_; }
    int horizon() const { return T_; }
    int dim() const { return d_; }           // feature dimension d
    int n_params() const { return d_ + 1; }  // theta length
    double tau() const { return tau_; }
    bool weighted() const { return weighted_; }
    const QModel& qmodel() const { return q_; }

    double loss(const VectorXd& theta) const;
    VectorXd per_sample_losses(const VectorXd& theta) const;

    // Cached linear indices for a base theta; perturbed evaluations touching
    // few coordinates cost O(nT) instead of O(nT d).
    struct Cache {
        VectorXd theta;
        VectorXd g;  // design * theta, length nT
    };
    Cache make_cache(const VectorXd& theta) const;

    using Overrides = std::vector<std::pair<int, double>>;  // (coordinate, new value)

    double loss_perturbed(const Cache& cache, const Overrides& overrides) const;
    VectorXd per_sample_losses_perturbed(const Cache& cache, const Overrides& overrides) const;

    // 1-D slice v -> loss(theta with coordinate j set to v).
    std::function<double(double)> coordinate_slice(const VectorXd& theta, int j) const;

    // Test hook: replaces U_t(x) by Q_t(x, +1), breaking the mixture identity.
    void corrupt_augmentation_for_test() { corrupt_u_ = true; }

private:
    double eval(const VectorXd& g, VectorXd* per_sample) const;
    void perturbed_g(const Cache& cache, const Overrides& overrides, VectorXd& out) const;

    int n_ = 0, T_ = 0, d_ = 0;
    double tau_ = 0.1;
    bool weighted_ = true;
    bool corrupt_u_ = false;
    QModel q_;
    MatrixXd design_;  // nT x (d+1), row index i*T + t
    VectorXd action_, reward_, log_mu_, q_obs_, q_plus_, q_minus_;
};

}  // namespace mstp
