#pragma once

#include "mstp/common.hpp"

#include <cmath>
#include <string>

namespace mstp {

// Stochastic policy pi(a|x) = logistic(a * g(x, theta) / tau) with
// g(x, theta) = theta_0 + sum_j x_j theta_j and ||theta||_2 = 1.
struct PolicyParams {
    VectorXd theta;  // length d+1, unit norm
    double tau = 0.1;
};

// v / ||v||_2; throws NumericError on the zero vector.
VectorXd normalize_to_sphere(const VectorXd& v);

double linear_index(const PolicyParams& p, const VectorXd& x);

// Numerically stable logistic of a*g/tau; a in {-1,+1}.
double action_probability(const PolicyParams& p, const VectorXd& x, int a);

// Stable logistic helper shared with the loss module.
inline double logistic(double u) {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    double e = std::exp(u);
    return e / (1.0 + e);
}

// log(logistic(u)) without overflow.
inline double log_logistic(double u) {
    if (u >= 0.0) return -std::log1p(std::exp(-u));
    return u - std::log1p(std::exp(u));
}

int sample_action(const PolicyParams& p, const VectorXd& x, Rng& rng);

// Flat JSON record {tau, theta[]} with 17-significant-digit floats.
void save_policy(const PolicyParams& p, const std::string& path);
PolicyParams load_policy(const std::string& path);

}  // namespace mstp
