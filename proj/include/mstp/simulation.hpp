#pragma once

#include "mstp/common.hpp"
#include "mstp/data_model.hpp"
#include "mstp/inference.hpp"
#include "mstp/nuisance.hpp"
#include "mstp/optimizer.hpp"
#include "mstp/policy.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace mstp {

// Two sequential-trial generators sharing the same skeleton: initial states
// N(0, I_d); coordinates 1-2 evolve through an exponentially weighted moving
// average of their own history (so the process is deliberately non-Markov);
// the remaining coordinates are fresh noise each stage; actions are assigned
// uniformly on {-1,+1} with mu = 0.5 recorded.
struct ScenarioSpec {
    int scenario = 2;  // 1 or 2
    int n = 100;
    int d = 10;  // >= 2
    int T = 1;
    double noise_sd = 0.2;
    double ewma_weight = 0.8;  // weight on the newest state
    std::uint64_t seed = 0;

    // Test hooks.
    int forced_action = 0;           // 0: sample; else always -1/+1
    bool zero_noise = false;         // epsilon := 0 for stages >= 2
    std::vector<double> forced_x1;   // nonempty: every subject starts here
};

void validate_spec(const ScenarioSpec& spec);

Dataset generate(const ScenarioSpec& spec);

// Mean total reward of the policy under the scenario dynamics, with its
// Monte Carlo standard error, over n_test independent rollouts.
std::pair<double, double> mc_value(const PolicyParams& p, const ScenarioSpec& spec,
                                   int n_test, std::uint64_t seed, int threads = 1);

// Grid search for the value-maximizing (theta_0, theta_1, theta_2) over the
// unit sphere (step grid on the slopes, both intercept signs), sharing one
// simulated test set across all grid points within a repeat; the per-repeat
// argmax vectors are averaged and renormalized. Returns a (d+1)-vector with
// zero tail.
VectorXd grid_oracle(const ScenarioSpec& spec, double grid_step, int n_test,
                     int repeats, double tau = 0.1, int threads = 1);

// Printed true parameters (theta_0, theta_1, theta_2) padded to d+1.
VectorXd true_theta(const ScenarioSpec& spec);

struct MethodConfig {
    std::string q_variant = "q1";  // q0 | q1 | q2
    double tau = 0.1;
    OptimizerConfig opt;
    int q_cv_folds = 5;
    int lambda_w_folds = 5;
    std::vector<double> lambda_w_grid;  // empty -> default_lambda_w_grid()
    int B = 100;
    double alpha = 0.05;
    int n_test = 10000;
    int threads = 1;
    std::string checkpoint_dir;  // empty -> no checkpointing
};

struct ReplicationResult {
    int rep = 0;
    bool ok = false;
    std::string error;
    VectorXd theta_check;  // initial estimate
    VectorXd theta_hat;    // sparse estimate
    VectorXd theta_tilde_policy;  // one-step slopes re-normalized with theta_hat_0
    double lambda_theta = 0.0;
    double lambda_w = 0.0;
    double value_initial = 0.0, se_initial = 0.0;
    double value_sparse = 0.0, se_sparse = 0.0;
    double value_onestep = 0.0, se_onestep = 0.0;
    std::vector<OneStepResult> inference;      // per slope coordinate
    std::vector<double> estimated_mad;         // per slope: MAD of bootstrap replicates
};

struct GroupSummary {
    double estimated_mad = 0.0;
    double empirical_mad = 0.0;
    double coverage = 0.0;
};

struct ExperimentReport {
    ScenarioSpec spec;
    MethodConfig method;
    int attempted = 0;
    int completed = 0;
    double mean_value_initial = 0.0, sd_value_initial = 0.0;
    double mean_value_sparse = 0.0, sd_value_sparse = 0.0;
    double mean_value_onestep = 0.0, sd_value_onestep = 0.0;
    GroupSummary theta1, theta2, rest;  // rest = average over slopes 3..d
    std::vector<ReplicationResult> replications;
};

// One full pipeline pass (generate, initial estimate, Q-fit, sparse estimate,
// bootstrap one-step inference, Monte Carlo values).
ReplicationResult run_replication(const ScenarioSpec& spec, const MethodConfig& method,
                                  int rep, std::uint64_t seed);

ExperimentReport run_experiment(const ScenarioSpec& spec, const MethodConfig& method,
                                int replications, std::uint64_t seed);

// Unscaled median absolute deviation: median |x - median(x)|.
double mad(std::vector<double> values);

void save_report_csv(const ExperimentReport& report, const std::string& path);
void save_report_text(const ExperimentReport& report, const std::string& path);

}  // namespace mstp
