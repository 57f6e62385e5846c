#pragma once

#include "mstp/common.hpp"
#include "mstp/data_model.hpp"
#include "mstp/policy.hpp"

namespace mstp {

// Cumulative stepwise probability ratios and their per-stage cross-subject
// averages. rho(i, t-1) = prod_{k<=t} pi(A_ik|X_ik) / mu_k; wbar[t] is the
// column mean of stage t with wbar[0] = 1 (empty product).
struct RatioTable {
    MatrixXd rho;    // n x T
    VectorXd wbar;   // length T+1, wbar[0] = 1
};

// Floor applied to wbar before any division downstream.
inline constexpr double kWbarFloor = 1e-12;

// Ratios accumulate in log-space and are exponentiated once per stage.
RatioTable compute_ratios(const PolicyParams& p, const Dataset& ds);

}  // namespace mstp
