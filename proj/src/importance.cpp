#include "mstp/importance.hpp"

#include <cmath>

namespace mstp {

RatioTable compute_ratios(const PolicyParams& p, const Dataset& ds) {
    int n = ds.n();
    int T = ds.horizon;
    RatioTable table;
    table.rho.resize(n, T);
    table.wbar = VectorXd::Zero(T + 1);
    table.wbar[0] = 1.0;

    for (int i = 0; i < n; ++i) {
        const auto& traj = ds.trajectories[static_cast<std::size_t>(i)];
        double log_rho = 0.0;
        for (int t = 0; t < T; ++t) {
            const auto& s = traj.stages[static_cast<std::size_t>(t)];
            double u = static_cast<double>(s.a) * linear_index(p, s.x) / p.tau;
            log_rho += log_logistic(u) - std::log(s.mu);
            table.rho(i, t) = std::exp(log_rho);
        }
    }
    for (int t = 0; t < T; ++t) table.wbar[t + 1] = table.rho.col(t).mean();
    return table;
}

}  // namespace mstp
