#include "mstp/loss.hpp"

#include <cmath>
#include <memory>

namespace mstp {

LossContext::LossContext(const Dataset& ds, const QModel& q, double tau, bool weighted)
    : n_(ds.n()), T_(ds.horizon), d_(ds.d), tau_(tau), weighted_(weighted), q_(q) {
    if (!(tau > 0.0)) throw ConfigError("loss: tau must be positive");
    if (static_cast<int>(q.beta.size()) != T_)
        throw ConfigError("loss: q-model horizon mismatch");
    const int rows = n_ * T_;
    design_.resize(rows, d_ + 1);
    action_.resize(rows);
    reward_.resize(rows);
    log_mu_.resize(rows);
    q_obs_.resize(rows);
    q_plus_.resize(rows);
    q_minus_.resize(rows);
    for (int i = 0; i < n_; ++i) {
        for (int t = 0; t < T_; ++t) {
            const auto& s = ds.trajectories[static_cast<std::size_t>(i)].stages[static_cast<std::size_t>(t)];
            int row = i * T_ + t;
            design_(row, 0) = 1.0;
            design_.row(row).tail(d_) = s.x;
            action_[row] = static_cast<double>(s.a);
            reward_[row] = s.r;
            log_mu_[row] = std::log(s.mu);
            q_obs_[row] = predict_q(q, t, s.x, s.a);
            q_plus_[row] = predict_q(q, t, s.x, 1);
            q_minus_[row] = predict_q(q, t, s.x, -1);
        }
    }
}

double LossContext::eval(const VectorXd& g, VectorXd* per_sample) const {
    const int rows = n_ * T_;
    thread_local std::vector<double> rho_buf, uhat_buf, wbar_buf;
    rho_buf.resize(static_cast<std::size_t>(rows));
    uhat_buf.resize(static_cast<std::size_t>(rows));
    wbar_buf.assign(static_cast<std::size_t>(T_ + 1), 1.0);

    for (int i = 0; i < n_; ++i) {
        double log_rho = 0.0;
        for (int t = 0; t < T_; ++t) {
            int row = i * T_ + t;
            double u = g[row] / tau_;
            log_rho += log_logistic(action_[row] * u) - log_mu_[row];
            rho_buf[static_cast<std::size_t>(row)] = std::exp(log_rho);
            double pi_plus = logistic(u);
            uhat_buf[static_cast<std::size_t>(row)] =
                corrupt_u_ ? q_plus_[row]
                           : pi_plus * q_plus_[row] + (1.0 - pi_plus) * q_minus_[row];
        }
    }
    if (weighted_) {
        for (int t = 0; t < T_; ++t) {
            double sum = 0.0;
            for (int i = 0; i < n_; ++i) sum += rho_buf[static_cast<std::size_t>(i * T_ + t)];
            wbar_buf[static_cast<std::size_t>(t + 1)] =
                std::max(sum / static_cast<double>(n_), kWbarFloor);
        }
    }

    double total = 0.0;
    for (int i = 0; i < n_; ++i) {
        double li = 0.0;
        double rho_prev = 1.0;  // rho_{i,1:0}
        for (int t = 0; t < T_; ++t) {
            int row = i * T_ + t;
            double rho_t = rho_buf[static_cast<std::size_t>(row)] / wbar_buf[static_cast<std::size_t>(t + 1)];
            li -= rho_t * (reward_[row] - q_obs_[row]) +
                  rho_prev * uhat_buf[static_cast<std::size_t>(row)];
            rho_prev = rho_t;
        }
        if (per_sample) (*per_sample)[i] = li;
        total += li;
    }
    return total / static_cast<double>(n_);
}

double LossContext::loss(const VectorXd& theta) const {
    if (theta.size() != d_ + 1) throw ConfigError("loss: theta length mismatch");
    VectorXd g = design_ * theta;
    return eval(g, nullptr);
}

VectorXd LossContext::per_sample_losses(const VectorXd& theta) const {
    if (theta.size() != d_ + 1) throw ConfigError("loss: theta length mismatch");
    VectorXd g = design_ * theta;
    VectorXd out(n_);
    eval(g, &out);
    return out;
}

LossContext::Cache LossContext::make_cache(const VectorXd& theta) const {
    if (theta.size() != d_ + 1) throw ConfigError("loss: theta length mismatch");
    return Cache{theta, design_ * theta};
}

void LossContext::perturbed_g(const Cache& cache, const Overrides& overrides, VectorXd& out) const {
    out = cache.g;
    for (const auto& [coord, value] : overrides) {
        double delta = value - cache.theta[coord];
        if (delta != 0.0) out.noalias() += design_.col(coord) * delta;
    }
}

double LossContext::loss_perturbed(const Cache& cache, const Overrides& overrides) const {
    thread_local VectorXd g;
    perturbed_g(cache, overrides, g);
    return eval(g, nullptr);
}

VectorXd LossContext::per_sample_losses_perturbed(const Cache& cache, const Overrides& overrides) const {
    thread_local VectorXd g;
    perturbed_g(cache, overrides, g);
    VectorXd out(n_);
    eval(g, &out);
    return out;
}

std::function<double(double)> LossContext::coordinate_slice(const VectorXd& theta, int j) const {
    auto cache = std::make_shared<Cache>(make_cache(theta));
    return [this, cache, j](double v) { return loss_perturbed(*cache, {{j, v}}); };
}

}  // namespace mstp
