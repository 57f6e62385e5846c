#include "mstp/nuisance.hpp"

#include "mstp/lasso.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

namespace mstp {

VectorXd BasisSpec::eval(const VectorXd& x) const {
    if (x.size() != input_dim) throw ConfigError("basis: feature dimension mismatch");
    VectorXd phi(dim());
    phi[0] = 1.0;
    phi.segment(1, input_dim) = x;
    if (kind == Kind::Polynomial2) phi.segment(1 + input_dim, input_dim) = x.array().square();
    return phi;
}

VectorXd build_features(const BasisSpec& basis, const VectorXd& x, int a) {
    if (a != 1 && a != -1) throw ConfigError("build_features: action must be -1 or +1");
    VectorXd phi = basis.eval(x);
    VectorXd out(2 * phi.size());
    out.head(phi.size()) = phi;
    out.tail(phi.size()) = static_cast<double>(a) * phi;
    return out;
}

QModel make_zero_qmodel(const BasisSpec& basis, int horizon) {
    QModel q;
    q.basis = basis;
    q.variant = QModel::Variant::Zero;
    q.beta.assign(static_cast<std::size_t>(horizon), VectorXd::Zero(2 * basis.dim()));
    return q;
}

std::vector<double> lasso_lambda_grid(double lambda_max, int n_values, double ratio) {
    std::vector<double> grid;
    if (!(lambda_max > 0.0)) return {1e-8};
    grid.reserve(static_cast<std::size_t>(n_values));
    for (int i = 0; i < n_values; ++i) {
        double frac = n_values == 1 ? 0.0 : static_cast<double>(i) / (n_values - 1);
        grid.push_back(lambda_max * std::pow(ratio, frac));
    }
    return grid;
}

namespace {

// Unpenalized least-squares refit on the nonzero pattern of beta. An empty
// support returns the all-zero vector.
VectorXd refit_ols_on_support(const MatrixXd& X, const VectorXd& y, const VectorXd& beta) {
    std::vector<Eigen::Index> support;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
        if (beta[j] != 0.0) support.push_back(j);
    VectorXd out = VectorXd::Zero(beta.size());
    if (support.empty()) return out;
    MatrixXd Xs(X.rows(), static_cast<Eigen::Index>(support.size()));
    for (std::size_t s = 0; s < support.size(); ++s) Xs.col(static_cast<Eigen::Index>(s)) = X.col(support[s]);
    VectorXd coef = Xs.colPivHouseholderQr().solve(y);
    for (std::size_t s = 0; s < support.size(); ++s) out[support[s]] = coef[static_cast<Eigen::Index>(s)];
    return out;
}

// Generic CV'd lasso + refit for one stage-wise design.
VectorXd cv_lasso_refit(const MatrixXd& X, const VectorXd& y,
                        const VectorXd& penalty_factor,
                        const std::vector<double>& lambdas_in, int cv_folds,
                        std::uint64_t seed) {
    std::vector<double> lambdas = lambdas_in;
    if (lambdas.empty()) {
        // lambda_max on the penalized columns, after projecting out the
        // unpenalized ones.
        VectorXd resid = y;
        if (penalty_factor.size()) {
            std::vector<Eigen::Index> free_cols;
            for (Eigen::Index j = 0; j < penalty_factor.size(); ++j)
                if (penalty_factor[j] == 0.0) free_cols.push_back(j);
            if (!free_cols.empty()) {
                MatrixXd Xf(X.rows(), static_cast<Eigen::Index>(free_cols.size()));
                for (std::size_t s = 0; s < free_cols.size(); ++s)
                    Xf.col(static_cast<Eigen::Index>(s)) = X.col(free_cols[s]);
                resid -= Xf * Xf.colPivHouseholderQr().solve(y);
            }
        }
        lambdas = lasso_lambda_grid(lasso_lambda_max(X, resid));
    }

    const Eigen::Index n = X.rows();
    int k = std::min<int>(cv_folds, static_cast<int>(n));
    if (k < 2) throw ConfigError("q-fit: need at least 2 CV folds worth of rows");

    // Row-level folds over subjects' stage rows (one row per subject here).
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_rng(seed, "qfit-folds");
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<double> cv_err(lambdas.size(), 0.0);
    for (int f = 0; f < k; ++f) {
        std::vector<int> tr, va;
        for (int pos = 0; pos < static_cast<int>(n); ++pos)
            (pos % k == f ? va : tr).push_back(perm[static_cast<std::size_t>(pos)]);
        MatrixXd Xtr(static_cast<Eigen::Index>(tr.size()), X.cols());
        VectorXd ytr(static_cast<Eigen::Index>(tr.size()));
        for (std::size_t s = 0; s < tr.size(); ++s) {
            Xtr.row(static_cast<Eigen::Index>(s)) = X.row(tr[s]);
            ytr[static_cast<Eigen::Index>(s)] = y[tr[s]];
        }
        LassoProblem prob{Xtr, ytr, 0.0};
        prob.penalty_factor = penalty_factor;
        std::optional<VectorXd> warm;
        for (std::size_t li = 0; li < lambdas.size(); ++li) {
            prob.lambda = lambdas[li];
            LassoResult r = solve_lasso(prob, warm);
            warm = r.beta;
            double err = 0.0;
            for (int row : va) {
                double pred = X.row(row).dot(r.beta);
                err += (y[row] - pred) * (y[row] - pred);
            }
            cv_err[li] += err / static_cast<double>(va.size());
        }
    }
    std::size_t best = 0;
    for (std::size_t li = 1; li < lambdas.size(); ++li)
        if (cv_err[li] < cv_err[best]) best = li;

    LassoProblem full{X, y, lambdas[best]};
    full.penalty_factor = penalty_factor;
    LassoResult r = solve_lasso(full);
    return refit_ols_on_support(X, y, r.beta);
}

}  // namespace

QModel fit_q_regression(const Dataset& ds, const BasisSpec& basis, int cv_folds,
                        std::uint64_t seed, const std::vector<double>& lambdas) {
    const int n = ds.n();
    const int T = ds.horizon;
    const int p = 2 * basis.dim();

    QModel q;
    q.basis = basis;
    q.variant = QModel::Variant::Regression;
    q.beta.resize(static_cast<std::size_t>(T));

    VectorXd penalty = VectorXd::Ones(p);
    penalty[0] = 0.0;  // intercept column of Phi is unpenalized

    for (int t = 0; t < T; ++t) {
        MatrixXd X(n, p);
        VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            const auto& s = ds.trajectories[static_cast<std::size_t>(i)].stages[static_cast<std::size_t>(t)];
            X.row(i) = build_features(basis, s.x, s.a);
            y[i] = s.r;
        }
        q.beta[static_cast<std::size_t>(t)] =
            cv_lasso_refit(X, y, penalty, lambdas, cv_folds, derive_seed(seed, "qreg", static_cast<std::uint64_t>(t)));
    }
    return q;
}

QModel fit_q_variance_min(const Dataset& ds, const BasisSpec& basis,
                          const PolicyParams& p, const RatioTable& ratios,
                          int cv_folds, std::uint64_t seed,
                          const std::vector<double>& lambdas) {
    const int n = ds.n();
    const int T = ds.horizon;
    const int pdim = 2 * basis.dim();
    if (ratios.rho.rows() != n || ratios.rho.cols() != T)
        throw ConfigError("fit_q_variance_min: ratio table shape mismatch");

    QModel q;
    q.basis = basis;
    q.variant = QModel::Variant::VarianceMin;
    q.beta.resize(static_cast<std::size_t>(T));

    for (int t = 0; t < T; ++t) {
        double w = std::max(ratios.wbar[t + 1], kWbarFloor);
        MatrixXd Z(n, pdim);
        VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            const auto& s = ds.trajectories[static_cast<std::size_t>(i)].stages[static_cast<std::size_t>(t)];
            double rw = ratios.rho(i, t) / w;
            double pi_plus = action_probability(p, s.x, 1);
            VectorXd row = rw * build_features(basis, s.x, s.a) -
                           (pi_plus * build_features(basis, s.x, 1) +
                            (1.0 - pi_plus) * build_features(basis, s.x, -1));
            Z.row(i) = row;
            y[i] = rw * s.r;
        }
        q.beta[static_cast<std::size_t>(t)] =
            cv_lasso_refit(Z, y, VectorXd(), lambdas, cv_folds,
                           derive_seed(seed, "qvar", static_cast<std::uint64_t>(t)));
    }
    return q;
}

double predict_q(const QModel& q, int t, const VectorXd& x, int a) {
    if (t < 0 || t >= static_cast<int>(q.beta.size())) throw ConfigError("predict_q: stage out of range");
    if (q.variant == QModel::Variant::Zero) return 0.0;
    return build_features(q.basis, x, a).dot(q.beta[static_cast<std::size_t>(t)]);
}

double predict_u(const QModel& q, const PolicyParams& p, int t, const VectorXd& x) {
    double pi_plus = action_probability(p, x, 1);
    return pi_plus * predict_q(q, t, x, 1) + (1.0 - pi_plus) * predict_q(q, t, x, -1);
}

void save_qmodel(const QModel& q, const std::string& path) {
    nlohmann::ordered_json j;
    j["basis"] = {{"kind", q.basis.kind == BasisSpec::Kind::Linear ? "linear" : "polynomial-2"},
                  {"input_dim", q.basis.input_dim}};
    j["variant"] = q.variant == QModel::Variant::Zero        ? "zero"
                   : q.variant == QModel::Variant::Regression ? "regression"
                                                              : "variance-min";
    auto stages = nlohmann::ordered_json::array();
    for (const auto& b : q.beta) {
        auto arr = nlohmann::ordered_json::array();
        for (Eigen::Index i = 0; i < b.size(); ++i) arr.push_back(format_double(b[i]));
        stages.push_back(arr);
    }
    j["beta"] = stages;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write q-model file: " + path);
    out << j.dump(2) << "\n";
}

QModel load_qmodel(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open q-model file: " + path);
    nlohmann::json j;
    in >> j;
    QModel q;
    std::string kind = j.at("basis").at("kind").get<std::string>();
    q.basis.kind = kind == "linear" ? BasisSpec::Kind::Linear : BasisSpec::Kind::Polynomial2;
    q.basis.input_dim = j.at("basis").at("input_dim").get<int>();
    std::string variant = j.at("variant").get<std::string>();
    q.variant = variant == "zero"        ? QModel::Variant::Zero
                : variant == "regression" ? QModel::Variant::Regression
                                          : QModel::Variant::VarianceMin;
    for (const auto& stage : j.at("beta")) {
        VectorXd b(static_cast<Eigen::Index>(stage.size()));
        for (std::size_t i = 0; i < stage.size(); ++i)
            b[static_cast<Eigen::Index>(i)] = std::stod(stage[i].get<std::string>());
        q.beta.push_back(std::move(b));
    }
    return q;
}

}  // namespace mstp
