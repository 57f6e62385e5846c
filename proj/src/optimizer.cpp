#include "mstp/optimizer.hpp"

#include "mstp/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mstp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double finite_or_inf(double v) { return std::isfinite(v) ? v : kInf; }

}  // namespace

SphereObjective make_objective(const LossContext& ctx) {
    SphereObjective obj;
    obj.eval = [&ctx](const VectorXd& theta) { return ctx.loss(theta); };
    obj.slice = [&ctx](const VectorXd& theta, int j) { return ctx.coordinate_slice(theta, j); };
    return obj;
}

double minimize_scalar(const std::function<double(double)>& f, double x0,
                       double tol, int max_iters) {
    const double golden = 1.618033988749895;
    double fa, fb, fc;
    double a = x0 - 0.5, b = x0, c = x0 + 0.5;
    fa = finite_or_inf(f(a));
    fb = finite_or_inf(f(b));
    fc = finite_or_inf(f(c));
    if (fa == kInf && fb == kInf && fc == kInf)
        throw NumericError("scalar minimizer: objective non-finite at all probes");

    // Expand downhill until the middle point is lowest.
    for (int i = 0; i < 60 && !(fb <= fa && fb <= fc); ++i) {
        if (fa < fc) {
            double na = a - golden * (b - a);
            c = b;
            fc = fb;
            b = a;
            fb = fa;
            a = na;
            fa = finite_or_inf(f(a));
        } else {
            double nc = c + golden * (c - b);
            a = b;
            fa = fb;
            b = c;
            fb = fc;
            c = nc;
            fc = finite_or_inf(f(c));
        }
    }
    if (fb == kInf) throw NumericError("scalar minimizer: failed to bracket a finite value");

    // Brent within [a, c].
    double x = b, w = b, v = b;
    double fx = fb, fw = fb, fv = fb;
    double lo = std::min(a, c), hi = std::max(a, c);
    double d = 0.0, e = 0.0;
    const double eps = 1e-12;
    for (int iter = 0; iter < max_iters; ++iter) {
        double mid = 0.5 * (lo + hi);
        double tol1 = tol + eps * std::abs(x);
        double tol2 = 2.0 * tol1;
        if (std::abs(x - mid) <= tol2 - 0.5 * (hi - lo)) break;
        double step;
        bool parabola_ok = false;
        if (std::abs(e) > tol1) {
            double r = (x - w) * (fx - fv);
            double q = (x - v) * (fx - fw);
            double p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if (q > 0.0) p = -p;
            q = std::abs(q);
            double e_old = e;
            e = d;
            if (std::abs(p) < std::abs(0.5 * q * e_old) && p > q * (lo - x) && p < q * (hi - x)) {
                d = p / q;
                double u = x + d;
                if (u - lo < tol2 || hi - u < tol2) d = (mid > x ? tol1 : -tol1);
                parabola_ok = true;
            }
        }
        if (!parabola_ok) {
            e = (x >= mid ? lo - x : hi - x);
            d = 0.3819660112501051 * e;
        }
        double u = (std::abs(d) >= tol1 ? x + d : x + (d > 0 ? tol1 : -tol1));
        double fu = finite_or_inf(f(u));
        if (fu <= fx) {
            if (u >= x) lo = x; else hi = x;
            v = w; fv = fw;
            w = x; fw = fx;
            x = u; fx = fu;
        } else {
            if (u < x) lo = u; else hi = u;
            if (fu <= fw || w == x) {
                v = w; fv = fw;
                w = u; fw = fu;
            } else if (fu <= fv || v == x || v == w) {
                v = u; fv = fu;
            }
        }
    }
    return x;
}

SparseEstimate coordinate_descent_sphere(const SphereObjective& objective,
                                         const OptimizerConfig& config,
                                         const VectorXd& start, double lambda) {
    if (config.start_offsets.empty()) throw ConfigError("optimizer: empty start-offset set");
    if (!(config.error_threshold > 0.0)) throw ConfigError("optimizer: error threshold must be > 0");
    if (config.max_iterations < 1) throw ConfigError("optimizer: max iterations must be >= 1");
    const int p = static_cast<int>(start.size());

    auto slice = [&](const VectorXd& theta, int j) -> std::function<double(double)> {
        if (objective.slice) return objective.slice(theta, j);
        return [&objective, probe = VectorXd(theta), j](double v) mutable {
            probe[j] = v;
            return objective.eval(probe);
        };
    };

    // Per-coordinate starting-point scan against the unnormalized base vector.
    VectorXd theta = start;
    {
        VectorXd scanned = start;
        for (int j = 0; j < p; ++j) {
            auto fj = slice(start, j);
            double best_val = kInf;
            double best_x = start[j];
            bool any = false;
            for (double off : config.start_offsets) {
                double x = start[j] + off;
                double v = finite_or_inf(fj(x));
                if (v < best_val) {
                    best_val = v;
                    best_x = x;
                    any = true;
                }
            }
            if (!any) throw NumericError("optimizer: all starting probes non-finite");
            scanned[j] = best_x;
        }
        theta = normalize_to_sphere(scanned);
    }

    SparseEstimate result;
    result.converged = false;
    int m = 0;
    while (m < config.max_iterations) {
        ++m;
        VectorXd prev = theta;
        for (int j = 0; j < p; ++j) {
            auto fj = slice(theta, j);
            double minimizer = minimize_scalar(fj, theta[j], config.scalar_tol, config.scalar_max_iters);
            double shrunk = soft_threshold(minimizer, lambda);
            VectorXd cand = theta;
            cand[j] = shrunk;
            if (cand.norm() == 0.0) cand[j] = minimizer;  // cannot renormalize the zero vector
            theta = normalize_to_sphere(cand);
        }
        if ((theta - prev).norm() < config.error_threshold) {
            result.converged = true;
            break;
        }
    }

    result.theta = theta;
    for (int j = 0; j < p; ++j)
        if (theta[j] != 0.0) result.support.push_back(j);
    result.objective = objective.eval(theta);
    result.lambda = lambda;
    return result;
}

VectorXd refit_on_support(const std::function<double(const VectorXd&)>& objective,
                          const std::vector<int>& support, const VectorXd& start,
                          bool* ok) {
    if (ok) *ok = false;
    if (support.empty()) return start;

    const int p = static_cast<int>(start.size());
    VectorXd theta = VectorXd::Zero(p);
    for (int j : support) theta[j] = start[j];
    if (theta.norm() == 0.0) theta[support.front()] = 1.0;
    theta = normalize_to_sphere(theta);

    if (support.size() == 1) {
        // Two-point feasible set {+e_j, -e_j}.
        VectorXd pos = VectorXd::Zero(p), neg = VectorXd::Zero(p);
        pos[support[0]] = 1.0;
        neg[support[0]] = -1.0;
        if (ok) *ok = true;
        return objective(pos) <= objective(neg) ? pos : neg;
    }

    const double grad_tol = 1e-6;
    const double h = 1e-6;
    double f0 = objective(theta);
    for (int iter = 0; iter < 500; ++iter) {
        // Central-difference gradient on the support coordinates.
        VectorXd grad = VectorXd::Zero(p);
        for (int j : support) {
            VectorXd up = theta, dn = theta;
            up[j] += h;
            dn[j] -= h;
            grad[j] = (objective(up) - objective(dn)) / (2.0 * h);
        }
        // Tangent-space projection (restricted sphere).
        VectorXd tangential = grad - grad.dot(theta) * theta;
        for (int j = 0; j < p; ++j)
            if (std::find(support.begin(), support.end(), j) == support.end()) tangential[j] = 0.0;
        double gnorm = tangential.norm();
        if (gnorm < grad_tol) {
            if (ok) *ok = true;
            return theta;
        }
        double step = 1.0;
        bool accepted = false;
        while (step > 1e-12) {
            VectorXd cand = normalize_to_sphere(theta - step * tangential);
            double fc = objective(cand);
            if (std::isfinite(fc) && fc < f0 - 1e-4 * step * gnorm * gnorm) {
                theta = cand;
                f0 = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (ok) *ok = true;  // no descent direction left at line-search resolution
            return theta;
        }
    }
    if (ok) *ok = true;
    return theta;
}

SparseEstimate fit_at_lambda(const SphereObjective& objective,
                             const OptimizerConfig& config, const VectorXd& start,
                             double lambda) {
    SparseEstimate est = coordinate_descent_sphere(objective, config, start, lambda);
    bool refit_ok = false;
    VectorXd refitted = refit_on_support(objective.eval, est.support, est.theta, &refit_ok);
    if (refit_ok) {
        est.theta = refitted;
        est.support.clear();
        for (int j = 0; j < est.theta.size(); ++j)
            if (est.theta[j] != 0.0) est.support.push_back(j);
        est.objective = objective.eval(est.theta);
    }
    return est;
}

std::vector<double> default_theta_lambda_grid() {
    std::vector<double> grid;
    const int count = 20;
    for (int i = 0; i < count; ++i) {
        double frac = static_cast<double>(i) / (count - 1);
        grid.push_back(1e-1 * std::pow(1e-3, frac));  // 1e-1 down to 1e-4
    }
    return grid;
}

namespace {

VectorXd intercept_start(int p) {
    VectorXd e0 = VectorXd::Zero(p);
    e0[0] = 1.0;
    return e0;
}

SparseEstimate estimate_with_cv(const Dataset& ds, const QModel& q, double tau,
                                const OptimizerConfig& config, const char* tag) {
    std::vector<double> grid = config.lambda_grid.empty() ? default_theta_lambda_grid()
                                                          : config.lambda_grid;
    const int p = ds.d + 1;
    VectorXd e0 = intercept_start(p);
    double best_lambda = grid.front();

    if (grid.size() > 1) {
        auto folds = split_folds(ds, config.cv_folds, derive_seed(config.seed, tag));
        std::vector<double> cv_loss(grid.size(), 0.0);
        for (const auto& [train_idx, val_idx] : folds) {
            Dataset train = subset(ds, train_idx);
            Dataset val = subset(ds, val_idx);
            LossContext train_ctx(train, q, tau, true);
            LossContext val_ctx(val, q, tau, true);
            SphereObjective train_obj = make_objective(train_ctx);
            VectorXd warm = e0;
            for (std::size_t li = 0; li < grid.size(); ++li) {
                SparseEstimate est = coordinate_descent_sphere(train_obj, config, warm, grid[li]);
                warm = est.theta;
                cv_loss[li] += val_ctx.loss(est.theta);
            }
        }
        std::size_t best = 0;
        for (std::size_t li = 1; li < grid.size(); ++li)
            if (cv_loss[li] < cv_loss[best]) best = li;
        best_lambda = grid[best];
    }

    LossContext ctx(ds, q, tau, true);
    SphereObjective obj = make_objective(ctx);
    return fit_at_lambda(obj, config, e0, best_lambda);
}

}  // namespace

SparseEstimate estimate_initial(const Dataset& ds, double tau, const OptimizerConfig& config) {
    BasisSpec basis{BasisSpec::Kind::Linear, ds.d};
    QModel zero = make_zero_qmodel(basis, ds.horizon);
    return estimate_with_cv(ds, zero, tau, config, "cv-initial");
}

SparseEstimate estimate_sparse(const Dataset& ds, const QModel& q, double tau,
                               const OptimizerConfig& config) {
    return estimate_with_cv(ds, q, tau, config, "cv-sparse");
}

}  // namespace mstp
