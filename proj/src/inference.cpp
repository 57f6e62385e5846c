#include "mstp/inference.hpp"

#include "mstp/data_model.hpp"
#include "mstp/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>

namespace mstp {

namespace {

constexpr double kTinyStep = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

double safe_sqrt(double v) { return std::sqrt(std::max(v, 0.0)); }

double step_cap(int n, int T) { return 1.0 / std::sqrt(static_cast<double>(n) * T); }

// 1 - sum_{l != 0, l not excluded} theta_l^2
double residual_sq(const VectorXd& theta, int excl1, int excl2 = -1) {
    double s = 1.0;
    for (int l = 1; l < theta.size(); ++l)
        if (l != excl1 && l != excl2) s -= theta[l] * theta[l];
    return std::max(s, 0.0);
}

// Rebase an inner scheme built at a surrogate point onto the original theta:
// the surrogate's coordinate changes become part of every term's overrides.
ProbeScheme compose(const VectorXd& theta, const VectorXd& surrogate, ProbeScheme inner) {
    LossContext::Overrides base;
    for (int l = 0; l < theta.size(); ++l)
        if (surrogate[l] != theta[l]) base.emplace_back(l, surrogate[l]);
    for (auto& term : inner.terms) {
        LossContext::Overrides merged = base;
        for (const auto& [coord, value] : term.overrides) {
            bool found = false;
            for (auto& [mc, mv] : merged)
                if (mc == coord) {
                    mv = value;
                    found = true;
                    break;
                }
            if (!found) merged.emplace_back(coord, value);
        }
        term.overrides = std::move(merged);
    }
    return inner;
}

// theta' for the theta_0 = theta_j = 0 case: push coordinate j to the common
// step and rescale the other slopes back onto the sphere.
VectorXd gradient_surrogate(const VectorXd& theta, int n, int T, int j) {
    VectorXd s = theta;
    double tj = step_cap(n, T);
    double scale = safe_sqrt(1.0 - tj * tj);
    for (int l = 1; l < theta.size(); ++l) s[l] = theta[l] * scale;
    s[j] = tj;
    s[0] = 0.0;
    return s;
}

// theta'' for the theta_0 = theta_j = theta_k = 0 case.
VectorXd hessian_surrogate(const VectorXd& theta, int n, int T, int j, int k) {
    VectorXd s = theta;
    double tj = step_cap(n, T);
    double scale = safe_sqrt(1.0 - 2.0 * tj * tj);
    for (int l = 1; l < theta.size(); ++l) s[l] = theta[l] * scale;
    s[j] = tj;
    s[k] = tj;
    s[0] = 0.0;
    return s;
}

}  // namespace

VectorXd apply_overrides(const VectorXd& theta, const LossContext::Overrides& overrides) {
    VectorXd out = theta;
    for (const auto& [coord, value] : overrides) out[coord] = value;
    return out;
}

ProbeScheme gradient_scheme(const VectorXd& theta, int n, int T, int j) {
    if (j < 1 || j >= theta.size()) throw ConfigError("gradient: coordinate out of range");
    const double cap = step_cap(n, T);
    const double s2 = residual_sq(theta, j);
    const double root = safe_sqrt(s2);
    double h = std::min(cap, root - std::abs(theta[j]));

    if (h > kTinyStep) {
        // Symmetric quotient; the intercept keeps the probe on the sphere.
        double tp = theta[j] + h, tm = theta[j] - h;
        double c0p = sgn(theta[0]) * safe_sqrt(s2 - tp * tp);
        double c0m = sgn(theta[0]) * safe_sqrt(s2 - tm * tm);
        ProbeScheme scheme;
        scheme.terms.push_back({+1.0 / (2.0 * h), {{j, tp}, {0, c0p}}});
        scheme.terms.push_back({-1.0 / (2.0 * h), {{j, tm}, {0, c0m}}});
        return scheme;
    }
    if (std::abs(theta[j]) > kTinyStep) {
        // theta_0 = 0: Newton's quotient stepping j toward zero.
        double hj = std::min(cap, 2.0 * std::abs(theta[j]));
        double tp = theta[j] - hj * sgn(theta[j]);
        double c0 = sgn(theta[0]) * safe_sqrt(s2 - tp * tp);
        double denom = -hj * sgn(theta[j]);
        ProbeScheme scheme;
        scheme.terms.push_back({+1.0 / denom, {{j, tp}, {0, c0}}});
        scheme.terms.push_back({-1.0 / denom, {}});
        return scheme;
    }
    // theta_0 = theta_j = 0: evaluate at the surrogate point instead.
    VectorXd s = gradient_surrogate(theta, n, T, j);
    return compose(theta, s, gradient_scheme(s, n, T, j));
}

ProbeScheme hessian_scheme(const VectorXd& theta, int n, int T, int j, int k) {
    if (j < 1 || j >= theta.size() || k < 1 || k >= theta.size())
        throw ConfigError("hessian: coordinate out of range");
    if (j > k) std::swap(j, k);  // canonical order makes H(j,k) == H(k,j) bitwise
    const double cap = step_cap(n, T);

    if (j == k) {
        const double s2 = residual_sq(theta, j);
        const double root = safe_sqrt(s2);
        double h = std::min(cap, 0.5 * (root - std::abs(theta[j])));
        if (h > kTinyStep) {
            double tpp = theta[j] + 2.0 * h, tmm = theta[j] - 2.0 * h;
            double c0pp = sgn(theta[0]) * safe_sqrt(s2 - tpp * tpp);
            double c0mm = sgn(theta[0]) * safe_sqrt(s2 - tmm * tmm);
            double inv = 1.0 / (4.0 * h * h);
            ProbeScheme scheme;
            scheme.terms.push_back({inv, {{j, tpp}, {0, c0pp}}});
            scheme.terms.push_back({-2.0 * inv, {}});
            scheme.terms.push_back({inv, {{j, tmm}, {0, c0mm}}});
            return scheme;
        }
        if (std::abs(theta[j]) > kTinyStep) {
            // theta_0 = 0: one-sided quotient toward zero.
            double hj = std::min(cap, std::abs(theta[j]));
            double tpp = theta[j] - 2.0 * hj * sgn(theta[j]);
            double tp = theta[j] - hj * sgn(theta[j]);
            double c0pp = sgn(theta[0]) * safe_sqrt(s2 - tpp * tpp);
            double c0p = sgn(theta[0]) * safe_sqrt(s2 - tp * tp);
            double inv = 1.0 / (hj * hj);
            ProbeScheme scheme;
            scheme.terms.push_back({inv, {{j, tpp}, {0, c0pp}}});
            scheme.terms.push_back({-2.0 * inv, {{j, tp}, {0, c0p}}});
            scheme.terms.push_back({inv, {}});
            return scheme;
        }
        VectorXd s = gradient_surrogate(theta, n, T, j);
        return compose(theta, s, hessian_scheme(s, n, T, j, j));
    }

    const double s2 = residual_sq(theta, j, k);
    double slopes_sq = 0.0;
    for (int l = 1; l < theta.size(); ++l) slopes_sq += theta[l] * theta[l];
    double h = std::min(cap, (1.0 - safe_sqrt(slopes_sq)) / std::sqrt(2.0));
    if (h > kTinyStep) {
        double inv = 1.0 / (4.0 * h * h);
        ProbeScheme scheme;
        for (int sj : {+1, -1}) {
            for (int sk : {+1, -1}) {
                double tj = theta[j] + sj * h;
                double tk = theta[k] + sk * h;
                double c0 = sgn(theta[0]) * safe_sqrt(s2 - tj * tj - tk * tk);
                scheme.terms.push_back({(sj * sk) * inv, {{j, tj}, {k, tk}, {0, c0}}});
            }
        }
        return scheme;
    }
    bool j_zero = std::abs(theta[j]) <= kTinyStep;
    bool k_zero = std::abs(theta[k]) <= kTinyStep;
    if (!j_zero && !k_zero) {
        // theta_0 = 0: cross quotient with both coordinates stepped toward zero.
        double hjk = std::min({cap, 2.0 * std::abs(theta[j]), 2.0 * std::abs(theta[k])});
        double dj = -hjk * sgn(theta[j]);
        double dk = -hjk * sgn(theta[k]);
        double tj = theta[j] + dj, tk = theta[k] + dk;
        double c0_pp = sgn(theta[0]) * safe_sqrt(s2 - tj * tj - tk * tk);
        double c0_p = sgn(theta[0]) * safe_sqrt(s2 - tj * tj - theta[k] * theta[k]);
        double c0_q = sgn(theta[0]) * safe_sqrt(s2 - theta[j] * theta[j] - tk * tk);
        double inv = 1.0 / (dj * dk);
        ProbeScheme scheme;
        scheme.terms.push_back({+inv, {{j, tj}, {k, tk}, {0, c0_pp}}});
        scheme.terms.push_back({-inv, {{j, tj}, {0, c0_p}}});
        scheme.terms.push_back({-inv, {{k, tk}, {0, c0_q}}});
        scheme.terms.push_back({+inv, {}});
        return scheme;
    }
    if (j_zero && k_zero) {
        VectorXd s = hessian_surrogate(theta, n, T, j, k);
        return compose(theta, s, hessian_scheme(s, n, T, j, k));
    }
    int zero_coord = j_zero ? j : k;
    VectorXd s = gradient_surrogate(theta, n, T, zero_coord);
    return compose(theta, s, hessian_scheme(s, n, T, j, k));
}

namespace {

double evaluate_scheme(const ScalarObjective& f, const VectorXd& theta, const ProbeScheme& scheme) {
    double total = 0.0;
    for (const auto& term : scheme.terms) total += term.coeff * f(apply_overrides(theta, term.overrides));
    return total;
}

}  // namespace

double numeric_gradient(const ScalarObjective& f, const VectorXd& theta, int n, int T, int j) {
    return evaluate_scheme(f, theta, gradient_scheme(theta, n, T, j));
}

double numeric_hessian(const ScalarObjective& f, const VectorXd& theta, int n, int T, int j, int k) {
    return evaluate_scheme(f, theta, hessian_scheme(theta, n, T, j, k));
}

VectorXd slope_gradient(const LossContext& ctx, const VectorXd& theta) {
    const int d = ctx.dim();
    LossContext::Cache cache = ctx.make_cache(theta);
    VectorXd grad(d);
    for (int j = 1; j <= d; ++j) {
        ProbeScheme scheme = gradient_scheme(theta, ctx.n(), ctx.horizon(), j);
        double v = 0.0;
        for (const auto& term : scheme.terms) v += term.coeff * ctx.loss_perturbed(cache, term.overrides);
        grad[j - 1] = v;
    }
    return grad;
}

MatrixXd slope_hessian(const LossContext& ctx, const VectorXd& theta) {
    const int d = ctx.dim();
    LossContext::Cache cache = ctx.make_cache(theta);
    MatrixXd H(d, d);
    for (int j = 1; j <= d; ++j) {
        for (int k = j; k <= d; ++k) {
            ProbeScheme scheme = hessian_scheme(theta, ctx.n(), ctx.horizon(), j, k);
            double v = 0.0;
            for (const auto& term : scheme.terms) v += term.coeff * ctx.loss_perturbed(cache, term.overrides);
            H(j - 1, k - 1) = v;
            H(k - 1, j - 1) = v;
        }
    }
    return H;
}

MatrixXd per_sample_slope_gradients(const LossContext& ctx, const VectorXd& theta) {
    const int d = ctx.dim();
    LossContext::Cache cache = ctx.make_cache(theta);
    MatrixXd G = MatrixXd::Zero(ctx.n(), d);
    for (int j = 1; j <= d; ++j) {
        ProbeScheme scheme = gradient_scheme(theta, ctx.n(), ctx.horizon(), j);
        for (const auto& term : scheme.terms)
            G.col(j - 1) += term.coeff * ctx.per_sample_losses_perturbed(cache, term.overrides);
    }
    return G;
}

namespace {

// Dense two-phase primal simplex with Bland's rule.
// min cost^T x  s.t.  A x <= b, x >= 0.  Returns nullopt if infeasible.
std::optional<VectorXd> solve_lp(const MatrixXd& A, const VectorXd& b, const VectorXd& cost) {
    const int m = static_cast<int>(A.rows());
    const int nv = static_cast<int>(A.cols());
    const double eps = 1e-9;

    std::vector<int> art_of_row(m, -1);
    int n_art = 0;
    for (int i = 0; i < m; ++i)
        if (b[i] < 0.0) art_of_row[i] = n_art++;
    const int total = nv + m + n_art;

    MatrixXd tab = MatrixXd::Zero(m, total);
    VectorXd rhs(m);
    std::vector<int> basis(m);
    for (int i = 0; i < m; ++i) {
        double flip = (b[i] < 0.0) ? -1.0 : 1.0;
        tab.row(i).head(nv) = flip * A.row(i);
        tab(i, nv + i) = flip;  // slack
        rhs[i] = flip * b[i];
        if (art_of_row[i] >= 0) {
            int col = nv + m + art_of_row[i];
            tab(i, col) = 1.0;
            basis[i] = col;
        } else {
            basis[i] = nv + i;
        }
    }

    auto pivot = [&](int row, int col, VectorXd& red, double& obj) {
        double piv = tab(row, col);
        tab.row(row) /= piv;
        rhs[row] /= piv;
        for (int r = 0; r < m; ++r) {
            if (r == row) continue;
            double factor = tab(r, col);
            if (factor != 0.0) {
                tab.row(r) -= factor * tab.row(row);
                rhs[r] -= factor * rhs[row];
            }
        }
        double cf = red[col];
        if (cf != 0.0) {
            red -= cf * tab.row(row).transpose();
            obj -= cf * rhs[row];
        }
        basis[row] = col;
    };

    auto run_phase = [&](VectorXd& red, double& obj, int allowed_cols) -> void {
        const long max_iters = 20000L + 50L * (m + total);
        for (long iter = 0; iter < max_iters; ++iter) {
            int entering = -1;
            for (int c = 0; c < allowed_cols; ++c)
                if (red[c] < -eps) {
                    entering = c;  // Bland: smallest index
                    break;
                }
            if (entering < 0) return;
            int leaving = -1;
            double best_ratio = kInf;
            for (int r = 0; r < m; ++r) {
                if (tab(r, entering) > eps) {
                    double ratio = rhs[r] / tab(r, entering);
                    if (ratio < best_ratio - eps ||
                        (ratio < best_ratio + eps && (leaving < 0 || basis[r] < basis[leaving]))) {
                        best_ratio = ratio;
                        leaving = r;
                    }
                }
            }
            if (leaving < 0) throw NumericError("simplex: unbounded linear program");
            pivot(leaving, entering, red, obj);
        }
        throw ConvergenceError("simplex: iteration limit exceeded");
    };

    // Phase 1: drive the artificials to zero.
    if (n_art > 0) {
        VectorXd red = VectorXd::Zero(total);
        double obj = 0.0;
        for (int c = nv + m; c < total; ++c) red[c] = 1.0;
        for (int i = 0; i < m; ++i)
            if (basis[i] >= nv + m) {
                red -= tab.row(i).transpose();
                obj -= rhs[i];
            }
        run_phase(red, obj, total);
        if (-obj > 1e-7) return std::nullopt;  // obj tracks -(phase-1 value)

        // Pivot any artificial still basic (at zero) out of the basis.
        for (int i = 0; i < m; ++i) {
            if (basis[i] < nv + m) continue;
            int col = -1;
            for (int c = 0; c < nv + m; ++c)
                if (std::abs(tab(i, c)) > eps) {
                    col = c;
                    break;
                }
            if (col >= 0) pivot(i, col, red, obj);
            // else: redundant zero row; it stays inert.
        }
    }

    // Phase 2 over the structural and slack columns only.
    VectorXd red = VectorXd::Zero(total);
    red.head(nv) = cost;
    double obj = 0.0;
    for (int i = 0; i < m; ++i) {
        double cf = red[basis[i]];
        if (cf != 0.0) {
            red -= cf * tab.row(i).transpose();
            obj -= cf * rhs[i];
        }
    }
    run_phase(red, obj, nv + m);

    VectorXd x = VectorXd::Zero(nv);
    for (int i = 0; i < m; ++i)
        if (basis[i] < nv) x[basis[i]] = rhs[i];
    return x;
}

}  // namespace

DecorrelationFit dantzig_solve(const MatrixXd& H_nu_nu, const VectorXd& c, double lambda_w) {
    const int p = static_cast<int>(c.size());
    if (H_nu_nu.rows() != p || H_nu_nu.cols() != p)
        throw ConfigError("dantzig: dimension mismatch");
    if (lambda_w < 0.0) throw ConfigError("dantzig: lambda_w must be >= 0");

    // min 1^T (w+ + w-)  s.t.  H(w+ - w-) <= c + lambda, -H(w+ - w-) <= lambda - c.
    MatrixXd A(2 * p, 2 * p);
    A.topLeftCorner(p, p) = H_nu_nu;
    A.topRightCorner(p, p) = -H_nu_nu;
    A.bottomLeftCorner(p, p) = -H_nu_nu;
    A.bottomRightCorner(p, p) = H_nu_nu;
    VectorXd b(2 * p);
    b.head(p) = c.array() + lambda_w;
    b.tail(p) = lambda_w - c.array();
    VectorXd cost = VectorXd::Ones(2 * p);

    auto x = solve_lp(A, b, cost);
    if (!x) {
        double min_lambda = dantzig_min_feasible_lambda(H_nu_nu, c);
        std::ostringstream msg;
        msg << "dantzig: infeasible at lambda_w=" << lambda_w
            << "; minimal feasible lambda_w is approximately " << min_lambda;
        throw NumericError(msg.str());
    }
    DecorrelationFit fit;
    fit.w_hat = x->head(p) - x->tail(p);
    fit.lambda_w = lambda_w;
    fit.residual = (c - H_nu_nu * fit.w_hat).cwiseAbs().maxCoeff();
    return fit;
}

double dantzig_min_feasible_lambda(const MatrixXd& H_nu_nu, const VectorXd& c) {
    const int p = static_cast<int>(c.size());
    // min t  s.t.  H(w+ - w-) - t <= c, -H(w+ - w-) - t <= -c, all vars >= 0.
    MatrixXd A(2 * p, 2 * p + 1);
    A.block(0, 0, p, p) = H_nu_nu;
    A.block(0, p, p, p) = -H_nu_nu;
    A.block(p, 0, p, p) = -H_nu_nu;
    A.block(p, p, p, p) = H_nu_nu;
    A.col(2 * p).setConstant(-1.0);
    VectorXd b(2 * p);
    b.head(p) = c;
    b.tail(p) = -c;
    VectorXd cost = VectorXd::Zero(2 * p + 1);
    cost[2 * p] = 1.0;
    auto x = solve_lp(A, b, cost);
    if (!x) throw NumericError("dantzig: residual-minimizing program failed");
    return (*x)[2 * p];
}

double one_step(double theta_hat_j, double score, double info) {
    if (std::abs(info) <= kDegenerateInfo)
        throw NumericError("one-step: degenerate information (|I| <= 1e-8)");
    return theta_hat_j - score / info;
}

double sigma_s_hat(const MatrixXd& xi_grads, const VectorXd& w_hat) {
    if (xi_grads.cols() != w_hat.size() + 1)
        throw ConfigError("sigma_s: gradient/w dimension mismatch");
    VectorXd v(xi_grads.cols());
    v[0] = 1.0;
    v.tail(w_hat.size()) = -w_hat;
    VectorXd proj = xi_grads * v;
    return proj.squaredNorm() / static_cast<double>(xi_grads.rows());
}

namespace {

// Inverse standard-normal CDF: Acklam's rational approximation plus one
// Halley refinement against erfc.
double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -kInf;
        if (p == 1.0) return kInf;
        throw ConfigError("inverse normal cdf: p outside [0, 1]");
    }
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double bb[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                -1.556989798598866e+02, 6.680131188771972e+01,
                                -1.328068155288572e+01};
    static const double cc[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                -2.400758277161838e+00, -2.549732539343734e+00,
                                4.374664141464968e+00, 2.938163982698783e+00};
    static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1.0 - plow;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((cc[0] * q + cc[1]) * q + cc[2]) * q + cc[3]) * q + cc[4]) * q + cc[5]) /
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
    } else if (p <= phigh) {
        double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((bb[0] * r + bb[1]) * r + bb[2]) * r + bb[3]) * r + bb[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((cc[0] * q + cc[1]) * q + cc[2]) * q + cc[3]) * q + cc[4]) * q + cc[5]) /
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
    }
    double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    constexpr double two_pi = 6.283185307179586476925286766559;
    double u = e * std::sqrt(two_pi) * std::exp(x * x / 2.0);
    x = x - u / (1.0 + x * u / 2.0);
    return x;
}

}  // namespace

std::pair<double, double> asymptotic_ci(double theta_tilde, double sigma_s, double info,
                                        int n, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("ci: alpha must be in (0, 1]");
    if (sigma_s < 0.0) throw NumericError("ci: negative variance estimate");
    double z = alpha == 1.0 ? 0.0 : inverse_normal_cdf(1.0 - alpha / 2.0);
    double half = z * std::sqrt(sigma_s) / (std::sqrt(static_cast<double>(n)) * info);
    double lo = theta_tilde - half, hi = theta_tilde + half;
    if (lo > hi) std::swap(lo, hi);
    return {lo, hi};
}

namespace {

// Row/column j (0-based slope index) removed from the slope Hessian;
// c = cross-derivative row, hcol = column used by the information term.
void split_hessian(const MatrixXd& H, int jj, MatrixXd& H_nu_nu, VectorXd& c, VectorXd& hcol) {
    const int d = static_cast<int>(H.rows());
    H_nu_nu.resize(d - 1, d - 1);
    c.resize(d - 1);
    hcol.resize(d - 1);
    int r = 0;
    for (int a = 0; a < d; ++a) {
        if (a == jj) continue;
        c[r] = H(jj, a);
        hcol[r] = H(a, jj);
        int s = 0;
        for (int bcol = 0; bcol < d; ++bcol) {
            if (bcol == jj) continue;
            H_nu_nu(r, s) = H(a, bcol);
            ++s;
        }
        ++r;
    }
}

VectorXd drop_coord(const VectorXd& v, int jj) {
    VectorXd out(v.size() - 1);
    int r = 0;
    for (int a = 0; a < v.size(); ++a)
        if (a != jj) out[r++] = v[a];
    return out;
}

}  // namespace

std::vector<double> default_lambda_w_grid() {
    std::vector<double> grid;
    const int count = 10;
    for (int i = 0; i < count; ++i) {
        double frac = static_cast<double>(i) / (count - 1);
        grid.push_back(std::pow(10.0, -3.0 * (1.0 - frac)));  // 1e-3 up to 1
    }
    return grid;
}

double tune_lambda_w(const Dataset& ds, const VectorXd& theta_hat, const QModel& q,
                     double tau, int folds, const std::vector<double>& grid,
                     std::uint64_t seed) {
    if (grid.empty()) throw ConfigError("tune_lambda_w: empty grid");
    if (grid.size() == 1) return grid.front();
    const int d = ds.d;

    auto fold_splits = split_folds(ds, folds, derive_seed(seed, "lambda-w"));
    const int K = static_cast<int>(fold_splits.size());
    MatrixXd err = MatrixXd::Zero(K, static_cast<int>(grid.size()));

    for (int f = 0; f < K; ++f) {
        Dataset train = subset(ds, fold_splits[static_cast<std::size_t>(f)].first);
        Dataset val = subset(ds, fold_splits[static_cast<std::size_t>(f)].second);
        LossContext train_ctx(train, q, tau, true);
        LossContext val_ctx(val, q, tau, true);
        MatrixXd H_tr = slope_hessian(train_ctx, theta_hat);
        MatrixXd H_val = slope_hessian(val_ctx, theta_hat);
        for (int jj = 0; jj < d; ++jj) {
            MatrixXd Hnn_tr, Hnn_val;
            VectorXd c_tr, c_val, hcol;
            split_hessian(H_tr, jj, Hnn_tr, c_tr, hcol);
            split_hessian(H_val, jj, Hnn_val, c_val, hcol);
            for (std::size_t li = 0; li < grid.size(); ++li) {
                if (std::isinf(err(f, static_cast<int>(li)))) continue;
                try {
                    DecorrelationFit fit = dantzig_solve(Hnn_tr, c_tr, grid[li]);
                    err(f, static_cast<int>(li)) +=
                        (c_val - Hnn_val * fit.w_hat).cwiseAbs().maxCoeff() / d;
                } catch (const Error&) {
                    err(f, static_cast<int>(li)) = kInf;
                }
            }
        }
    }

    // One-standard-error rule over the fold means.
    double best_mean = kInf;
    std::size_t best = 0;
    std::vector<double> means(grid.size(), kInf);
    for (std::size_t li = 0; li < grid.size(); ++li) {
        double mean = err.col(static_cast<int>(li)).mean();
        means[li] = mean;
        if (mean < best_mean) {
            best_mean = mean;
            best = li;
        }
    }
    if (!std::isfinite(best_mean))
        throw ConvergenceError("tune_lambda_w: decorrelation infeasible on the whole grid");
    double sd = 0.0;
    for (int f = 0; f < K; ++f) {
        double dev = err(f, static_cast<int>(best)) - best_mean;
        sd += dev * dev;
    }
    sd = K > 1 ? std::sqrt(sd / (K - 1)) : 0.0;
    double threshold = best_mean + sd / std::sqrt(static_cast<double>(K));

    double chosen = grid[best];
    for (std::size_t li = 0; li < grid.size(); ++li)
        if (std::isfinite(means[li]) && means[li] <= threshold) chosen = std::max(chosen, grid[li]);
    return chosen;
}

std::vector<OneStepResult> one_step_all(const LossContext& ctx, const VectorXd& theta_hat,
                                        double lambda_w, double alpha) {
    const int d = ctx.dim();
    if (theta_hat.size() != d + 1) throw ConfigError("one_step_all: theta length mismatch");
    VectorXd grad = slope_gradient(ctx, theta_hat);
    MatrixXd H = slope_hessian(ctx, theta_hat);
    MatrixXd G = per_sample_slope_gradients(ctx, theta_hat);

    std::vector<OneStepResult> results;
    results.reserve(static_cast<std::size_t>(d));
    for (int jj = 0; jj < d; ++jj) {
        MatrixXd Hnn;
        VectorXd c, hcol;
        split_hessian(H, jj, Hnn, c, hcol);
        DecorrelationFit fit = dantzig_solve(Hnn, c, lambda_w);
        fit.j = jj + 1;

        OneStepResult r;
        r.j = jj + 1;
        r.theta_hat_j = theta_hat[jj + 1];
        r.lambda_w = lambda_w;
        r.score = decorrelated_score(grad[jj], drop_coord(grad, jj), fit.w_hat);
        r.info = H(jj, jj) - fit.w_hat.dot(hcol);

        MatrixXd xi(G.rows(), d);
        xi.col(0) = G.col(jj);
        int s = 1;
        for (int a = 0; a < d; ++a)
            if (a != jj) xi.col(s++) = G.col(a);
        r.sigma_s = sigma_s_hat(xi, fit.w_hat);

        try {
            r.theta_tilde = one_step(r.theta_hat_j, r.score, r.info);
        } catch (const NumericError&) {
            r.theta_tilde = r.theta_hat_j;
            r.degenerate_info = true;
        }
        r.method = "asymptotic";
        if (!r.degenerate_info) {
            auto [lo, hi] = asymptotic_ci(r.theta_tilde, r.sigma_s, r.info,
                                          ctx.n(), alpha);
            r.ci_low = lo;
            r.ci_high = hi;
        } else {
            r.ci_low = r.ci_high = r.theta_tilde;
        }
        results.push_back(std::move(r));
    }
    return results;
}

double empirical_quantile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw ConfigError("quantile: empty sample");
    if (q <= 0.0) return sorted.front();
    if (q >= 1.0) return sorted.back();
    auto n = static_cast<double>(sorted.size());
    auto idx = static_cast<std::size_t>(std::ceil(q * n)) - 1;
    if (idx >= sorted.size()) idx = sorted.size() - 1;
    return sorted[idx];
}

std::vector<OneStepResult> bootstrap_inference(const Dataset& ds, const VectorXd& theta_hat,
                                               const QModel& q, double tau,
                                               const BootstrapOptions& options,
                                               std::vector<std::vector<double>>* replicates) {
    if (options.B < 2) throw ConfigError("bootstrap: B must be >= 2");
    const int n = ds.n();
    const int d = ds.d;

    LossContext full_ctx(ds, q, tau, true);
    std::vector<OneStepResult> results = one_step_all(full_ctx, theta_hat, options.lambda_w, options.alpha);

    VectorXd e0 = VectorXd::Zero(d + 1);
    e0[0] = 1.0;

    std::vector<std::vector<double>> reps(static_cast<std::size_t>(options.B));
    std::vector<std::string> failures(static_cast<std::size_t>(options.B));

    parallel_for(options.B, [&](int b) {
        try {
            std::vector<int> idx(static_cast<std::size_t>(n));
            if (options.identity_resample) {
                std::iota(idx.begin(), idx.end(), 0);
            } else {
                Rng rng = make_rng(options.seed, "resample", static_cast<std::uint64_t>(b));
                std::uniform_int_distribution<int> pick(0, n - 1);
                for (auto& v : idx) v = pick(rng);
            }
            Dataset dsb = subset(ds, idx);
            LossContext ctx(dsb, q, tau, true);
            SphereObjective obj = make_objective(ctx);
            OptimizerConfig oc = options.opt;
            oc.seed = derive_seed(options.seed, "boot-opt", static_cast<std::uint64_t>(b));
            SparseEstimate est = fit_at_lambda(obj, oc, e0, options.lambda_theta);

            VectorXd grad = slope_gradient(ctx, est.theta);
            MatrixXd H = slope_hessian(ctx, est.theta);
            std::vector<double> tildes(static_cast<std::size_t>(d));
            for (int jj = 0; jj < d; ++jj) {
                MatrixXd Hnn;
                VectorXd c, hcol;
                split_hessian(H, jj, Hnn, c, hcol);
                DecorrelationFit fit = dantzig_solve(Hnn, c, options.lambda_w);
                double score = decorrelated_score(grad[jj], drop_coord(grad, jj), fit.w_hat);
                double info = H(jj, jj) - fit.w_hat.dot(hcol);
                double tilde;
                try {
                    tilde = one_step(est.theta[jj + 1], score, info);
                } catch (const NumericError&) {
                    tilde = est.theta[jj + 1];
                }
                tildes[static_cast<std::size_t>(jj)] = tilde;
            }
            reps[static_cast<std::size_t>(b)] = std::move(tildes);
        } catch (const std::exception& e) {
            failures[static_cast<std::size_t>(b)] = e.what();
        }
    }, options.threads);

    int dropped = 0;
    for (int b = 0; b < options.B; ++b) {
        if (reps[static_cast<std::size_t>(b)].empty()) {
            ++dropped;
            std::cerr << "bootstrap: replicate " << b << " dropped: "
                      << failures[static_cast<std::size_t>(b)] << "\n";
        }
    }
    if (dropped > options.max_drop_fraction * options.B)
        throw ConvergenceError("bootstrap: more than " +
                               std::to_string(static_cast<int>(options.max_drop_fraction * 100)) +
                               "% of replicates failed (" + std::to_string(dropped) + "/" +
                               std::to_string(options.B) + ")");

    for (int jj = 0; jj < d; ++jj) {
        std::vector<double> vals;
        vals.reserve(static_cast<std::size_t>(options.B));
        for (const auto& rep : reps)
            if (!rep.empty()) vals.push_back(rep[static_cast<std::size_t>(jj)]);
        std::sort(vals.begin(), vals.end());
        results[static_cast<std::size_t>(jj)].method = "bootstrap";
        results[static_cast<std::size_t>(jj)].ci_low = empirical_quantile(vals, options.alpha / 2.0);
        results[static_cast<std::size_t>(jj)].ci_high = empirical_quantile(vals, 1.0 - options.alpha / 2.0);
    }
    if (replicates) *replicates = std::move(reps);
    return results;
}

void save_inference(const std::vector<OneStepResult>& results, int B, std::uint64_t seed,
                    const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write inference table: " + path);
    out << "coordinate,theta_hat,theta_tilde,ci_low,ci_high,method,lambda_w,B,seed\n";
    for (const auto& r : results) {
        out << r.j << ',' << format_double(r.theta_hat_j) << ',' << format_double(r.theta_tilde)
            << ',' << format_double(r.ci_low) << ',' << format_double(r.ci_high) << ','
            << r.method << ',' << format_double(r.lambda_w) << ',' << B << ',' << seed << "\n";
    }
}

}  // namespace mstp
