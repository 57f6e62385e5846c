#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mstp/inference.hpp"
#include "mstp/lasso.hpp"
#include "mstp/simulation.hpp"
#include "test_util.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

using namespace mstp;

namespace {

// Quadratic test objective f(theta) = (v . theta)^2 + b . theta.
struct Quadratic {
    VectorXd v, b;
    double operator()(const VectorXd& theta) const {
        double u = v.dot(theta);
        return u * u + b.dot(theta);
    }
    // Derivatives of f restricted to the sphere chart
    // theta_0(nu) = sgn(theta_0) sqrt(1 - ||nu||^2), slopes nu free.
    double chart_gradient(const VectorXd& theta, int j) const {
        double u = v.dot(theta);
        double f_j = 2.0 * u * v[j] + b[j];
        double f_0 = 2.0 * u * v[0] + b[0];
        double t_j = -theta[j] / theta[0];
        return f_j + f_0 * t_j;
    }
    double chart_hessian(const VectorXd& theta, int j, int k) const {
        double u = v.dot(theta);
        double f_0 = 2.0 * u * v[0] + b[0];
        auto fij = [&](int a, int c) { return 2.0 * v[a] * v[c]; };
        double t_j = -theta[j] / theta[0];
        double t_k = -theta[k] / theta[0];
        double t_jk = -((j == k ? 1.0 : 0.0) / theta[0]) -
                      theta[j] * theta[k] / (theta[0] * theta[0] * theta[0]);
        return fij(j, k) + fij(j, 0) * t_k + (fij(0, k) + fij(0, 0) * t_k) * t_j + f_0 * t_jk;
    }
};

Quadratic make_quadratic(int p, std::uint64_t seed) {
    Rng rng = make_rng(seed, "quad");
    std::normal_distribution<double> stdn(0.0, 1.0);
    Quadratic q;
    q.v.resize(p);
    q.b.resize(p);
    for (int i = 0; i < p; ++i) {
        q.v[i] = stdn(rng);
        q.b[i] = stdn(rng);
    }
    return q;
}

void check_probes_on_sphere(const ProbeScheme& scheme, const VectorXd& theta) {
    for (const auto& term : scheme.terms) {
        VectorXd probe = apply_overrides(theta, term.overrides);
        CHECK(std::abs(probe.norm() - 1.0) < 1e-12);
    }
}

}  // namespace

TEST_CASE("gradient and hessian probes stay on the sphere in every branch") {
    std::vector<VectorXd> points;
    points.push_back(testutil::unit_vector({0.5, 0.5, 0.5, 0.5}));     // generic
    points.push_back(testutil::unit_vector({0.0, 0.6, -0.8, 0.0}));    // theta_0 = 0
    points.push_back(testutil::unit_vector({0.0, 1.0, 0.0, 0.0}));     // theta_0 = theta_j = 0
    points.push_back(testutil::unit_vector({1.0, 0.0, 0.0, 0.0}));     // intercept only
    points.push_back(testutil::unit_vector({0.0, 0.0, 1.0, 0.0}));     // double degeneracy
    points.push_back(testutil::random_unit(4, 51));
    for (const auto& theta : points) {
        for (int j = 1; j <= 3; ++j) {
            check_probes_on_sphere(gradient_scheme(theta, 100, 2, j), theta);
            for (int k = j; k <= 3; ++k)
                check_probes_on_sphere(hessian_scheme(theta, 100, 2, j, k), theta);
        }
    }
}

TEST_CASE("numeric gradient matches the chart derivative on a smooth objective") {
    Quadratic f = make_quadratic(4, 3);
    ScalarObjective obj = [&](const VectorXd& t) { return f(t); };
    VectorXd theta = testutil::unit_vector({0.6, 0.4, -0.5, 0.3});
    for (int j = 1; j <= 3; ++j) {
        double numeric = numeric_gradient(obj, theta, 1000000, 1, j);
        CHECK(numeric == doctest::Approx(f.chart_gradient(theta, j)).epsilon(1e-5));
    }
}

TEST_CASE("gradient of a constant objective is zero") {
    ScalarObjective obj = [](const VectorXd&) { return 3.25; };
    VectorXd theta = testutil::random_unit(4, 7);
    for (int j = 1; j <= 3; ++j) {
        CHECK(std::abs(numeric_gradient(obj, theta, 100, 1, j)) < 1e-9);
        for (int k = j; k <= 3; ++k)
            CHECK(std::abs(numeric_hessian(obj, theta, 100, 1, j, k)) < 1e-6);
    }
}

TEST_CASE("gradient at the intercept pole equals the raw partial derivative") {
    // At theta = e_0 the chart is flat: d theta_0 / d theta_j = 0.
    Quadratic f = make_quadratic(4, 9);
    ScalarObjective obj = [&](const VectorXd& t) { return f(t); };
    VectorXd theta = VectorXd::Unit(4, 0);
    for (int j = 1; j <= 3; ++j) {
        double expected = 2.0 * f.v.dot(theta) * f.v[j] + f.b[j];
        CHECK(numeric_gradient(obj, theta, 1000000, 1, j) ==
              doctest::Approx(expected).epsilon(1e-4));
    }
}

TEST_CASE("numeric hessian matches the chart second derivative") {
    Quadratic f = make_quadratic(4, 13);
    ScalarObjective obj = [&](const VectorXd& t) { return f(t); };
    VectorXd theta = testutil::unit_vector({0.7, 0.3, -0.4, 0.2});
    for (int j = 1; j <= 3; ++j) {
        for (int k = j; k <= 3; ++k) {
            double numeric = numeric_hessian(obj, theta, 1000000, 1, j, k);
            double exact = f.chart_hessian(theta, j, k);
            CHECK(std::abs(numeric - exact) <= 1e-3 * std::max(1.0, std::abs(exact)));
        }
    }
}

TEST_CASE("hessian is symmetric bitwise") {
    Quadratic f = make_quadratic(5, 17);
    ScalarObjective obj = [&](const VectorXd& t) { return f(t); };
    for (int pt = 0; pt < 3; ++pt) {
        VectorXd theta = testutil::random_unit(5, 60 + pt);
        for (int j = 1; j <= 4; ++j)
            for (int k = 1; k <= 4; ++k)
                CHECK(numeric_hessian(obj, theta, 200, 1, j, k) ==
                      numeric_hessian(obj, theta, 200, 1, k, j));
    }
}

TEST_CASE("degenerate branches return finite estimates") {
    Quadratic f = make_quadratic(4, 23);
    // Make the objective independent of theta_0 so the chart derivative is
    // plain even where the chart itself is singular.
    f.v[0] = 0.0;
    f.b[0] = 0.0;
    ScalarObjective obj = [&](const VectorXd& t) { return f(t); };
    std::vector<VectorXd> points;
    points.push_back(testutil::unit_vector({0.0, 0.6, -0.8, 0.0}));
    points.push_back(testutil::unit_vector({0.0, 1.0, 0.0, 0.0}));
    points.push_back(testutil::unit_vector({0.0, 0.0, 0.6, 0.8}));
    for (const auto& theta : points) {
        for (int j = 1; j <= 3; ++j) {
            CHECK(std::isfinite(numeric_gradient(obj, theta, 400, 1, j)));
            for (int k = j; k <= 3; ++k)
                CHECK(std::isfinite(numeric_hessian(obj, theta, 400, 1, j, k)));
        }
    }
}

TEST_CASE("batched slope derivatives agree with the scalar path") {
    Dataset ds = testutil::random_dataset(12, 2, 3, 33);
    QModel q = make_zero_qmodel(BasisSpec{BasisSpec::Kind::Linear, 3}, 2);
    LossContext ctx(ds, q, 0.1, true);
    VectorXd theta = testutil::random_unit(4, 34);
    ScalarObjective obj = [&](const VectorXd& t) { return ctx.loss(t); };

    VectorXd grad = slope_gradient(ctx, theta);
    MatrixXd H = slope_hessian(ctx, theta);
    for (int j = 1; j <= 3; ++j) {
        CHECK(grad[j - 1] == doctest::Approx(numeric_gradient(obj, theta, 12, 2, j)).epsilon(1e-10));
        for (int k = j; k <= 3; ++k) {
            CHECK(H(j - 1, k - 1) ==
                  doctest::Approx(numeric_hessian(obj, theta, 12, 2, j, k)).epsilon(1e-10));
            CHECK(H(j - 1, k - 1) == H(k - 1, j - 1));
        }
    }
    MatrixXd G = per_sample_slope_gradients(ctx, theta);
    for (int j = 0; j < 3; ++j)
        CHECK(G.col(j).mean() == doctest::Approx(grad[j]).epsilon(1e-10));
}

TEST_CASE("dantzig selector shrinks to zero at large penalties") {
    MatrixXd H = MatrixXd::Identity(3, 3);
    VectorXd c(3);
    c << 0.5, -0.2, 0.1;
    DecorrelationFit fit = dantzig_solve(H, c, 0.5);  // lambda >= ||c||_inf
    CHECK(fit.w_hat.cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(fit.residual <= 0.5 + 1e-9);
}

TEST_CASE("dantzig selector interpolates exactly at lambda zero with identity H") {
    MatrixXd H = MatrixXd::Identity(3, 3);
    VectorXd c(3);
    c << 0.5, -0.2, 0.1;
    DecorrelationFit fit = dantzig_solve(H, c, 0.0);
    for (int j = 0; j < 3; ++j) CHECK(fit.w_hat[j] == doctest::Approx(c[j]).epsilon(1e-9));
}

TEST_CASE("dantzig soft-thresholds with identity H at intermediate lambda") {
    MatrixXd H = MatrixXd::Identity(4, 4);
    VectorXd c(4);
    c << 0.8, -0.5, 0.1, 0.0;
    DecorrelationFit fit = dantzig_solve(H, c, 0.3);
    for (int j = 0; j < 4; ++j)
        CHECK(fit.w_hat[j] == doctest::Approx(soft_threshold(c[j], 0.3)).epsilon(1e-9));
}

TEST_CASE("infeasible dantzig problems report the minimal feasible penalty") {
    MatrixXd H = MatrixXd::Zero(2, 2);
    VectorXd c(2);
    c << 0.4, -0.7;
    CHECK(dantzig_min_feasible_lambda(H, c) == doctest::Approx(0.7).epsilon(1e-9));
    CHECK_THROWS_AS(dantzig_solve(H, c, 0.3), NumericError);
    DecorrelationFit fit = dantzig_solve(H, c, 0.7);  // boundary is feasible
    CHECK(fit.residual <= 0.7 + 1e-9);
}

TEST_CASE("one_step applies the debiasing correction") {
    CHECK(one_step(0.5, 0.02, 0.4) == doctest::Approx(0.45).epsilon(1e-15));
    CHECK(one_step(0.37, 0.0, 2.0) == 0.37);
    CHECK_THROWS_AS(one_step(0.5, 0.1, 1e-9), NumericError);
}

TEST_CASE("sigma_s_hat reductions") {
    VectorXd w(2);
    w << 0.5, -1.0;

    MatrixXd zeros = MatrixXd::Zero(4, 3);
    CHECK(sigma_s_hat(zeros, w) == 0.0);

    MatrixXd one_row(1, 3);
    one_row << 1.2, 0.4, -0.6;
    VectorXd v(3);
    v << 1.0, -w[0], -w[1];
    double proj = one_row.row(0).dot(v);
    CHECK(sigma_s_hat(one_row, w) == doctest::Approx(proj * proj).epsilon(1e-15));

    MatrixXd g(3, 3);
    g << 0.3, -0.2, 0.9, 1.1, 0.0, -0.4, -0.7, 0.5, 0.2;
    double naive = 0.0;
    for (int i = 0; i < 3; ++i) {
        double s = g.row(i).dot(v);
        naive += s * s;
    }
    naive /= 3.0;
    CHECK(sigma_s_hat(g, w) == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("asymptotic confidence intervals") {
    auto [l1, h1] = asymptotic_ci(0.3, 1.0, 1.0, 100, 1.0);
    CHECK(l1 == 0.3);
    CHECK(h1 == 0.3);

    auto [l2, h2] = asymptotic_ci(0.3, 0.0, 1.0, 100, 0.05);
    CHECK(l2 == 0.3);
    CHECK(h2 == 0.3);

    auto [l3, h3] = asymptotic_ci(0.0, 1.0, 1.0, 100, 0.05);
    CHECK(h3 == doctest::Approx(1.959963984540054 / 10.0).epsilon(1e-6));
    CHECK(l3 == doctest::Approx(-1.959963984540054 / 10.0).epsilon(1e-6));

    // Negative information still yields an ordered interval.
    auto [l4, h4] = asymptotic_ci(0.0, 1.0, -1.0, 100, 0.05);
    CHECK(l4 < h4);
}

TEST_CASE("empirical quantiles hit min and max at two replicates") {
    std::vector<double> two{-1.0, 4.0};
    CHECK(empirical_quantile(two, 0.025) == -1.0);
    CHECK(empirical_quantile(two, 0.975) == 4.0);
    std::vector<double> five{1.0, 2.0, 3.0, 4.0, 5.0};
    CHECK(empirical_quantile(five, 0.5) == 3.0);
    CHECK(empirical_quantile(five, 0.0) == 1.0);
    CHECK(empirical_quantile(five, 1.0) == 5.0);
}

TEST_CASE("a single-value grid is returned unchanged by tuning") {
    Dataset ds = testutil::random_dataset(20, 1, 3, 40);
    QModel q = make_zero_qmodel(BasisSpec{BasisSpec::Kind::Linear, 3}, 1);
    CHECK(tune_lambda_w(ds, testutil::random_unit(4, 41), q, 0.1, 5, {0.25}, 1) == 0.25);
}

TEST_CASE("tuned penalty is always a grid member") {
    ScenarioSpec spec;
    spec.scenario = 2;
    spec.n = 60;
    spec.d = 3;
    spec.T = 1;
    spec.seed = 3;
    Dataset ds = generate(spec);
    QModel q = make_zero_qmodel(BasisSpec{BasisSpec::Kind::Linear, 3}, 1);
    auto grid = default_lambda_w_grid();
    double lw = tune_lambda_w(ds, testutil::unit_vector({-0.57, 0.58, 0.58, 0.0}), q, 0.1, 5, grid, 7);
    CHECK(std::count(grid.begin(), grid.end(), lw) == 1);
}

TEST_CASE("bootstrap with the identity resample collapses to the full-data fit") {
    ScenarioSpec spec;
    spec.scenario = 2;
    spec.n = 50;
    spec.d = 3;
    spec.T = 1;
    spec.seed = 11;
    Dataset ds = generate(spec);
    QModel q = make_zero_qmodel(BasisSpec{BasisSpec::Kind::Linear, 3}, 1);
    VectorXd theta_hat = testutil::unit_vector({-0.57, 0.58, 0.58, 0.0});

    BootstrapOptions bo;
    bo.B = 2;
    bo.lambda_theta = 0.02;
    bo.lambda_w = 0.2;
    bo.seed = 5;
    bo.identity_resample = true;
    std::vector<std::vector<double>> reps;
    auto results = bootstrap_inference(ds, theta_hat, q, 0.1, bo, &reps);
    REQUIRE(reps.size() == 2);
    REQUIRE(reps[0].size() == 3);
    CHECK(reps[0] == reps[1]);  // identical resamples, identical replicates
    for (const auto& r : results) {
        CHECK(r.method == "bootstrap");
        CHECK(r.ci_low == r.ci_high);  // degenerate two-point sample
    }
}

TEST_CASE("bootstrap intervals span the replicate extremes at B = 2") {
    ScenarioSpec spec;
    spec.scenario = 2;
    spec.n = 50;
    spec.d = 3;
    spec.T = 1;
    spec.seed = 19;
    Dataset ds = generate(spec);
    QModel q = make_zero_qmodel(BasisSpec{BasisSpec::Kind::Linear, 3}, 1);
    VectorXd theta_hat = testutil::unit_vector({-0.57, 0.58, 0.58, 0.0});

    BootstrapOptions bo;
    bo.B = 2;
    bo.lambda_theta = 0.02;
    bo.lambda_w = 0.2;
    bo.seed = 23;
    std::vector<std::vector<double>> reps;
    auto results = bootstrap_inference(ds, theta_hat, q, 0.1, bo, &reps);

    // Point estimates come from the full data, independent of the resamples.
    LossContext ctx(ds, q, 0.1, true);
    auto full = one_step_all(ctx, theta_hat, 0.2, 0.05);
    for (int jj = 0; jj < 3; ++jj) {
        CHECK(results[jj].theta_tilde == full[jj].theta_tilde);
        double lo = std::min(reps[0][jj], reps[1][jj]);
        double hi = std::max(reps[0][jj], reps[1][jj]);
        CHECK(results[jj].ci_low == lo);
        CHECK(results[jj].ci_high == hi);
    }
}

TEST_CASE("inference tables are written with one row per coordinate") {
    OneStepResult r;
    r.j = 1;
    r.theta_hat_j = 0.1;
    r.theta_tilde = 0.12;
    r.ci_low = 0.0;
    r.ci_high = 0.2;
    r.method = "bootstrap";
    r.lambda_w = 0.05;
    const char* path = "inference_table.csv";
    save_inference({r}, 7, 99, path);
    std::ifstream in(path);
    std::string header, row, extra;
    REQUIRE(std::getline(in, header));
    CHECK(header == "coordinate,theta_hat,theta_tilde,ci_low,ci_high,method,lambda_w,B,seed");
    REQUIRE(std::getline(in, row));
    CHECK(row.find("bootstrap") != std::string::npos);
    CHECK_FALSE(std::getline(in, extra));
    std::remove(path);
}
