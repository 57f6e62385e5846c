#include "mstp/simulation.hpp"

#include "mstp/importance.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace mstp {

void validate_spec(const ScenarioSpec& spec) {
    if (spec.scenario != 1 && spec.scenario != 2) throw ConfigError("scenario must be 1 or 2");
    if (spec.n < 1) throw ConfigError("scenario: n must be >= 1");
    if (spec.d < 2) throw ConfigError("scenario: d must be >= 2");
    if (spec.T < 1) throw ConfigError("scenario: T must be >= 1");
    if (!(spec.noise_sd >= 0.0)) throw ConfigError("scenario: noise sd must be >= 0");
    if (!(spec.ewma_weight > 0.0 && spec.ewma_weight <= 1.0))
        throw ConfigError("scenario: ewma weight must be in (0, 1]");
    if (spec.forced_action != 0 && spec.forced_action != 1 && spec.forced_action != -1)
        throw ConfigError("scenario: forced action must be -1, 0, or +1");
    if (!spec.forced_x1.empty() && static_cast<int>(spec.forced_x1.size()) != spec.d)
        throw ConfigError("scenario: forced initial state has wrong dimension");
}

namespace {

void transition(const ScenarioSpec& spec, double ew1, double ew2, int a,
                double e1, double e2, double& x1n, double& x2n, double& reward) {
    if (spec.scenario == 1) {
        x1n = 0.6 * a * ew1 + 0.2 * ew1 + 0.1 * ew2 + e1;
        x2n = -0.6 * a * ew2 + 0.3 * ew1 * ew2 + e2;
        reward = std::exp(0.5 * (x1n + x2n)) - 0.2 * a - 1.0;
    } else {
        x1n = 0.5 * a * ew1 + 0.3 * ew1 + 0.1 * ew2 + e1;
        x2n = 0.5 * a * ew2 + 0.1 * ew1 + 0.3 * ew2 + e2;
        reward = x1n + x2n - 0.5 * a;
    }
}

// Simulates one trajectory; actions come from `act(x, rng)`. The stage-T
// reward needs the coordinates 1-2 of the hidden stage T+1, which are
// computed but never emitted.
template <typename ActionFn>
double rollout(const ScenarioSpec& spec, Rng& rng, ActionFn&& act, Trajectory* out) {
    const int d = spec.d;
    std::normal_distribution<double> stdn(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, spec.noise_sd);

    VectorXd x(d);
    if (!spec.forced_x1.empty()) {
        for (int j = 0; j < d; ++j) x[j] = spec.forced_x1[static_cast<std::size_t>(j)];
    } else {
        for (int j = 0; j < d; ++j) x[j] = stdn(rng);
    }
    double ew1 = x[0], ew2 = x[1];

    double total = 0.0;
    for (int t = 0; t < spec.T; ++t) {
        int a = spec.forced_action != 0 ? spec.forced_action : act(x, rng);
        double e1 = spec.zero_noise ? 0.0 : noise(rng);
        double e2 = spec.zero_noise ? 0.0 : noise(rng);
        double x1n, x2n, r;
        transition(spec, ew1, ew2, a, e1, e2, x1n, x2n, r);
        if (out) out->stages.push_back({x, a, r, 0.5});
        total += r;
        if (t + 1 < spec.T) {
            VectorXd xn(d);
            xn[0] = x1n;
            xn[1] = x2n;
            for (int j = 2; j < d; ++j) xn[j] = spec.zero_noise ? 0.0 : noise(rng);
            double w = spec.ewma_weight;
            ew1 = (1.0 - w) * ew1 + w * x1n;
            ew2 = (1.0 - w) * ew2 + w * x2n;
            x = std::move(xn);
        }
    }
    return total;
}

}  // namespace

Dataset generate(const ScenarioSpec& spec) {
    validate_spec(spec);
    Dataset ds;
    ds.d = spec.d;
    ds.horizon = spec.T;
    ds.trajectories.resize(static_cast<std::size_t>(spec.n));
    parallel_for(spec.n, [&](int i) {
        Rng rng = make_rng(spec.seed, "traj", static_cast<std::uint64_t>(i));
        auto uniform_action = [](const VectorXd&, Rng& r) {
            return std::uniform_real_distribution<double>(0.0, 1.0)(r) < 0.5 ? 1 : -1;
        };
        rollout(spec, rng, uniform_action, &ds.trajectories[static_cast<std::size_t>(i)]);
    }, 1);
    return ds;
}

std::pair<double, double> mc_value(const PolicyParams& p, const ScenarioSpec& spec,
                                   int n_test, std::uint64_t seed, int threads) {
    validate_spec(spec);
    if (n_test < 2) throw ConfigError("mc_value: n_test must be >= 2");
    std::vector<double> totals(static_cast<std::size_t>(n_test));
    parallel_for(n_test, [&](int i) {
        Rng rng = make_rng(seed, "rollout", static_cast<std::uint64_t>(i));
        auto policy_action = [&p](const VectorXd& x, Rng& r) { return sample_action(p, x, r); };
        totals[static_cast<std::size_t>(i)] = rollout(spec, rng, policy_action, nullptr);
    }, threads);
    double mean = std::accumulate(totals.begin(), totals.end(), 0.0) / n_test;
    double ss = 0.0;
    for (double v : totals) ss += (v - mean) * (v - mean);
    double se = std::sqrt(ss / (n_test - 1) / n_test);
    return {mean, se};
}

namespace {

// Pre-drawn randomness for one oracle repeat, shared across all grid points
// (common random numbers). Only coordinates 1-2 matter because the searched
// policies have zero tails.
struct OracleTape {
    MatrixXd x1;                 // n x 2
    MatrixXd aunif;              // n x T
    std::vector<MatrixXd> eps;   // per stage, n x 2
};

OracleTape build_tape(const ScenarioSpec& spec, int n_test, std::uint64_t seed) {
    OracleTape tape;
    tape.x1.resize(n_test, 2);
    tape.aunif.resize(n_test, spec.T);
    tape.eps.assign(static_cast<std::size_t>(spec.T), MatrixXd::Zero(n_test, 2));
    for (int i = 0; i < n_test; ++i) {
        Rng rng = make_rng(seed, "oracle-tape", static_cast<std::uint64_t>(i));
        std::normal_distribution<double> stdn(0.0, 1.0);
        std::normal_distribution<double> noise(0.0, spec.noise_sd);
        tape.x1(i, 0) = stdn(rng);
        tape.x1(i, 1) = stdn(rng);
        for (int t = 0; t < spec.T; ++t) {
            tape.aunif(i, t) = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            tape.eps[static_cast<std::size_t>(t)](i, 0) = spec.zero_noise ? 0.0 : noise(rng);
            tape.eps[static_cast<std::size_t>(t)](i, 1) = spec.zero_noise ? 0.0 : noise(rng);
        }
    }
    return tape;
}

double tape_value(const ScenarioSpec& spec, const OracleTape& tape,
                  double t0, double t1, double t2, double tau, int threads) {
    const int n = static_cast<int>(tape.x1.rows());
    std::vector<double> totals(static_cast<std::size_t>(n));
    parallel_for(n, [&](int i) {
        double x1 = tape.x1(i, 0), x2 = tape.x1(i, 1);
        double ew1 = x1, ew2 = x2;
        double total = 0.0;
        for (int t = 0; t < spec.T; ++t) {
            double g = t0 + t1 * x1 + t2 * x2;
            double pi_plus = logistic(g / tau);
            int a = tape.aunif(i, t) < pi_plus ? 1 : -1;
            double nx1, nx2, r;
            transition(spec, ew1, ew2, a,
                       tape.eps[static_cast<std::size_t>(t)](i, 0),
                       tape.eps[static_cast<std::size_t>(t)](i, 1), nx1, nx2, r);
            total += r;
            double w = spec.ewma_weight;
            ew1 = (1.0 - w) * ew1 + w * nx1;
            ew2 = (1.0 - w) * ew2 + w * nx2;
            x1 = nx1;
            x2 = nx2;
        }
        totals[static_cast<std::size_t>(i)] = total;
    }, threads);
    return std::accumulate(totals.begin(), totals.end(), 0.0) / n;
}

}  // namespace

VectorXd grid_oracle(const ScenarioSpec& spec, double grid_step, int n_test,
                     int repeats, double tau, int threads) {
    validate_spec(spec);
    if (!(grid_step > 0.0)) throw ConfigError("grid_oracle: step must be > 0");
    if (repeats < 1) throw ConfigError("grid_oracle: repeats must be >= 1");

    // Slope grid symmetric around zero so the origin (theta = +-e0) is
    // always feasible.
    std::vector<double> axis;
    int kmax = static_cast<int>(std::floor(1.0 / grid_step + 1e-12));
    for (int k = -kmax; k <= kmax; ++k) axis.push_back(k * grid_step);

    Eigen::Vector3d accum = Eigen::Vector3d::Zero();
    for (int rep = 0; rep < repeats; ++rep) {
        OracleTape tape = build_tape(spec, n_test, derive_seed(spec.seed, "oracle", static_cast<std::uint64_t>(rep)));
        double best_val = -std::numeric_limits<double>::infinity();
        Eigen::Vector3d best = Eigen::Vector3d::UnitX();
        for (double t1 : axis) {
            for (double t2 : axis) {
                double rad = 1.0 - t1 * t1 - t2 * t2;
                if (rad < -1e-12) continue;
                double t0 = std::sqrt(std::max(rad, 0.0));
                for (int s : {+1, -1}) {
                    if (s < 0 && t0 == 0.0) break;
                    double v = tape_value(spec, tape, s * t0, t1, t2, tau, threads);
                    if (v > best_val) {
                        best_val = v;
                        best << s * t0, t1, t2;
                    }
                }
            }
        }
        accum += best;
    }
    accum /= static_cast<double>(repeats);

    VectorXd out = VectorXd::Zero(spec.d + 1);
    out[0] = accum[0];
    out[1] = accum[1];
    out[2] = accum[2];
    return normalize_to_sphere(out);
}

VectorXd true_theta(const ScenarioSpec& spec) {
    VectorXd out = VectorXd::Zero(spec.d + 1);
    if (spec.scenario == 1) {
        if (spec.T == 1) {
            out[0] = -0.39; out[1] = 0.68; out[2] = -0.62;
        } else {
            out[0] = -0.45; out[1] = 0.53; out[2] = -0.72;
        }
    } else {
        out[0] = -0.57; out[1] = 0.58; out[2] = 0.58;
    }
    return out;
}

double mad(std::vector<double> values) {
    if (values.empty()) throw ConfigError("mad: empty sample");
    auto median = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        std::size_t n = v.size();
        return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    double med = median(values);
    for (auto& v : values) v = std::abs(v - med);
    return median(values);
}

namespace {

QModel fit_q_variant(const Dataset& ds, const MethodConfig& method,
                     const SparseEstimate& initial, std::uint64_t seed) {
    BasisSpec basis{BasisSpec::Kind::Linear, ds.d};
    if (method.q_variant == "q0") return make_zero_qmodel(basis, ds.horizon);
    if (method.q_variant == "q1")
        return fit_q_regression(ds, basis, method.q_cv_folds, seed, {});
    if (method.q_variant == "q2") {
        PolicyParams p{initial.theta, method.tau};
        RatioTable ratios = compute_ratios(p, ds);
        return fit_q_variance_min(ds, basis, p, ratios, method.q_cv_folds, seed, {});
    }
    throw ConfigError("unknown q variant: " + method.q_variant + " (expected q0|q1|q2)");
}

double sample_sd(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / (static_cast<double>(v.size()) - 1.0));
}

nlohmann::ordered_json vec_to_json(const VectorXd& v) {
    auto arr = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(format_double(v[i]));
    return arr;
}

VectorXd vec_from_json(const nlohmann::json& arr) {
    VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = std::stod(arr[i].get<std::string>());
    return v;
}

nlohmann::ordered_json replication_to_json(const ReplicationResult& r) {
    nlohmann::ordered_json j;
    j["rep"] = r.rep;
    j["ok"] = r.ok;
    j["error"] = r.error;
    j["theta_check"] = vec_to_json(r.theta_check);
    j["theta_hat"] = vec_to_json(r.theta_hat);
    j["theta_tilde_policy"] = vec_to_json(r.theta_tilde_policy);
    j["lambda_theta"] = format_double(r.lambda_theta);
    j["lambda_w"] = format_double(r.lambda_w);
    j["value_initial"] = format_double(r.value_initial);
    j["se_initial"] = format_double(r.se_initial);
    j["value_sparse"] = format_double(r.value_sparse);
    j["se_sparse"] = format_double(r.se_sparse);
    j["value_onestep"] = format_double(r.value_onestep);
    j["se_onestep"] = format_double(r.se_onestep);
    auto inf = nlohmann::ordered_json::array();
    for (const auto& o : r.inference) {
        nlohmann::ordered_json oj;
        oj["j"] = o.j;
        oj["theta_hat_j"] = format_double(o.theta_hat_j);
        oj["theta_tilde"] = format_double(o.theta_tilde);
        oj["score"] = format_double(o.score);
        oj["info"] = format_double(o.info);
        oj["sigma_s"] = format_double(o.sigma_s);
        oj["ci_low"] = format_double(o.ci_low);
        oj["ci_high"] = format_double(o.ci_high);
        oj["method"] = o.method;
        oj["degenerate_info"] = o.degenerate_info;
        oj["lambda_w"] = format_double(o.lambda_w);
        inf.push_back(oj);
    }
    j["inference"] = inf;
    auto mads = nlohmann::ordered_json::array();
    for (double m : r.estimated_mad) mads.push_back(format_double(m));
    j["estimated_mad"] = mads;
    return j;
}

ReplicationResult replication_from_json(const nlohmann::json& j) {
    ReplicationResult r;
    r.rep = j.at("rep").get<int>();
    r.ok = j.at("ok").get<bool>();
    r.error = j.at("error").get<std::string>();
    r.theta_check = vec_from_json(j.at("theta_check"));
    r.theta_hat = vec_from_json(j.at("theta_hat"));
    r.theta_tilde_policy = vec_from_json(j.at("theta_tilde_policy"));
    r.lambda_theta = std::stod(j.at("lambda_theta").get<std::string>());
    r.lambda_w = std::stod(j.at("lambda_w").get<std::string>());
    r.value_initial = std::stod(j.at("value_initial").get<std::string>());
    r.se_initial = std::stod(j.at("se_initial").get<std::string>());
    r.value_sparse = std::stod(j.at("value_sparse").get<std::string>());
    r.se_sparse = std::stod(j.at("se_sparse").get<std::string>());
    r.value_onestep = std::stod(j.at("value_onestep").get<std::string>());
    r.se_onestep = std::stod(j.at("se_onestep").get<std::string>());
    for (const auto& oj : j.at("inference")) {
        OneStepResult o;
        o.j = oj.at("j").get<int>();
        o.theta_hat_j = std::stod(oj.at("theta_hat_j").get<std::string>());
        o.theta_tilde = std::stod(oj.at("theta_tilde").get<std::string>());
        o.score = std::stod(oj.at("score").get<std::string>());
        o.info = std::stod(oj.at("info").get<std::string>());
        o.sigma_s = std::stod(oj.at("sigma_s").get<std::string>());
        o.ci_low = std::stod(oj.at("ci_low").get<std::string>());
        o.ci_high = std::stod(oj.at("ci_high").get<std::string>());
        o.method = oj.at("method").get<std::string>();
        o.degenerate_info = oj.at("degenerate_info").get<bool>();
        o.lambda_w = std::stod(oj.at("lambda_w").get<std::string>());
        r.inference.push_back(std::move(o));
    }
    for (const auto& m : j.at("estimated_mad"))
        r.estimated_mad.push_back(std::stod(m.get<std::string>()));
    return r;
}

}  // namespace

ReplicationResult run_replication(const ScenarioSpec& spec, const MethodConfig& method,
                                  int rep, std::uint64_t seed) {
    ReplicationResult result;
    result.rep = rep;

    ScenarioSpec rspec = spec;
    rspec.seed = derive_seed(seed, "rep-data", static_cast<std::uint64_t>(rep));
    Dataset ds = generate(rspec);

    OptimizerConfig oc = method.opt;
    oc.seed = derive_seed(seed, "rep-init", static_cast<std::uint64_t>(rep));
    SparseEstimate initial = estimate_initial(ds, method.tau, oc);
    result.theta_check = initial.theta;

    QModel q = fit_q_variant(ds, method, initial,
                             derive_seed(seed, "rep-q", static_cast<std::uint64_t>(rep)));

    SparseEstimate sparse = initial;
    if (method.q_variant != "q0") {
        oc.seed = derive_seed(seed, "rep-sparse", static_cast<std::uint64_t>(rep));
        sparse = estimate_sparse(ds, q, method.tau, oc);
    }
    result.theta_hat = sparse.theta;
    result.lambda_theta = sparse.lambda;

    std::vector<double> lw_grid = method.lambda_w_grid.empty() ? default_lambda_w_grid()
                                                               : method.lambda_w_grid;
    double lambda_w = tune_lambda_w(ds, sparse.theta, q, method.tau, method.lambda_w_folds,
                                    lw_grid, derive_seed(seed, "rep-lw", static_cast<std::uint64_t>(rep)));
    result.lambda_w = lambda_w;

    BootstrapOptions bo;
    bo.B = method.B;
    bo.alpha = method.alpha;
    bo.seed = derive_seed(seed, "rep-boot", static_cast<std::uint64_t>(rep));
    bo.lambda_theta = sparse.lambda;
    bo.lambda_w = lambda_w;
    bo.opt = method.opt;
    bo.threads = method.threads;
    std::vector<std::vector<double>> boot_reps;
    result.inference = bootstrap_inference(ds, sparse.theta, q, method.tau, bo, &boot_reps);

    result.estimated_mad.resize(static_cast<std::size_t>(ds.d));
    for (int jj = 0; jj < ds.d; ++jj) {
        std::vector<double> vals;
        for (const auto& r : boot_reps)
            if (!r.empty()) vals.push_back(r[static_cast<std::size_t>(jj)]);
        result.estimated_mad[static_cast<std::size_t>(jj)] = mad(std::move(vals));
    }

    VectorXd tilde(ds.d + 1);
    tilde[0] = sparse.theta[0];
    for (int jj = 0; jj < ds.d; ++jj)
        tilde[jj + 1] = result.inference[static_cast<std::size_t>(jj)].theta_tilde;
    if (tilde.norm() == 0.0) tilde = sparse.theta;
    result.theta_tilde_policy = normalize_to_sphere(tilde);

    ScenarioSpec vspec = spec;  // evaluation dynamics; seed below
    auto value_of = [&](const VectorXd& theta, const char* tag, double& mean, double& se) {
        PolicyParams p{theta, method.tau};
        vspec.seed = 0;
        auto [m, s] = mc_value(p, vspec, method.n_test,
                               derive_seed(seed, tag, static_cast<std::uint64_t>(rep)),
                               method.threads);
        mean = m;
        se = s;
    };
    value_of(result.theta_check, "rep-value-initial", result.value_initial, result.se_initial);
    value_of(result.theta_hat, "rep-value-sparse", result.value_sparse, result.se_sparse);
    value_of(result.theta_tilde_policy, "rep-value-onestep", result.value_onestep, result.se_onestep);

    result.ok = true;
    return result;
}

ExperimentReport run_experiment(const ScenarioSpec& spec, const MethodConfig& method,
                                int replications, std::uint64_t seed) {
    if (replications < 1) throw ConfigError("experiment: replications must be >= 1");
    ExperimentReport report;
    report.spec = spec;
    report.method = method;
    report.attempted = replications;

    namespace fs = std::filesystem;
    if (!method.checkpoint_dir.empty()) fs::create_directories(method.checkpoint_dir);

    for (int rep = 0; rep < replications; ++rep) {
        std::string ckpt;
        if (!method.checkpoint_dir.empty()) {
            std::ostringstream name;
            name << method.checkpoint_dir << "/rep_" << rep << ".json";
            ckpt = name.str();
        }
        ReplicationResult r;
        bool loaded = false;
        if (!ckpt.empty() && fs::exists(ckpt)) {
            std::ifstream in(ckpt);
            nlohmann::json j;
            in >> j;
            r = replication_from_json(j);
            loaded = true;
        }
        if (!loaded) {
            try {
                r = run_replication(spec, method, rep, seed);
            } catch (const std::exception& e) {
                r = ReplicationResult{};
                r.rep = rep;
                r.ok = false;
                r.error = e.what();
                std::cerr << "experiment: replication " << rep << " failed: " << e.what() << "\n";
            }
            if (!ckpt.empty()) {
                std::ofstream out(ckpt);
                out << replication_to_json(r).dump(2) << "\n";
            }
        }
        if (r.ok) ++report.completed;
        report.replications.push_back(std::move(r));
    }

    // Aggregates over completed replications.
    std::vector<double> v_init, v_sparse, v_tilde;
    for (const auto& r : report.replications) {
        if (!r.ok) continue;
        v_init.push_back(r.value_initial);
        v_sparse.push_back(r.value_sparse);
        v_tilde.push_back(r.value_onestep);
    }
    if (!v_init.empty()) {
        report.mean_value_initial = std::accumulate(v_init.begin(), v_init.end(), 0.0) / v_init.size();
        report.sd_value_initial = sample_sd(v_init, report.mean_value_initial);
        report.mean_value_sparse = std::accumulate(v_sparse.begin(), v_sparse.end(), 0.0) / v_sparse.size();
        report.sd_value_sparse = sample_sd(v_sparse, report.mean_value_sparse);
        report.mean_value_onestep = std::accumulate(v_tilde.begin(), v_tilde.end(), 0.0) / v_tilde.size();
        report.sd_value_onestep = sample_sd(v_tilde, report.mean_value_onestep);
    }

    VectorXd star = true_theta(spec);
    const int d = spec.d;
    std::vector<double> est_mad(static_cast<std::size_t>(d), 0.0);
    std::vector<double> emp_mad(static_cast<std::size_t>(d), 0.0);
    std::vector<double> coverage(static_cast<std::size_t>(d), 0.0);
    if (report.completed > 0) {
        for (int jj = 0; jj < d; ++jj) {
            std::vector<double> mads, tildes;
            int covered = 0;
            for (const auto& r : report.replications) {
                if (!r.ok) continue;
                mads.push_back(r.estimated_mad[static_cast<std::size_t>(jj)]);
                const auto& o = r.inference[static_cast<std::size_t>(jj)];
                tildes.push_back(std::abs(o.theta_tilde - star[jj + 1]));
                if (o.ci_low <= star[jj + 1] && star[jj + 1] <= o.ci_high) ++covered;
            }
            est_mad[static_cast<std::size_t>(jj)] =
                std::accumulate(mads.begin(), mads.end(), 0.0) / mads.size();
            std::sort(tildes.begin(), tildes.end());
            std::size_t m = tildes.size();
            emp_mad[static_cast<std::size_t>(jj)] =
                m % 2 == 1 ? tildes[m / 2] : 0.5 * (tildes[m / 2 - 1] + tildes[m / 2]);
            coverage[static_cast<std::size_t>(jj)] =
                static_cast<double>(covered) / static_cast<double>(report.completed);
        }
    }
    auto group = [&](int lo, int hi) {  // inclusive 0-based slope range
        GroupSummary g;
        int count = hi - lo + 1;
        for (int jj = lo; jj <= hi; ++jj) {
            g.estimated_mad += est_mad[static_cast<std::size_t>(jj)] / count;
            g.empirical_mad += emp_mad[static_cast<std::size_t>(jj)] / count;
            g.coverage += coverage[static_cast<std::size_t>(jj)] / count;
        }
        return g;
    };
    report.theta1 = group(0, 0);
    report.theta2 = group(1, 1);
    report.rest = d > 2 ? group(2, d - 1) : GroupSummary{};
    return report;
}

void save_report_csv(const ExperimentReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << "metric,group,value\n";
    out << "attempted,," << report.attempted << "\n";
    out << "completed,," << report.completed << "\n";
    out << "mean_value,initial," << format_double(report.mean_value_initial) << "\n";
    out << "sd_value,initial," << format_double(report.sd_value_initial) << "\n";
    out << "mean_value,sparse," << format_double(report.mean_value_sparse) << "\n";
    out << "sd_value,sparse," << format_double(report.sd_value_sparse) << "\n";
    out << "mean_value,onestep," << format_double(report.mean_value_onestep) << "\n";
    out << "sd_value,onestep," << format_double(report.sd_value_onestep) << "\n";
    auto emit = [&](const char* name, const GroupSummary& g) {
        out << "estimated_mad," << name << ',' << format_double(g.estimated_mad) << "\n";
        out << "empirical_mad," << name << ',' << format_double(g.empirical_mad) << "\n";
        out << "coverage," << name << ',' << format_double(g.coverage) << "\n";
    };
    emit("theta1", report.theta1);
    emit("theta2", report.theta2);
    emit("theta_rest", report.rest);
}

void save_report_text(const ExperimentReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << "Scenario " << report.spec.scenario << ", T=" << report.spec.T
        << ", n=" << report.spec.n << ", d=" << report.spec.d
        << ", Q-variant=" << report.method.q_variant << "\n";
    out << "Replications: " << report.completed << "/" << report.attempted << " completed\n\n";
    out << "Value (mean (sd)):\n";
    char buf[128];
    std::snprintf(buf, sizeof buf, "  initial  %.4f (%.4f)\n", report.mean_value_initial, report.sd_value_initial);
    out << buf;
    std::snprintf(buf, sizeof buf, "  sparse   %.4f (%.4f)\n", report.mean_value_sparse, report.sd_value_sparse);
    out << buf;
    std::snprintf(buf, sizeof buf, "  one-step %.4f (%.4f)\n", report.mean_value_onestep, report.sd_value_onestep);
    out << buf;
    out << "\n              theta_1   theta_2   theta_3:d\n";
    std::snprintf(buf, sizeof buf, "MAD est.    %8.4f  %8.4f  %8.4f\n",
                  report.theta1.estimated_mad, report.theta2.estimated_mad, report.rest.estimated_mad);
    out << buf;
    std::snprintf(buf, sizeof buf, "MAD emp.    %8.4f  %8.4f  %8.4f\n",
                  report.theta1.empirical_mad, report.theta2.empirical_mad, report.rest.empirical_mad);
    out << buf;
    std::snprintf(buf, sizeof buf, "CP          %8.2f  %8.2f  %8.2f\n",
                  report.theta1.coverage, report.theta2.coverage, report.rest.coverage);
    out << buf;
}

}  // namespace mstp
