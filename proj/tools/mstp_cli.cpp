// Batch front end: simulate | estimate | infer | oracle | evaluate | experiment.
// Every command writes its outputs plus a manifest.json with the fully
// resolved configuration, so a run can be reproduced bit-identically.

#include "mstp/data_model.hpp"
#include "mstp/importance.hpp"
#include "mstp/inference.hpp"
#include "mstp/nuisance.hpp"
#include "mstp/optimizer.hpp"
#include "mstp/policy.hpp"
#include "mstp/simulation.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace {

constexpr const char* kVersion = "mstp 1.0.0";

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void write_manifest(const std::string& out_dir, const ordered_json& config) {
    ordered_json manifest;
    manifest["version"] = kVersion;
    manifest["config"] = config;
    std::ofstream out(join_path(out_dir, "manifest.json"));
    if (!out) throw mstp::DataError("cannot write manifest in " + out_dir);
    out << manifest.dump(2) << "\n";
}

int exit_code(const mstp::Error& e) {
    switch (e.kind()) {
        case mstp::ErrorKind::Config: return 2;
        case mstp::ErrorKind::Data: return 3;
        case mstp::ErrorKind::Numeric: return 4;
        case mstp::ErrorKind::Convergence: return 5;
    }
    return 1;
}

struct ScenarioOptions {
    int scenario = 2;
    int n = 100;
    int d = 10;
    int T = 1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--scenario", scenario, "Generator scenario (1 or 2)")->capture_default_str();
        cmd->add_option("-n,--subjects", n, "Number of subjects")->capture_default_str();
        cmd->add_option("-d,--dim", d, "State dimension")->capture_default_str();
        cmd->add_option("-T,--horizon", T, "Number of stages")->capture_default_str();
    }
    mstp::ScenarioSpec spec(std::uint64_t seed) const {
        mstp::ScenarioSpec s;
        s.scenario = scenario;
        s.n = n;
        s.d = d;
        s.T = T;
        s.seed = seed;
        return s;
    }
    void echo(ordered_json& j) const {
        j["scenario"] = scenario;
        j["n"] = n;
        j["d"] = d;
        j["T"] = T;
    }
};

struct MethodOptions {
    std::string q_variant = "q1";
    double tau = 0.1;
    int cv_folds = 5;
    int lambda_w_folds = 5;
    int B = 100;
    double alpha = 0.05;
    int n_test = 10000;

    void attach(CLI::App* cmd) {
        cmd->add_option("--q-variant", q_variant, "Q-model variant: q0, q1 or q2")
            ->check(CLI::IsMember({"q0", "q1", "q2"}))
            ->capture_default_str();
        cmd->add_option("--tau", tau, "Policy temperature")->capture_default_str();
        cmd->add_option("--folds", cv_folds, "Cross-validation folds")->capture_default_str();
        cmd->add_option("--lambda-w-folds", lambda_w_folds, "Folds for the decorrelation penalty")
            ->capture_default_str();
        cmd->add_option("-B,--bootstrap", B, "Bootstrap replicates")->capture_default_str();
        cmd->add_option("--alpha", alpha, "Confidence level complement")->capture_default_str();
        cmd->add_option("--n-test", n_test, "Monte Carlo evaluation rollouts")->capture_default_str();
    }
    mstp::MethodConfig method(int threads) const {
        mstp::MethodConfig m;
        m.q_variant = q_variant;
        m.tau = tau;
        m.opt.cv_folds = cv_folds;
        m.q_cv_folds = cv_folds;
        m.lambda_w_folds = lambda_w_folds;
        m.B = B;
        m.alpha = alpha;
        m.n_test = n_test;
        m.threads = threads;
        return m;
    }
    void echo(ordered_json& j) const {
        j["q_variant"] = q_variant;
        j["tau"] = tau;
        j["folds"] = cv_folds;
        j["lambda_w_folds"] = lambda_w_folds;
        j["B"] = B;
        j["alpha"] = alpha;
        j["n_test"] = n_test;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse stationary treatment-policy estimation and inference"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Plain-text config file (INI/TOML keys match option names)");

    std::string out_dir = ".";
    std::uint64_t seed = 0;
    int threads = 1;
    app.add_option("-o,--out", out_dir, "Output directory")->capture_default_str();
    app.add_option("--seed", seed, "Root seed; all randomness derives from it")->capture_default_str();
    app.add_option("--threads", threads, "Worker pool size")->capture_default_str();

    std::function<void()> run;

    // simulate
    {
        auto* cmd = app.add_subcommand("simulate", "Generate a scenario dataset CSV");
        cmd->fallthrough();
        auto scen = std::make_shared<ScenarioOptions>();
        scen->attach(cmd);
        cmd->callback([&, scen, cmd]() {
            run = [&, scen]() {
                mstp::ScenarioSpec spec = scen->spec(seed);
                mstp::Dataset ds = mstp::generate(spec);
                fs::create_directories(out_dir);
                mstp::save_dataset(ds, join_path(out_dir, "dataset.csv"));
                ordered_json cfg;
                cfg["command"] = "simulate";
                scen->echo(cfg);
                cfg["seed"] = seed;
                write_manifest(out_dir, cfg);
            };
        });
    }

    // estimate
    {
        auto* cmd = app.add_subcommand("estimate", "Initial + sparse policy estimation");
        cmd->fallthrough();
        auto data_path = std::make_shared<std::string>();
        auto meth = std::make_shared<MethodOptions>();
        cmd->add_option("--data", *data_path, "Input dataset CSV")->required();
        meth->attach(cmd);
        cmd->callback([&, data_path, meth]() {
            run = [&, data_path, meth]() {
                mstp::Dataset ds = mstp::load_dataset(*data_path);
                mstp::MethodConfig m = meth->method(threads);
                mstp::OptimizerConfig oc = m.opt;

                oc.seed = mstp::derive_seed(seed, "cli-init");
                mstp::SparseEstimate initial = mstp::estimate_initial(ds, m.tau, oc);

                mstp::BasisSpec basis{mstp::BasisSpec::Kind::Linear, ds.d};
                mstp::QModel q;
                if (m.q_variant == "q0") {
                    q = mstp::make_zero_qmodel(basis, ds.horizon);
                } else if (m.q_variant == "q1") {
                    q = mstp::fit_q_regression(ds, basis, m.q_cv_folds,
                                               mstp::derive_seed(seed, "cli-q"), {});
                } else {
                    mstp::PolicyParams p{initial.theta, m.tau};
                    mstp::RatioTable ratios = mstp::compute_ratios(p, ds);
                    q = mstp::fit_q_variance_min(ds, basis, p, ratios, m.q_cv_folds,
                                                 mstp::derive_seed(seed, "cli-q"), {});
                }

                mstp::SparseEstimate sparse = initial;
                if (m.q_variant != "q0") {
                    oc.seed = mstp::derive_seed(seed, "cli-sparse");
                    sparse = mstp::estimate_sparse(ds, q, m.tau, oc);
                }

                fs::create_directories(out_dir);
                mstp::save_policy({initial.theta, m.tau}, join_path(out_dir, "policy_initial.json"));
                mstp::save_policy({sparse.theta, m.tau}, join_path(out_dir, "policy_sparse.json"));
                mstp::save_qmodel(q, join_path(out_dir, "qmodel.json"));
                ordered_json extras;
                extras["lambda_theta_initial"] = mstp::format_double(initial.lambda);
                extras["lambda_theta_sparse"] = mstp::format_double(sparse.lambda);
                std::ofstream estf(join_path(out_dir, "estimate.json"));
                estf << extras.dump(2) << "\n";

                ordered_json cfg;
                cfg["command"] = "estimate";
                cfg["data"] = *data_path;
                meth->echo(cfg);
                cfg["seed"] = seed;
                cfg["threads"] = threads;
                write_manifest(out_dir, cfg);
            };
        });
    }

    // infer
    {
        auto* cmd = app.add_subcommand("infer", "One-step estimates with bootstrap CIs");
        cmd->fallthrough();
        auto data_path = std::make_shared<std::string>();
        auto policy_path = std::make_shared<std::string>();
        auto qmodel_path = std::make_shared<std::string>();
        auto lambda_theta = std::make_shared<double>(0.0);
        auto lambda_w = std::make_shared<double>(-1.0);
        auto meth = std::make_shared<MethodOptions>();
        cmd->add_option("--data", *data_path, "Input dataset CSV")->required();
        cmd->add_option("--policy", *policy_path, "Sparse policy JSON")->required();
        cmd->add_option("--qmodel", *qmodel_path, "Fitted Q-model JSON")->required();
        cmd->add_option("--lambda-theta", *lambda_theta, "Sparsity penalty frozen in the bootstrap")
            ->capture_default_str();
        cmd->add_option("--lambda-w", *lambda_w, "Decorrelation penalty; negative means tune by CV")
            ->capture_default_str();
        meth->attach(cmd);
        cmd->callback([&, data_path, policy_path, qmodel_path, lambda_theta, lambda_w, meth]() {
            run = [&, data_path, policy_path, qmodel_path, lambda_theta, lambda_w, meth]() {
                mstp::Dataset ds = mstp::load_dataset(*data_path);
                mstp::PolicyParams p = mstp::load_policy(*policy_path);
                mstp::QModel q = mstp::load_qmodel(*qmodel_path);
                mstp::MethodConfig m = meth->method(threads);

                double lw = *lambda_w;
                if (lw < 0.0)
                    lw = mstp::tune_lambda_w(ds, p.theta, q, m.tau, m.lambda_w_folds,
                                             mstp::default_lambda_w_grid(),
                                             mstp::derive_seed(seed, "cli-lw"));

                mstp::BootstrapOptions bo;
                bo.B = m.B;
                bo.alpha = m.alpha;
                bo.seed = mstp::derive_seed(seed, "cli-boot");
                bo.lambda_theta = *lambda_theta;
                bo.lambda_w = lw;
                bo.threads = threads;
                auto results = mstp::bootstrap_inference(ds, p.theta, q, m.tau, bo);

                fs::create_directories(out_dir);
                mstp::save_inference(results, m.B, seed, join_path(out_dir, "inference.csv"));

                ordered_json cfg;
                cfg["command"] = "infer";
                cfg["data"] = *data_path;
                cfg["policy"] = *policy_path;
                cfg["qmodel"] = *qmodel_path;
                cfg["lambda_theta"] = *lambda_theta;
                cfg["lambda_w"] = lw;
                meth->echo(cfg);
                cfg["seed"] = seed;
                cfg["threads"] = threads;
                write_manifest(out_dir, cfg);
            };
        });
    }

    // oracle
    {
        auto* cmd = app.add_subcommand("oracle", "Grid-search the value-optimal policy vector");
        cmd->fallthrough();
        auto scen = std::make_shared<ScenarioOptions>();
        auto step = std::make_shared<double>(0.05);
        auto n_test = std::make_shared<int>(50000);
        auto repeats = std::make_shared<int>(4);
        auto tau = std::make_shared<double>(0.1);
        scen->attach(cmd);
        cmd->add_option("--step", *step, "Slope grid step")->capture_default_str();
        cmd->add_option("--n-test", *n_test, "Rollouts per repeat")->capture_default_str();
        cmd->add_option("--repeats", *repeats, "Independent repeats averaged")->capture_default_str();
        cmd->add_option("--tau", *tau, "Policy temperature")->capture_default_str();
        cmd->callback([&, scen, step, n_test, repeats, tau]() {
            run = [&, scen, step, n_test, repeats, tau]() {
                mstp::ScenarioSpec spec = scen->spec(seed);
                mstp::VectorXd theta = mstp::grid_oracle(spec, *step, *n_test, *repeats, *tau, threads);
                fs::create_directories(out_dir);
                mstp::save_policy({theta, *tau}, join_path(out_dir, "oracle.json"));
                ordered_json cfg;
                cfg["command"] = "oracle";
                scen->echo(cfg);
                cfg["step"] = *step;
                cfg["n_test"] = *n_test;
                cfg["repeats"] = *repeats;
                cfg["tau"] = *tau;
                cfg["seed"] = seed;
                write_manifest(out_dir, cfg);
            };
        });
    }

    // evaluate
    {
        auto* cmd = app.add_subcommand("evaluate", "Monte Carlo value of a stored policy");
        cmd->fallthrough();
        auto scen = std::make_shared<ScenarioOptions>();
        auto policy_path = std::make_shared<std::string>();
        auto n_test = std::make_shared<int>(10000);
        scen->attach(cmd);
        cmd->add_option("--policy", *policy_path, "Policy JSON")->required();
        cmd->add_option("--n-test", *n_test, "Rollouts")->capture_default_str();
        cmd->callback([&, scen, policy_path, n_test]() {
            run = [&, scen, policy_path, n_test]() {
                mstp::ScenarioSpec spec = scen->spec(0);
                mstp::PolicyParams p = mstp::load_policy(*policy_path);
                auto [mean, se] = mstp::mc_value(p, spec, *n_test,
                                                 mstp::derive_seed(seed, "cli-value"), threads);
                fs::create_directories(out_dir);
                ordered_json result;
                result["value"] = mstp::format_double(mean);
                result["se"] = mstp::format_double(se);
                std::ofstream vf(join_path(out_dir, "value.json"));
                vf << result.dump(2) << "\n";
                ordered_json cfg;
                cfg["command"] = "evaluate";
                scen->echo(cfg);
                cfg["policy"] = *policy_path;
                cfg["n_test"] = *n_test;
                cfg["seed"] = seed;
                write_manifest(out_dir, cfg);
            };
        });
    }

    // experiment
    {
        auto* cmd = app.add_subcommand("experiment", "Replicated end-to-end evaluation harness");
        cmd->fallthrough();
        auto scen = std::make_shared<ScenarioOptions>();
        auto meth = std::make_shared<MethodOptions>();
        auto replications = std::make_shared<int>(20);
        scen->attach(cmd);
        meth->attach(cmd);
        cmd->add_option("--replications", *replications, "Pipeline replications")->capture_default_str();
        cmd->callback([&, scen, meth, replications]() {
            run = [&, scen, meth, replications]() {
                fs::create_directories(out_dir);
                mstp::ScenarioSpec spec = scen->spec(seed);
                mstp::MethodConfig m = meth->method(threads);
                m.checkpoint_dir = join_path(out_dir, "checkpoints");
                mstp::ExperimentReport report = mstp::run_experiment(spec, m, *replications, seed);
                mstp::save_report_csv(report, join_path(out_dir, "report.csv"));
                mstp::save_report_text(report, join_path(out_dir, "report.txt"));
                ordered_json cfg;
                cfg["command"] = "experiment";
                scen->echo(cfg);
                meth->echo(cfg);
                cfg["replications"] = *replications;
                cfg["seed"] = seed;
                cfg["threads"] = threads;
                write_manifest(out_dir, cfg);
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        run();
    } catch (const mstp::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
