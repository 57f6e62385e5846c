#include "mstp/policy.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace mstp {

VectorXd normalize_to_sphere(const VectorXd& v) {
    double norm = v.norm();
    if (!(norm > 0.0) || !std::isfinite(norm))
        throw NumericError("cannot normalize a zero or non-finite vector");
    return v / norm;
}

double linear_index(const PolicyParams& p, const VectorXd& x) {
    if (x.size() + 1 != p.theta.size())
        throw ConfigError("feature length does not match policy dimension");
    return p.theta[0] + p.theta.tail(x.size()).dot(x);
}

double action_probability(const PolicyParams& p, const VectorXd& x, int a) {
    if (a != 1 && a != -1) throw ConfigError("action must be -1 or +1");
    double u = static_cast<double>(a) * linear_index(p, x) / p.tau;
    return logistic(u);
}

int sample_action(const PolicyParams& p, const VectorXd& x, Rng& rng) {
    double prob_plus = action_probability(p, x, 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    return unif(rng) < prob_plus ? 1 : -1;
}

void save_policy(const PolicyParams& p, const std::string& path) {
    nlohmann::ordered_json j;
    j["tau"] = format_double(p.tau);
    auto arr = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < p.theta.size(); ++i) arr.push_back(format_double(p.theta[i]));
    j["theta"] = arr;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write policy file: " + path);
    out << j.dump(2) << "\n";
}

PolicyParams load_policy(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open policy file: " + path);
    nlohmann::json j;
    in >> j;
    PolicyParams p;
    p.tau = std::stod(j.at("tau").get<std::string>());
    const auto& arr = j.at("theta");
    p.theta.resize(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i)
        p.theta[static_cast<Eigen::Index>(i)] = std::stod(arr[i].get<std::string>());
    if (!(p.tau > 0.0)) throw DataError("policy file: tau must be positive");
    return p;
}

}  // namespace mstp
