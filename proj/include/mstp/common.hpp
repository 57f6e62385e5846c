#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace mstp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Error categories map onto distinct CLI exit codes.
enum class ErrorKind { Config, Data, Numeric, Convergence };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};
struct DataError : Error {
    explicit DataError(const std::string& m) : Error(ErrorKind::Data, m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error(ErrorKind::Numeric, m) {}
};
struct ConvergenceError : Error {
    explicit ConvergenceError(const std::string& m) : Error(ErrorKind::Convergence, m) {}
};

// splitmix64; used to derive independent rng streams from one root seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d649bb133111ebULL;
    return x ^ (x >> 31);
}

// Named stream derivation: component tag plus up to two indices.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = root;
    for (char c : tag) h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::string_view tag,
                    std::uint64_t a = 0, std::uint64_t b = 0) {
    return Rng(derive_seed(root, tag, a, b));
}

// sgn with the sgn(0) := +1 tie-break used throughout.
inline double sgn(double x) { return x < 0.0 ? -1.0 : 1.0; }

// Deterministic parallel map: results are indexed by work item, so the
// aggregation order never depends on thread scheduling.
void parallel_for(int count, const std::function<void(int)>& fn, int threads = 0);

// 17-significant-digit float formatting shared by all file writers.
std::string format_double(double v);

}  // namespace mstp
