#pragma once

#include "mstp/common.hpp"

#include <string>
#include <utility>
#include <vector>

namespace mstp {

// One subject-stage observation: features, action in {-1,+1}, reward and the
// behavior probability of the observed action.
struct StageRecord {
    VectorXd x;
    int a = 1;
    double r = 0.0;
    double mu = 0.5;
};

struct Trajectory {
    std::vector<StageRecord> stages;
};

// n i.i.d. trajectories with a common horizon and feature dimension.
// Immutable after construction; safe to share read-only across workers.
struct Dataset {
    std::vector<Trajectory> trajectories;
    int d = 0;
    int horizon = 0;  // T

    int n() const { return static_cast<int>(trajectories.size()); }
};

// Checks the invariants (action domain, positivity, rectangular shape).
// Throws DataError on violation.
void validate_dataset(const Dataset& ds);

// CSV schema: header `subject,stage,a,r,mu,x1,...,xd`; stages 1..T contiguous
// per subject. The writer emits 17-significant-digit floats.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

// Subject-level subset (used by folds and bootstrap resampling).
Dataset subset(const Dataset& ds, const std::vector<int>& subjects);

using FoldSplit = std::pair<std::vector<int>, std::vector<int>>;  // (train, validation)

// Deterministic k-fold split by subject; fold sizes differ by at most one.
std::vector<FoldSplit> split_folds(const Dataset& ds, int k, std::uint64_t seed);

}  // namespace mstp
