#include "mstp/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mstp {

namespace {

void validate_record(const StageRecord& s, int d, const std::string& where) {
    if (s.a != 1 && s.a != -1) throw DataError(where + ": action must be -1 or +1");
    if (!(s.mu > 0.0) || s.mu > 1.0)
        throw DataError(where + ": behavior probability outside (0,1] (positivity violation)");
    if (!std::isfinite(s.r)) throw DataError(where + ": non-finite reward");
    if (s.x.size() != d) throw DataError(where + ": feature dimension mismatch");
    for (int j = 0; j < d; ++j)
        if (!std::isfinite(s.x[j])) throw DataError(where + ": non-finite feature");
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void validate_dataset(const Dataset& ds) {
    if (ds.n() < 2) throw DataError("dataset needs at least 2 subjects");
    if (ds.horizon < 1) throw DataError("horizon must be >= 1");
    for (int i = 0; i < ds.n(); ++i) {
        const auto& traj = ds.trajectories[static_cast<std::size_t>(i)];
        if (static_cast<int>(traj.stages.size()) != ds.horizon)
            throw DataError("subject " + std::to_string(i) + ": horizon mismatch");
        for (int t = 0; t < ds.horizon; ++t)
            validate_record(traj.stages[static_cast<std::size_t>(t)], ds.d,
                            "subject " + std::to_string(i) + " stage " + std::to_string(t + 1));
    }
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty dataset file: " + path);
    auto header = split_csv_line(line);
    if (header.size() < 6 || header[0] != "subject" || header[1] != "stage" ||
        header[2] != "a" || header[3] != "r" || header[4] != "mu")
        throw DataError("schema error: expected header subject,stage,a,r,mu,x1,...,xd");
    int d = static_cast<int>(header.size()) - 5;
    for (int j = 0; j < d; ++j)
        if (header[static_cast<std::size_t>(5 + j)] != "x" + std::to_string(j + 1))
            throw DataError("schema error: feature column " + std::to_string(j + 1));

    struct Row {
        long subject;
        int stage;
        StageRecord rec;
    };
    std::vector<Row> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (static_cast<int>(f.size()) != 5 + d)
            throw DataError("schema error: wrong column count at line " + std::to_string(lineno));
        Row row;
        try {
            row.subject = std::stol(f[0]);
            row.stage = std::stoi(f[1]);
            row.rec.a = std::stoi(f[2]);
            row.rec.r = std::stod(f[3]);
            row.rec.mu = std::stod(f[4]);
            row.rec.x.resize(d);
            for (int j = 0; j < d; ++j) row.rec.x[j] = std::stod(f[static_cast<std::size_t>(5 + j)]);
        } catch (const std::exception&) {
            throw DataError("schema error: unparsable field at line " + std::to_string(lineno));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("dataset has no rows: " + path);

    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        return a.subject != b.subject ? a.subject < b.subject : a.stage < b.stage;
    });

    Dataset ds;
    ds.d = d;
    std::size_t i = 0;
    while (i < rows.size()) {
        long subj = rows[i].subject;
        Trajectory traj;
        int expected = 1;
        while (i < rows.size() && rows[i].subject == subj) {
            if (rows[i].stage != expected)
                throw DataError("malformed trajectory: subject " + std::to_string(subj) +
                                " stages not contiguous from 1");
            traj.stages.push_back(std::move(rows[i].rec));
            ++expected;
            ++i;
        }
        ds.trajectories.push_back(std::move(traj));
    }
    ds.horizon = static_cast<int>(ds.trajectories.front().stages.size());
    validate_dataset(ds);
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path);
    out << "subject,stage,a,r,mu";
    for (int j = 1; j <= ds.d; ++j) out << ",x" << j;
    out << "\n";
    for (int i = 0; i < ds.n(); ++i) {
        const auto& traj = ds.trajectories[static_cast<std::size_t>(i)];
        for (int t = 0; t < ds.horizon; ++t) {
            const auto& s = traj.stages[static_cast<std::size_t>(t)];
            out << (i + 1) << ',' << (t + 1) << ',' << s.a << ',' << format_double(s.r) << ','
                << format_double(s.mu);
            for (int j = 0; j < ds.d; ++j) out << ',' << format_double(s.x[j]);
            out << "\n";
        }
    }
    if (!out) throw DataError("write failed: " + path);
}

Dataset subset(const Dataset& ds, const std::vector<int>& subjects) {
    Dataset out;
    out.d = ds.d;
    out.horizon = ds.horizon;
    out.trajectories.reserve(subjects.size());
    for (int i : subjects) {
        if (i < 0 || i >= ds.n()) throw DataError("subset index out of range");
        out.trajectories.push_back(ds.trajectories[static_cast<std::size_t>(i)]);
    }
    return out;
}

std::vector<FoldSplit> split_folds(const Dataset& ds, int k, std::uint64_t seed) {
    int n = ds.n();
    if (k < 2 || k > n) throw ConfigError("fold count must satisfy 2 <= k <= n");
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_rng(seed, "folds");
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        // Fold f validates on positions f, f+k, f+2k, ... of the permutation.
        auto& [train, val] = folds[static_cast<std::size_t>(f)];
        for (int pos = 0; pos < n; ++pos) {
            if (pos % k == f)
                val.push_back(perm[static_cast<std::size_t>(pos)]);
            else
                train.push_back(perm[static_cast<std::size_t>(pos)]);
        }
        std::sort(train.begin(), train.end());
        std::sort(val.begin(), val.end());
    }
    return folds;
}

}  // namespace mstp
