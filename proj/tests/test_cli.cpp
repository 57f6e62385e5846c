#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

#ifndef MSTP_CLI_PATH
#error "MSTP_CLI_PATH must be defined by the build"
#endif

int run_cli(const std::string& args) {
    std::string cmd = std::string(MSTP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int line_count(const fs::path& path) {
    std::ifstream in(path);
    int count = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++count;
    return count;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::path("cli_test") / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

// Split a CSV row into fields.
std::vector<std::string> fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

TEST_CASE("simulate writes the expected number of rows") {
    TempDir dir("simulate");
    REQUIRE(run_cli("simulate -o " + dir.str() + " --seed 3 -n 10 -d 3 -T 1") == 0);
    CHECK(line_count(dir.path / "dataset.csv") == 11);  // header + n*T
    CHECK(fs::exists(dir.path / "manifest.json"));

    TempDir dir3("simulate3");
    REQUIRE(run_cli("simulate -o " + dir3.str() + " --seed 3 -n 10 -d 3 -T 3") == 0);
    CHECK(line_count(dir3.path / "dataset.csv") == 31);
}

TEST_CASE("simulate is byte-identical across reruns") {
    TempDir a("rerun_a"), b("rerun_b");
    REQUIRE(run_cli("simulate -o " + a.str() + " --seed 42 -n 15 -d 4 -T 2") == 0);
    REQUIRE(run_cli("simulate -o " + b.str() + " --seed 42 -n 15 -d 4 -T 2") == 0);
    CHECK(slurp(a.path / "dataset.csv") == slurp(b.path / "dataset.csv"));
    CHECK(slurp(a.path / "manifest.json") == slurp(b.path / "manifest.json"));
}

TEST_CASE("estimate with the zero q-variant returns the initial policy") {
    TempDir data("q0_data"), est("q0_est");
    REQUIRE(run_cli("simulate -o " + data.str() + " --seed 7 -n 60 -d 3 -T 1") == 0);
    REQUIRE(run_cli("estimate -o " + est.str() + " --seed 7 --data " +
                    (data.path / "dataset.csv").string() + " --q-variant q0") == 0);
    CHECK(slurp(est.path / "policy_initial.json") == slurp(est.path / "policy_sparse.json"));
}

TEST_CASE("full estimate-evaluate-infer chain runs and is seed-deterministic") {
    TempDir data("chain_data"), est("chain_est"), inf1("chain_inf1"), inf2("chain_inf2");
    REQUIRE(run_cli("simulate -o " + data.str() + " --seed 11 -n 50 -d 3 -T 1") == 0);
    std::string dataset = (data.path / "dataset.csv").string();
    REQUIRE(run_cli("estimate -o " + est.str() + " --seed 11 --data " + dataset +
                    " --q-variant q1") == 0);
    CHECK(fs::exists(est.path / "policy_sparse.json"));
    CHECK(fs::exists(est.path / "qmodel.json"));

    TempDir val("chain_val");
    REQUIRE(run_cli("evaluate -o " + val.str() + " --seed 11 --scenario 2 -d 3 -T 1 --policy " +
                    (est.path / "policy_sparse.json").string() + " --n-test 500") == 0);
    CHECK(fs::exists(val.path / "value.json"));

    std::string infer_args = " --seed 11 --data " + dataset + " --policy " +
                             (est.path / "policy_sparse.json").string() + " --qmodel " +
                             (est.path / "qmodel.json").string() +
                             " --lambda-theta 0.02 --lambda-w 0.3 -B 2";
    REQUIRE(run_cli("infer -o " + inf1.str() + infer_args) == 0);
    REQUIRE(run_cli("infer -o " + inf2.str() + infer_args) == 0);
    CHECK(slurp(inf1.path / "inference.csv") == slurp(inf2.path / "inference.csv"));
}

TEST_CASE("wider alpha gives nested bootstrap intervals") {
    TempDir data("alpha_data"), est("alpha_est"), a05("alpha_05"), a50("alpha_50");
    REQUIRE(run_cli("simulate -o " + data.str() + " --seed 13 -n 50 -d 3 -T 1") == 0);
    std::string dataset = (data.path / "dataset.csv").string();
    REQUIRE(run_cli("estimate -o " + est.str() + " --seed 13 --data " + dataset +
                    " --q-variant q0") == 0);
    std::string common = " --seed 13 --data " + dataset + " --policy " +
                         (est.path / "policy_sparse.json").string() + " --qmodel " +
                         (est.path / "qmodel.json").string() +
                         " --lambda-theta 0.02 --lambda-w 0.3 -B 20";
    REQUIRE(run_cli("infer -o " + a05.str() + common + " --alpha 0.05") == 0);
    REQUIRE(run_cli("infer -o " + a50.str() + common + " --alpha 0.5") == 0);

    std::ifstream f05(a05.path / "inference.csv"), f50(a50.path / "inference.csv");
    std::string h, l05, l50;
    std::getline(f05, h);
    std::getline(f50, h);
    while (std::getline(f05, l05) && std::getline(f50, l50)) {
        auto a = fields(l05), b = fields(l50);
        double lo05 = std::stod(a[3]), hi05 = std::stod(a[4]);
        double lo50 = std::stod(b[3]), hi50 = std::stod(b[4]);
        CHECK(lo50 >= lo05);
        CHECK(hi50 <= hi05);
    }
}

TEST_CASE("oracle writes a unit-norm vector") {
    TempDir dir("oracle");
    REQUIRE(run_cli("oracle -o " + dir.str() +
                    " --seed 5 --scenario 2 -d 2 -T 1 --step 1.0 --n-test 500 --repeats 1") == 0);
    CHECK(fs::exists(dir.path / "oracle.json"));
    CHECK(fs::exists(dir.path / "manifest.json"));
}

TEST_CASE("experiment produces the report and resumes from checkpoints") {
    TempDir dir("experiment");
    std::string args = "experiment -o " + dir.str() +
                       " --seed 2 --scenario 2 -n 40 -d 3 -T 1 --replications 1 -B 2 "
                       "--n-test 300 --q-variant q0";
    REQUIRE(run_cli(args) == 0);
    CHECK(fs::exists(dir.path / "report.csv"));
    CHECK(fs::exists(dir.path / "report.txt"));
    CHECK(fs::exists(dir.path / "checkpoints" / "rep_0.json"));
    std::string report = slurp(dir.path / "report.csv");
    CHECK(report.find("metric,group,value") == 0);
    CHECK(report.find("coverage,theta1,") != std::string::npos);

    fs::remove(dir.path / "report.csv");
    REQUIRE(run_cli(args) == 0);  // resumes from rep_0.json
    CHECK(slurp(dir.path / "report.csv") == report);
}

TEST_CASE("error classes map to distinct exit codes") {
    TempDir dir("errors");
    CHECK(run_cli("no-such-command") == 2);
    CHECK(run_cli("simulate -o " + dir.str() + " --scenario 9") == 2);          // config
    CHECK(run_cli("estimate -o " + dir.str() + " --data missing.csv") == 3);    // data
    CHECK(run_cli("--help") == 0);
}
