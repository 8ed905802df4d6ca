#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;

std::string fixture(const std::string& name) {
    return std::string(VISRT_DATA_DIR) + "/fixtures/" + name;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct CliRun {
    int code = -1;
    std::string out;
    std::string err;
};

/// Run the installed front end as a subprocess with stdout/stderr captured.
CliRun run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path dir = fs::temp_directory_path() / "visrt_cli_logs";
    fs::create_directories(dir);
    const fs::path out = dir / ("out" + std::to_string(++counter) + ".txt");
    const fs::path err = dir / ("err" + std::to_string(counter) + ".txt");
    const std::string cmd = std::string(VISRT_CLI_PATH) + " " + args + " > " + out.string() +
                            " 2> " + err.string();
    const int rc = std::system(cmd.c_str());
    CliRun r;
    r.code = (rc >= 0 && WIFEXITED(rc)) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

/// Fresh output directory for one test case.
fs::path work_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "visrt_cli_work" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

std::vector<std::string> csv_column(const std::string& csv, size_t index) {
    std::vector<std::string> out;
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) {
        std::istringstream cells(line);
        std::string cell;
        for (size_t i = 0; i <= index; ++i) std::getline(cells, cell, ',');
        out.push_back(cell);
    }
    return out;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("preprocess builds and caches the visibility index") {
    const fs::path dir = work_dir("pre");
    const CliRun r = run_cli("preprocess --scene " + fixture("two_buildings.json") +
                             " --order 1 --out " + dir.string());
    CHECK(r.code == 0);
    CHECK(contains(r.out, "order 1: 6 entries"));
    CHECK(contains(r.out, "total: 6 entries"));
    CHECK(contains(r.out, "matrix cache:"));
    CHECK(fs::exists(dir / "matrix.json"));
}

TEST_CASE("trace refuses to run without a path source") {
    const CliRun r = run_cli("trace --scene " + fixture("two_buildings.json") +
                             " --tx 3,15,2 --rx 7,16,3");
    CHECK(r.code == 2);
    CHECK(contains(r.err,
                   "need a matrix cache (--matrix), --brute, or --compare; run preprocess first"));
}

TEST_CASE("a cached matrix drives accelerated tracing") {
    const fs::path pre = work_dir("trace_pre");
    REQUIRE(run_cli("preprocess --scene " + fixture("two_buildings.json") + " --order 1 --out " +
                    pre.string())
                .code == 0);

    const fs::path out = work_dir("trace_out");
    const CliRun r = run_cli("trace --scene " + fixture("two_buildings.json") + " --matrix " +
                             (pre / "matrix.json").string() +
                             " --order 1 --tx 3,15,2 --rx 7,16,3 --out " + out.string());
    CHECK(r.code == 0);
    CHECK(contains(r.out, "5 paths"));
    CHECK(contains(r.out, "path loss:"));
    CHECK(contains(r.out, "rms delay spread:"));
    const std::string dump = slurp(out / "paths.txt");
    CHECK(dump.rfind("paths 5", 0) == 0);
    CHECK(contains(dump, "path 1 LOS"));  // dumps are sorted by identity
    const std::string stats = slurp(out / "stats.csv");
    CHECK(stats.rfind("index,path_loss_dB,rms_ds_ns,n_paths", 0) == 0);
}

TEST_CASE("a stale cache is rejected when its order is too low") {
    const fs::path pre = work_dir("stale_pre");
    REQUIRE(run_cli("preprocess --scene " + fixture("two_buildings.json") + " --order 1 --out " +
                    pre.string())
                .code == 0);
    const CliRun r = run_cli("trace --scene " + fixture("two_buildings.json") + " --matrix " +
                             (pre / "matrix.json").string() +
                             " --order 3 --tx 3,15,2 --rx 7,16,3 --out " + pre.string());
    CHECK(r.code == 2);
    CHECK(contains(r.err, "matrix order 1 is lower than the requested reflection order 3"));
}

TEST_CASE("the two tracers agree on a city pair") {
    const fs::path out = work_dir("compare");
    const CliRun r = run_cli("trace --scene " + fixture("manhattan.json") +
                             " --compare --order 3 --tx 5,25,2 --rx 25,62,5 --out " +
                             out.string());
    CHECK(r.code == 0);
    CHECK(contains(r.out, "0 differing paths"));
    CHECK(contains(r.out, "accelerated:"));
    CHECK(contains(r.out, "brute force:"));
}

TEST_CASE("flat ground resolves the classic pair of rays") {
    const fs::path out = work_dir("two_ray");
    const CliRun r = run_cli("trace --scene " + fixture("open_field.json") +
                             " --brute --order 1 --tx 10,50,10 --rx 90,50,1.5 --out " +
                             out.string());
    CHECK(r.code == 0);
    CHECK(contains(r.out, "2 paths"));
    const std::string dump = slurp(out / "paths.txt");
    CHECK(contains(dump, "path 0 LOS"));
    CHECK(contains(dump, "path 1 R:ground"));
}

TEST_CASE("a fully screened link reports an outage instead of failing") {
    const fs::path out = work_dir("outage");
    const CliRun r = run_cli("trace --scene " + fixture("screened_wall.json") +
                             " --brute --order 1 --tx 25,10,2 --rx 25,30,2 --out " +
                             out.string());
    CHECK(r.code == 0);
    CHECK(contains(r.out, "0 paths"));
    CHECK(contains(r.out, "outage: no ray reached the receiver"));
}

TEST_CASE("trajectory runs emit tables, coherence, and per-segment dumps") {
    const fs::path out = work_dir("dynamic");
    const CliRun r = run_cli("dynamic --scene " + fixture("screened_wall.json") + " --traj " +
                             fixture("route_corridor.json") + " --rx 25,60,2 --order 2 --out " +
                             out.string());
    CHECK(r.code == 0);
    CHECK(contains(r.out, "17 visibility ranges, 2 coherence segments"));
    CHECK(contains(r.out, "average coherence time: 2.5 s"));
    CHECK(contains(r.out, "22 samples, 2 full traces"));
    CHECK(slurp(out / "mobile_table.csv")
              .rfind("order,visible_node,s_start,s_end,parent,blockage", 0) == 0);
    CHECK(slurp(out / "coherence.csv").rfind("l,d_l,v_l,T_c_l", 0) == 0);
    CHECK(fs::exists(out / "segment_1_paths.txt"));
    CHECK(fs::exists(out / "segment_2_paths.txt"));
    CHECK_FALSE(fs::exists(out / "segment_3_paths.txt"));
}

TEST_CASE("bench work counters are reproducible for a fixed seed") {
    const fs::path a = work_dir("bench_a");
    const fs::path b = work_dir("bench_b");
    const std::string args = "bench --scene " + fixture("two_buildings.json") +
                             " --pairs 3 --order 2 --seed 7 --out ";
    REQUIRE(run_cli(args + a.string()).code == 0);
    REQUIRE(run_cli(args + b.string()).code == 0);

    const std::string csv_a = slurp(a / "bench.csv");
    const std::string csv_b = slurp(b / "bench.csv");
    CHECK(csv_a.rfind("order,matrix_ms,accel_query_ms,proposed_total_ms,brute_ms,reduction_pct,"
                      "accel_candidates,brute_candidates,paths",
                      0) == 0);
    CHECK(csv_column(csv_a, 0) == std::vector<std::string>{"1", "2"});
    // Timings wobble between runs; the candidate counts and found paths are
    // functions of the seed alone.
    for (size_t col : {6, 7, 8}) {
        CHECK(csv_column(csv_a, col) == csv_column(csv_b, col));
    }
}

TEST_CASE("route statistics aggregate into summary and distribution files") {
    const fs::path out = work_dir("stats");
    const CliRun r = run_cli("stats --scene " + fixture("open_field.json") +
                             " --tx 10,50,10 --traj " + fixture("route_corridor.json") +
                             " --order 1 --out " + out.string());
    CHECK(r.code == 0);
    CHECK(contains(r.out, "21 receiver points, 0 outages"));
    CHECK(contains(r.out, "median path loss: 72.7617 dB"));
    const std::string stats = slurp(out / "stats.csv");
    CHECK(stats.rfind("index,path_loss_dB,rms_ds_ns,n_paths", 0) == 0);
    CHECK(contains(stats, "0,72.908600,2.508016,2"));
    CHECK(slurp(out / "cdf_path_loss.csv").rfind("value,cum_prob", 0) == 0);
    CHECK(slurp(out / "cdf_rms_ds.csv").rfind("value,cum_prob", 0) == 0);
}

TEST_CASE("malformed invocations exit with a validation error") {
    CHECK(run_cli("explode").code == 2);
    CHECK(run_cli("preprocess --order 1").code == 2);  // scene missing
    CHECK(contains(run_cli("preprocess --order 1").err, "a scene file is required"));
    CHECK(run_cli("preprocess --scene " + fixture("two_buildings.json") + " --order 9").code ==
          2);
    const CliRun bad_point = run_cli("trace --scene " + fixture("two_buildings.json") +
                                     " --brute --tx 1,2 --rx 3,4,5");
    CHECK(bad_point.code == 2);
    CHECK(contains(bad_point.err, "expected \"x,y,z\""));
    CHECK(run_cli("dynamic --scene " + fixture("screened_wall.json") + " --rx 1,2,3").code == 2);
    CHECK(run_cli("stats --scene " + fixture("open_field.json") + " --tx 1,2,3").code == 2);
}

}  // TEST_SUITE("cli")
