// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: scene pre-processing, point-to-point tracing,
// trajectory runs, channel statistics, and the acceleration benchmark.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rt/em.hpp"
#include "rt/geom.hpp"
#include "rt/raytracer.hpp"
#include "rt/scene.hpp"
#include "rt/vismatrix.hpp"
#include "rt/vistable.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitMismatch = 3;

/// Point coordinates matched across the two tracers must agree this closely.
constexpr double kCompareTolerance = 1e-6;

struct RunConfig {
    std::string scene_path;
    std::string traj_path;
    std::string traj2_path;
    std::string matrix_path;
    std::string out_dir = ".";
    std::string tx_text;
    std::string rx_text;
    int order = 3;
    double frequency = 5.5e9;
    double step = rt::kTrajectoryStep;
    unsigned seed = 1;
    int pairs = 5;
    bool compare = false;
    bool brute = false;
    bool no_diffraction = false;
};

double elapsed_ms(std::chrono::steady_clock::time_point from) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - from)
        .count();
}

rt::Vec3 parse_point(const std::string& text, const std::string& flag) {
    rt::Vec3 p;
    char tail = '\0';
    if (std::sscanf(text.c_str(), "%lf,%lf,%lf%c", &p.x, &p.y, &p.z, &tail) != 3) {
        throw CLI::ValidationError(flag, "expected \"x,y,z\" with numeric coordinates");
    }
    return p;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << content;
}

std::filesystem::path ensure_out_dir(const RunConfig& cfg) {
    std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    return dir;
}

rt::Scene load_scene_checked(const RunConfig& cfg) {
    if (cfg.scene_path.empty()) {
        throw CLI::ValidationError("--scene", "a scene file is required");
    }
    return rt::load_scene(cfg.scene_path);
}

rt::EmConfig em_config(const RunConfig& cfg) {
    rt::EmConfig em;
    em.frequency = cfg.frequency;
    return em;
}

/// Matrix for query commands: load the cache when one is given, otherwise
/// build it in process at the requested order.
rt::InterVisMatrix obtain_matrix(const RunConfig& cfg, const rt::Scene& scene, int order) {
    if (!cfg.matrix_path.empty()) {
        return rt::load_matrix(cfg.matrix_path);
    }
    return rt::build_matrix(scene, std::max(order, 1));
}

// ---------------------------------------------------------------------------
// preprocess

int cmd_preprocess(const RunConfig& cfg) {
    rt::Scene scene = load_scene_checked(cfg);
    auto start = std::chrono::steady_clock::now();
    rt::InterVisMatrix matrix = rt::build_matrix(scene, std::max(cfg.order, 1));
    double build_ms = elapsed_ms(start);

    std::map<int, size_t> per_order;
    for (int order = 1; order <= matrix.max_order(); ++order) {
        per_order[order] = 0;
    }
    for (const auto& entry : matrix.entries()) {
        ++per_order[entry.order];
    }
    for (const auto& [order, count] : per_order) {
        std::cout << "order " << order << ": " << count << " entries\n";
    }
    std::cout << "total: " << matrix.entries().size() << " entries\n";

    auto dir = ensure_out_dir(cfg);
    auto cache = dir / "matrix.json";
    rt::save_matrix(matrix, cache.string());
    std::cout << "matrix cache: " << cache.string() << "\n";
    std::cout << "build time: " << build_ms << " ms (" << rt::worker_thread_count()
              << " threads)\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// trace

struct CompareOutcome {
    int differing = 0;
    std::vector<std::string> detail;
};

/// Path sets keyed by identity; matched identities must agree point-wise.
CompareOutcome compare_paths(const std::vector<rt::Path>& accel,
                             const std::vector<rt::Path>& brute) {
    CompareOutcome out;
    std::map<std::string, const rt::Path*> lhs;
    std::map<std::string, const rt::Path*> rhs;
    for (const auto& p : accel) lhs[p.identity()] = &p;
    for (const auto& p : brute) rhs[p.identity()] = &p;
    for (const auto& [id, path] : lhs) {
        auto it = rhs.find(id);
        if (it == rhs.end()) {
            ++out.differing;
            out.detail.push_back("only accelerated: " + id);
            continue;
        }
        const rt::Path& other = *it->second;
        double worst = 0.0;
        for (size_t i = 0; i < path->points.size() && i < other.points.size(); ++i) {
            worst = std::max(worst, rt::norm(path->points[i] - other.points[i]));
        }
        if (path->points.size() != other.points.size() || worst > kCompareTolerance) {
            ++out.differing;
            out.detail.push_back("point mismatch: " + id);
        }
    }
    for (const auto& [id, path] : rhs) {
        (void)path;
        if (!lhs.count(id)) {
            ++out.differing;
            out.detail.push_back("only brute force: " + id);
        }
    }
    return out;
}

int cmd_trace(const RunConfig& cfg) {
    rt::Scene scene = load_scene_checked(cfg);
    if (cfg.tx_text.empty() || cfg.rx_text.empty()) {
        throw CLI::ValidationError("trace", "--tx and --rx are required");
    }
    rt::Vec3 tx = parse_point(cfg.tx_text, "--tx");
    rt::Vec3 rx = parse_point(cfg.rx_text, "--rx");
    bool diffraction = !cfg.no_diffraction;

    if (!cfg.compare && !cfg.brute && cfg.matrix_path.empty()) {
        throw CLI::ValidationError(
            "trace", "need a matrix cache (--matrix), --brute, or --compare; run preprocess first");
    }

    std::vector<rt::Path> paths;
    if (cfg.compare) {
        rt::InterVisMatrix matrix = obtain_matrix(cfg, scene, cfg.order);
        rt::TraceAccelerator index(scene, matrix, cfg.order);
        auto t0 = std::chrono::steady_clock::now();
        std::vector<rt::Path> accel = index.trace(tx, rx, diffraction);
        double accel_ms = elapsed_ms(t0);
        t0 = std::chrono::steady_clock::now();
        std::vector<rt::Path> brute = rt::brute_force_trace(scene, tx, rx, cfg.order, diffraction);
        double brute_ms = elapsed_ms(t0);
        CompareOutcome outcome = compare_paths(accel, brute);
        std::cout << outcome.differing << " differing paths\n";
        for (const auto& line : outcome.detail) {
            std::cout << "  " << line << "\n";
        }
        std::cout << "accelerated: " << accel.size() << " paths in " << accel_ms << " ms\n";
        std::cout << "brute force: " << brute.size() << " paths in " << brute_ms << " ms\n";
        paths = std::move(accel);
        if (outcome.differing > 0) {
            return kExitMismatch;
        }
    } else if (cfg.brute) {
        paths = rt::brute_force_trace(scene, tx, rx, cfg.order, diffraction);
    } else {
        rt::InterVisMatrix matrix = rt::load_matrix(cfg.matrix_path);
        paths = rt::accelerated_trace(scene, matrix, tx, rx, cfg.order, diffraction);
    }

    auto dir = ensure_out_dir(cfg);
    write_file(dir / "paths.txt", rt::path_dump(paths));
    rt::ChannelStats stats = rt::channel_stats(rt::ray_gains(scene, paths, em_config(cfg)));
    write_file(dir / "stats.csv", rt::stats_csv({stats}));

    std::cout << paths.size() << " paths\n";
    if (stats.outage) {
        std::cout << "outage: no ray reached the receiver\n";
    } else {
        std::cout << "path loss: " << stats.path_loss_db << " dB\n";
        std::cout << "rms delay spread: " << stats.rms_delay_spread * 1e9 << " ns\n";
    }
    std::cout << "wrote " << (dir / "paths.txt").string() << ", " << (dir / "stats.csv").string()
              << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// dynamic

int cmd_dynamic(const RunConfig& cfg) {
    rt::Scene scene = load_scene_checked(cfg);
    if (cfg.traj_path.empty()) {
        throw CLI::ValidationError("dynamic", "--traj is required");
    }
    if (cfg.rx_text.empty() && cfg.traj2_path.empty()) {
        throw CLI::ValidationError("dynamic", "either --rx or --traj2 is required");
    }
    rt::Trajectory traj = rt::load_trajectory(cfg.traj_path);
    bool diffraction = !cfg.no_diffraction;
    rt::InterVisMatrix matrix = obtain_matrix(cfg, scene, cfg.order);

    rt::DynamicResult result;
    if (!cfg.traj2_path.empty()) {
        rt::Trajectory traj2 = rt::load_trajectory(cfg.traj2_path);
        result = rt::dynamic_trace(scene, matrix, traj, traj2, cfg.order, diffraction, cfg.step);
    } else {
        rt::Vec3 rx = parse_point(cfg.rx_text, "--rx");
        result = rt::dynamic_trace(scene, matrix, traj, rx, cfg.order, diffraction, cfg.step);
    }

    auto dir = ensure_out_dir(cfg);
    write_file(dir / "mobile_table.csv", rt::mobile_table_csv(result.table));
    write_file(dir / "coherence.csv", rt::coherence_csv(result.coherence));
    for (const auto& sample : result.samples) {
        if (!sample.retraced) {
            continue;
        }
        std::ostringstream name;
        name << "segment_" << sample.segment << "_paths.txt";
        write_file(dir / name.str(), rt::path_dump(sample.paths));
    }

    std::cout << result.table.size() << " visibility ranges, "
              << result.coherence.segments.size() << " coherence segments\n";
    std::cout << "average coherence time: " << result.coherence.average << " s\n";
    std::cout << result.samples.size() << " samples, " << result.full_traces
              << " full traces\n";
    std::cout << "wrote " << (dir / "mobile_table.csv").string() << ", "
              << (dir / "coherence.csv").string() << ", per-segment path dumps\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
    int order = 0;
    double matrix_ms = 0.0;
    double accel_ms = 0.0;
    double brute_ms = 0.0;
    long long accel_candidates = 0;
    long long brute_candidates = 0;
    size_t paths = 0;
};

int cmd_bench(const RunConfig& cfg) {
    rt::Scene scene = load_scene_checked(cfg);
    bool diffraction = !cfg.no_diffraction;

    // Deterministic endpoint pairs: seeded rejection sampling over the scene
    // bounding box at street level, or the fixed --tx/--rx when given.
    std::vector<std::pair<rt::Vec3, rt::Vec3>> queries;
    if (!cfg.tx_text.empty() && !cfg.rx_text.empty()) {
        queries.emplace_back(parse_point(cfg.tx_text, "--tx"), parse_point(cfg.rx_text, "--rx"));
    } else {
        std::mt19937 rng(cfg.seed);
        rt::Vec3 lo = scene.bbox_min();
        rt::Vec3 hi = scene.bbox_max();
        std::uniform_real_distribution<double> ux(lo.x, hi.x);
        std::uniform_real_distribution<double> uy(lo.y, hi.y);
        std::uniform_real_distribution<double> uz(1.5, 3.0);
        auto sample_point = [&] {
            for (int i = 0; i < 10000; ++i) {
                rt::Vec3 p{ux(rng), uy(rng), uz(rng)};
                if (!scene.inside_building(p)) {
                    return p;
                }
            }
            throw rt::VisibilityError("could not sample a free-space point");
        };
        for (int i = 0; i < cfg.pairs; ++i) {
            rt::Vec3 a = sample_point();
            rt::Vec3 b = sample_point();
            while (rt::norm(a - b) < 1.0) {
                b = sample_point();
            }
            queries.emplace_back(a, b);
        }
    }

    std::vector<BenchRow> rows;
    for (int order = 1; order <= std::min(cfg.order > 0 ? cfg.order : 4, 4); ++order) {
        BenchRow row;
        row.order = order;
        // Pre-processing cost of the proposed method: the inter-visibility
        // matrix plus the chain index derived from it, both query-independent.
        auto t0 = std::chrono::steady_clock::now();
        rt::InterVisMatrix matrix = rt::build_matrix(scene, order);
        rt::TraceAccelerator index(scene, matrix, order);
        row.matrix_ms = elapsed_ms(t0);
        for (const auto& [tx, rx] : queries) {
            rt::TraceStats stats;
            t0 = std::chrono::steady_clock::now();
            auto accel = index.trace(tx, rx, diffraction, &stats);
            row.accel_ms += elapsed_ms(t0);
            row.accel_candidates += stats.sequences_checked;
            row.paths += accel.size();

            rt::TraceStats bstats;
            t0 = std::chrono::steady_clock::now();
            auto brute = rt::brute_force_trace(scene, tx, rx, order, diffraction, &bstats);
            row.brute_ms += elapsed_ms(t0);
            row.brute_candidates += bstats.sequences_checked;
        }
        rows.push_back(row);
    }

    std::ostringstream csv;
    csv << "order,matrix_ms,accel_query_ms,proposed_total_ms,brute_ms,reduction_pct,"
           "accel_candidates,brute_candidates,paths\n";
    std::cout << "threads: " << rt::worker_thread_count() << ", queries: " << queries.size()
              << ", seed: " << cfg.seed << "\n";
    std::printf("%5s %12s %12s %14s %12s %10s\n", "order", "matrix_ms", "accel_ms", "proposed_ms",
                "brute_ms", "reduction");
    for (const auto& row : rows) {
        double proposed = row.matrix_ms + row.accel_ms;
        double reduction =
            row.brute_ms > 0.0 ? (1.0 - proposed / row.brute_ms) * 100.0 : 0.0;
        csv << row.order << ',' << row.matrix_ms << ',' << row.accel_ms << ',' << proposed << ','
            << row.brute_ms << ',' << reduction << ',' << row.accel_candidates << ','
            << row.brute_candidates << ',' << row.paths << "\n";
        std::printf("%5d %12.2f %12.2f %14.2f %12.2f %9.1f%%\n", row.order, row.matrix_ms,
                    row.accel_ms, proposed, row.brute_ms, reduction);
    }
    auto dir = ensure_out_dir(cfg);
    write_file(dir / "bench.csv", csv.str());
    std::cout << "wrote " << (dir / "bench.csv").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// stats

int cmd_stats(const RunConfig& cfg) {
    rt::Scene scene = load_scene_checked(cfg);
    if (cfg.tx_text.empty()) {
        throw CLI::ValidationError("stats", "--tx is required");
    }
    if (cfg.traj_path.empty()) {
        throw CLI::ValidationError("stats", "--traj (receiver route) is required");
    }
    rt::Vec3 tx = parse_point(cfg.tx_text, "--tx");
    rt::Trajectory traj = rt::load_trajectory(cfg.traj_path);
    bool diffraction = !cfg.no_diffraction;
    rt::InterVisMatrix matrix = obtain_matrix(cfg, scene, cfg.order);
    rt::TraceAccelerator index(scene, matrix, cfg.order);
    rt::EmConfig em = em_config(cfg);

    std::vector<rt::ChannelStats> stats;
    std::vector<double> losses;
    std::vector<double> spreads_ns;
    double total = traj.total_length();
    int outages = 0;
    for (double s = 0.0;; s += cfg.step) {
        bool last = s >= total - 1e-9;
        rt::Vec3 rx = traj.position_at(last ? total : s);
        std::vector<rt::Path> paths = index.trace(tx, rx, diffraction);
        rt::ChannelStats point = rt::channel_stats(rt::ray_gains(scene, paths, em));
        if (point.outage) {
            ++outages;
        } else {
            losses.push_back(point.path_loss_db);
            spreads_ns.push_back(point.rms_delay_spread * 1e9);
        }
        stats.push_back(std::move(point));
        if (last) {
            break;
        }
    }

    auto dir = ensure_out_dir(cfg);
    write_file(dir / "stats.csv", rt::stats_csv(stats));
    write_file(dir / "cdf_path_loss.csv", rt::cdf_csv(losses));
    write_file(dir / "cdf_rms_ds.csv", rt::cdf_csv(spreads_ns));

    std::cout << stats.size() << " receiver points, " << outages << " outages\n";
    if (!losses.empty()) {
        std::vector<double> sorted = losses;
        std::sort(sorted.begin(), sorted.end());
        std::cout << "median path loss: " << sorted[sorted.size() / 2] << " dB\n";
    }
    std::cout << "wrote " << (dir / "stats.csv").string() << " and CDF files\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig cfg;
    CLI::App app{"Site-specific radio propagation: visibility pre-processing and ray tracing"};
    app.require_subcommand(1);

    auto add_common = [&cfg](CLI::App* cmd) {
        cmd->add_option("--scene", cfg.scene_path, "scene JSON file");
        cmd->add_option("--order", cfg.order, "maximum reflection order")
            ->check(CLI::Range(0, 4));
        cmd->add_option("--freq", cfg.frequency, "carrier frequency, Hz")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--out", cfg.out_dir, "output directory");
        cmd->add_option("--seed", cfg.seed, "random seed for sampled queries");
        cmd->add_flag("--compare", cfg.compare, "run both tracers and diff the path sets");
        cmd->add_flag("--brute", cfg.brute, "use the exhaustive tracer only");
        cmd->add_flag("--no-diffraction", cfg.no_diffraction, "disable edge diffraction");
        return cmd;
    };

    auto* pre = add_common(app.add_subcommand("preprocess", "build and cache the matrix"));
    (void)pre;
    auto* trace = add_common(app.add_subcommand("trace", "point-to-point path search"));
    trace->add_option("--tx", cfg.tx_text, "transmitter \"x,y,z\"");
    trace->add_option("--rx", cfg.rx_text, "receiver \"x,y,z\"");
    trace->add_option("--matrix", cfg.matrix_path, "matrix cache from preprocess");
    auto* dyn = add_common(app.add_subcommand("dynamic", "trajectory run"));
    dyn->add_option("--traj", cfg.traj_path, "trajectory JSON file (moving transmitter)");
    dyn->add_option("--traj2", cfg.traj2_path, "second trajectory (moving receiver)");
    dyn->add_option("--rx", cfg.rx_text, "fixed receiver \"x,y,z\"");
    dyn->add_option("--matrix", cfg.matrix_path, "matrix cache from preprocess");
    dyn->add_option("--step", cfg.step, "sampling step, metres")->check(CLI::PositiveNumber);
    auto* bench = add_common(app.add_subcommand("bench", "proposed vs brute-force timing"));
    bench->add_option("--pairs", cfg.pairs, "number of sampled endpoint pairs")
        ->check(CLI::PositiveNumber);
    bench->add_option("--tx", cfg.tx_text, "fixed transmitter \"x,y,z\"");
    bench->add_option("--rx", cfg.rx_text, "fixed receiver \"x,y,z\"");
    auto* st = add_common(app.add_subcommand("stats", "channel statistics along a route"));
    st->add_option("--tx", cfg.tx_text, "transmitter \"x,y,z\"");
    st->add_option("--traj", cfg.traj_path, "receiver route JSON file");
    st->add_option("--matrix", cfg.matrix_path, "matrix cache from preprocess");
    st->add_option("--step", cfg.step, "sampling step, metres")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
        if (app.got_subcommand("preprocess")) return cmd_preprocess(cfg);
        if (app.got_subcommand("trace")) return cmd_trace(cfg);
        if (app.got_subcommand("dynamic")) return cmd_dynamic(cfg);
        if (app.got_subcommand("bench")) return cmd_bench(cfg);
        if (app.got_subcommand("stats")) return cmd_stats(cfg);
        std::cerr << "no subcommand\n";
        return kExitValidation;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}
