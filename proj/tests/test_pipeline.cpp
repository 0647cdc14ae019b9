#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include <uvtomo/pipeline.hpp>

using namespace uvtomo;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("uvtomo_pipe_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

json small_config() {
    return json::parse(R"({
        "seed": 3,
        "phantom": {"c": 0.3, "R": 8},
        "distribution": {"n_theta": 12},
        "acquisition": {"N": 60, "K": 1, "alpha_deg": 3.0, "L": 16, "snr_db": 5.0},
        "admm": {"max_iter": 15},
        "em": {"max_iter": 4},
        "hybrid": {"admm_iter": 8, "em_iter": 4},
        "experiment": {"snr_db": [5.0, 0.0], "trials": 3, "record_runtime": false}
    })");
}

fs::path write_config(const fs::path& dir, const json& j) {
    const auto p = dir / "config.json";
    io::write_file(p, j.dump(2));
    return p;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(UVTOMO_CLI) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

struct QuietWarnings {
    std::function<void(const std::string&)> saved = warning_sink();
    QuietWarnings() { warning_sink() = [](const std::string&) {}; }
    ~QuietWarnings() { warning_sink() = saved; }
};

}  // namespace

TEST(Config, DefaultsAndOverrides) {
    const auto d = parse_config(json::object());
    EXPECT_EQ(d.c, 0.3);
    EXPECT_EQ(d.R, 16.0);
    EXPECT_EQ(d.dist.n_theta, 72);
    EXPECT_EQ(d.K, 6);
    EXPECT_EQ(d.alpha_deg, 1.5);
    EXPECT_EQ(d.method, "admm+em");
    EXPECT_EQ(d.hybrid_admm_iter, 100);
    EXPECT_EQ(d.hybrid_em_iter, 50);
    EXPECT_EQ(d.trials, 20);
    EXPECT_EQ(d.search(), 720);
    const auto s = parse_config(small_config());
    EXPECT_EQ(s.R, 8.0);
    EXPECT_EQ(s.N, 60);
    ASSERT_TRUE(s.snr_db.has_value());
    EXPECT_EQ(*s.snr_db, 5.0);
    EXPECT_EQ(s.snrs_db.size(), 2u);
    EXPECT_FALSE(s.record_runtime);
    // to_json feeds back into the parser unchanged.
    EXPECT_EQ(parse_config(s.to_json()).to_json(), s.to_json());
}

TEST(Config, Rejections) {
    auto bad = [](const char* text) { return parse_config(json::parse(text)); };
    EXPECT_THROW(bad(R"({"bogus": 1})"), ConfigError);
    EXPECT_THROW(bad(R"({"admm": {"lambda": 1}})"), ConfigError);
    EXPECT_THROW(bad(R"({"method": "sgd"})"), ConfigError);
    EXPECT_THROW(bad(R"({"acquisition": {"sigma2": 1, "snr_db": 3}})"), ConfigError);
    EXPECT_THROW(bad(R"({"acquisition": {"L": 8}})"), ConfigError);
    EXPECT_THROW(bad(R"({"acquisition": {"N": "many"}})"), ConfigError);
    EXPECT_THROW(bad(R"({"distribution": {"family": "gaussian"}})"), ConfigError);
    EXPECT_THROW(bad(R"({"admm": {"rho": 0}})"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/uvtomo.json"), IoError);
}

TEST(Config, DistributionFamilies) {
    DistributionConfig d;
    d.n_theta = 10;
    d.family = "uniform";
    EXPECT_LT((d.build().p.array() - 0.1).abs().maxCoeff(), 1e-15);
    d.family = "delta";
    d.index = 4;
    EXPECT_EQ(d.build().p[4], 1.0);
    d.family = "bump";
    EXPECT_NEAR(d.build().p.sum(), 1.0, 1e-12);
}

TEST(Pipeline, InProcessRoundTrip) {
    QuietWarnings quiet;
    const auto dir = scratch_dir("inproc");
    auto cfg = parse_config(small_config());
    std::ostringstream log;
    const auto sim = cmd_simulate(cfg, dir, log);
    EXPECT_NEAR(sim.snr_db, 5.0, 1e-9);
    EXPECT_TRUE(fs::exists(sim.batch));
    cfg.method = "admm";
    const auto rec = cmd_reconstruct(cfg, sim.batch, dir / "rec", log);
    ASSERT_TRUE(rec.report.has_value());
    EXPECT_TRUE(std::isfinite(rec.report->re));
    const auto rep = cmd_evaluate(sim.truth, dir / "rec" / "estimate.bin", dir / "eval", log);
    EXPECT_NEAR(rep.re, rec.report->re, 1e-12);
    const auto self = cmd_evaluate(sim.truth, sim.truth, dir / "self", log);
    EXPECT_EQ(self.re, 0.0);
    EXPECT_EQ(self.tv, 0.0);
    fs::remove_all(dir);
}

TEST(Pipeline, EvaluateRotatedTruth) {
    const auto dir = scratch_dir("rot");
    const auto spec = build_basis_spec(0.3, 8);
    const auto sp = std::make_shared<const BasisSpec>(spec);
    const auto a = random_phantom(sp, 2.0, 4);
    const auto p = uniform_distribution(12);
    io::save_estimate(dir / "truth.bin", io::Estimate{0.3, 8, a.values, p.p, json::object()});
    io::save_estimate(dir / "est.bin", io::Estimate{0.3, 8, rotate_coeffs(spec, a.values, kTwoPi * 5 / 120), p.p, json::object()});
    std::ostringstream log;
    const auto r = cmd_evaluate(dir / "truth.bin", dir / "est.bin", dir / "out", log);
    EXPECT_LT(r.re, 1e-12);
    EXPECT_GT(std::abs(std::remainder(r.aligned_rotation, kTwoPi)), 0.1);
    const auto csv = lines(io::read_file(dir / "out" / "report.csv"));
    ASSERT_EQ(csv.size(), 2u);
    EXPECT_EQ(csv[0], io::kReportHeader);
    EXPECT_TRUE(fs::exists(dir / "out" / "truth.pgm"));
    EXPECT_TRUE(fs::exists(dir / "out" / "estimate_aligned.pgm"));
    fs::remove_all(dir);
}

TEST(Pipeline, EmNeedsNoise) {
    QuietWarnings quiet;
    const auto dir = scratch_dir("clean");
    auto j = small_config();
    j["acquisition"].erase("snr_db");
    auto cfg = parse_config(j);
    std::ostringstream log;
    const auto sim = cmd_simulate(cfg, dir, log);
    EXPECT_TRUE(std::isinf(sim.snr_db));
    cfg.method = "em";
    EXPECT_THROW(cmd_reconstruct(cfg, sim.batch, dir / "rec", log), ConfigError);
    fs::remove_all(dir);
}

TEST(Cli, SimulateWritesThreeFiles) {
    const auto dir = scratch_dir("cli_sim");
    const auto cfg = write_config(dir, small_config());
    ASSERT_EQ(run_cli("simulate --config " + cfg.string() + " --out " + (dir / "sim").string()), 0);
    std::set<std::string> names;
    for (const auto& e : fs::directory_iterator(dir / "sim")) names.insert(e.path().filename().string());
    EXPECT_EQ(names, (std::set<std::string>{"batch.bin", "truth.bin", "manifest.json"}));
    const auto m = json::parse(io::read_file(dir / "sim" / "manifest.json"));
    EXPECT_EQ(m["outputs"]["batch.bin"], io::file_hash(dir / "sim" / "batch.bin"));
    EXPECT_NEAR(m["snr_db"].get<double>(), 5.0, 1e-9);
    fs::remove_all(dir);
}

TEST(Cli, ReconstructWritesHistories) {
    const auto dir = scratch_dir("cli_rec");
    const auto cfg = write_config(dir, small_config());
    ASSERT_EQ(run_cli("simulate --config " + cfg.string() + " --out " + (dir / "sim").string()), 0);
    ASSERT_EQ(run_cli("reconstruct " + (dir / "sim" / "batch.bin").string() + " --config " + cfg.string() +
                      " --method admm+em --out " + (dir / "rec").string()),
              0);
    for (const char* f : {"estimate.bin", "admm_history.csv", "em_history.csv", "reconstruction.pgm", "manifest.json"})
        EXPECT_TRUE(fs::exists(dir / "rec" / f)) << f;
    const auto admm = lines(io::read_file(dir / "rec" / "admm_history.csv"));
    const auto em = lines(io::read_file(dir / "rec" / "em_history.csv"));
    EXPECT_EQ(admm[0], io::kAdmmHistoryHeader);
    EXPECT_EQ(em[0], io::kEmHistoryHeader);
    EXPECT_LE(admm.size(), 9u);
    EXPECT_LE(em.size(), 5u);
    EXPECT_GE(em.size(), 2u);
    EXPECT_EQ(run_cli("evaluate " + (dir / "sim" / "truth.bin").string() + " " + (dir / "rec" / "estimate.bin").string() +
                      " --out " + (dir / "ev").string()),
              0);
    EXPECT_TRUE(fs::exists(dir / "ev" / "report.csv"));
    fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch_dir("cli_exit");
    EXPECT_EQ(run_cli("reconstruct " + (dir / "missing.bin").string() + " --out " + (dir / "o").string()), 2);
    EXPECT_EQ(run_cli("frobnicate"), 2);
    EXPECT_EQ(run_cli("simulate --config " + (dir / "absent.json").string()), 2);
    auto j = small_config();
    j["nonsense"] = true;
    const auto cfg = write_config(dir, j);
    EXPECT_EQ(run_cli("simulate --config " + cfg.string() + " --out " + dir.string()), 2);
    io::write_file(dir / "junk.bin", "garbage");
    EXPECT_EQ(run_cli("reconstruct " + (dir / "junk.bin").string() + " --out " + (dir / "o").string()), 2);
    fs::remove_all(dir);
}

TEST(Cli, DeterministicReconstruction) {
    const auto dir = scratch_dir("cli_det");
    const auto cfg = write_config(dir, small_config());
    ASSERT_EQ(run_cli("simulate --config " + cfg.string() + " --out " + (dir / "sim").string()), 0);
    for (const char* o : {"r1", "r2"})
        ASSERT_EQ(run_cli("reconstruct " + (dir / "sim" / "batch.bin").string() + " --config " + cfg.string() +
                          " --out " + (dir / o).string()),
                  0);
    for (const char* f : {"estimate.bin", "admm_history.csv", "em_history.csv", "reconstruction.pgm"})
        EXPECT_EQ(io::read_file(dir / "r1" / f), io::read_file(dir / "r2" / f)) << f;
    fs::remove_all(dir);
}

TEST(Cli, ExperimentMatrix) {
    const auto dir = scratch_dir("cli_exp");
    const auto cfg = write_config(dir, small_config());
    ASSERT_EQ(run_cli("experiment --config " + cfg.string() + " --threads 2 --out " + (dir / "e1").string()), 0);
    ASSERT_EQ(run_cli("experiment --config " + cfg.string() + " --threads 1 --out " + (dir / "e2").string()), 0);
    const auto reports = lines(io::read_file(dir / "e1" / "reports.csv"));
    ASSERT_EQ(reports.size(), 1u + 2 * 3 * 3);
    EXPECT_EQ(reports[0], io::kReportHeader);
    // Thread count does not change any byte.
    for (const char* f : {"reports.csv", "aggregate.csv", "init_hashes.csv"})
        EXPECT_EQ(io::read_file(dir / "e1" / f), io::read_file(dir / "e2" / f)) << f;

    // Methods of one (snr, trial) cell share the initial point.
    const auto hashes = lines(io::read_file(dir / "e1" / "init_hashes.csv"));
    ASSERT_EQ(hashes.size(), reports.size());
    for (std::size_t i = 1; i < hashes.size(); i += 3) {
        const auto h = [&](std::size_t k) { return hashes[k].substr(hashes[k].rfind(',') + 1); };
        EXPECT_EQ(h(i), h(i + 1));
        EXPECT_EQ(h(i), h(i + 2));
    }
    const auto agg = lines(io::read_file(dir / "e1" / "aggregate.csv"));
    ASSERT_EQ(agg.size(), 3u);
    EXPECT_EQ(agg[0],
              "snr_db,re_mean_admm,re_std_admm,tv_mean_admm,tv_std_admm,re_mean_em,re_std_em,tv_mean_em,tv_std_em,"
              "re_mean_admm+em,re_std_admm+em,tv_mean_admm+em,tv_std_admm+em,success_admm,success_em,success_admm+em");
    fs::remove_all(dir);
}
