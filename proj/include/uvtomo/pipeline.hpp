#pragma once

// End-to-end runs driven by a JSON configuration: simulate, reconstruct, evaluate,
// and the multi-trial experiment.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "admm.hpp"
#include "em.hpp"
#include "eval.hpp"
#include "io.hpp"
#include "moments.hpp"
#include "sim.hpp"
#include "spectral.hpp"

namespace uvtomo {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct DistributionConfig {
    std::string family = "two_bump";  // uniform | delta | bump | two_bump
    int n_theta = 72;
    double center = 1.0;
    double concentration = 3.0;
    double center2 = 3.5;
    double concentration2 = 6.0;
    double weight = 0.6;
    double floor = 0.2;
    int index = 0;  // delta

    ViewDistribution build() const {
        if (family == "uniform") return uniform_distribution(n_theta);
        if (family == "delta") return delta_distribution(n_theta, index);
        if (family == "bump") return bump_distribution(n_theta, center, concentration);
        if (family == "two_bump")
            return two_bump_distribution(n_theta, center, concentration, center2, concentration2, weight, floor);
        throw ConfigError("distribution.family must be uniform, delta, bump or two_bump (got '" + family + "')");
    }
};

struct RunConfig {
    std::uint64_t seed = 1;

    // phantom
    double c = 0.3;
    double R = 16.0;
    double decay = 2.0;
    std::optional<std::uint64_t> phantom_seed;  // defaults to seed

    DistributionConfig dist;

    // acquisition
    int N = 10000;
    int K = 6;
    double alpha_deg = 1.5;
    int L = 32;
    double dx = 1.0;
    std::optional<double> sigma2;  // exactly one of sigma2 / snr_db; neither means clean
    std::optional<double> snr_db;
    int quad_nodes = 0;            // 0: max(2 L, 40)

    // solvers
    std::string method = "admm+em";
    AdmmConfig admm;
    EmConfig em;
    int hybrid_admm_iter = 100;
    int hybrid_em_iter = 50;
    double em_p_floor = 1e-3;  // mixed into an ADMM p before it seeds EM
    int n_search = 0;          // 0: 10 n_theta

    // experiment
    std::vector<double> snrs_db{6.61, -4.4};
    int trials = 20;
    std::vector<std::string> methods{"admm", "em", "admm+em"};
    bool record_runtime = true;

    std::string truth;  // optional truth file for reconstruct

    double alpha() const { return alpha_deg * kPi / 180.0; }
    int nodes() const { return quad_nodes > 0 ? quad_nodes : default_node_count(L); }
    int search() const { return n_search > 0 ? n_search : 10 * dist.n_theta; }
    std::uint64_t phantom_seed_value() const { return phantom_seed.value_or(seed); }
    LineGrid grid() const { return LineGrid{L, dx}; }

    void validate() const {
        auto check_method = [](const std::string& m) {
            if (m != "admm" && m != "em" && m != "admm+em")
                throw ConfigError("method must be admm, em or admm+em (got '" + m + "')");
        };
        check_method(method);
        for (const auto& m : methods) check_method(m);
        if (methods.empty()) throw ConfigError("experiment.methods is empty");
        if (!(c > 0.0) || !(R > 0.0)) throw ConfigError("phantom.c and phantom.R must be positive");
        if (!(decay > 0.0)) throw ConfigError("phantom.decay must be positive");
        if (dist.n_theta < 1) throw ConfigError("distribution.n_theta must be >= 1");
        if (N < 1) throw ConfigError("acquisition.N must be >= 1");
        if (K < 0) throw ConfigError("acquisition.K must be >= 0");
        if (L < 1 || !(dx > 0.0)) throw ConfigError("acquisition.L >= 1 and dx > 0 required");
        if (L * dx < 2.0 * R * (1.0 - 1e-12)) throw ConfigError("acquisition: L * dx must cover the diameter 2R");
        if (sigma2 && snr_db) throw ConfigError("acquisition: give sigma2 or snr_db, not both");
        if (sigma2 && !(*sigma2 >= 0.0)) throw ConfigError("acquisition.sigma2 must be >= 0");
        if (trials < 1) throw ConfigError("experiment.trials must be >= 1");
        if (hybrid_admm_iter < 1 || hybrid_em_iter < 1) throw ConfigError("hybrid iteration counts must be >= 1");
        if (!(em_p_floor >= 0.0 && em_p_floor < 1.0)) throw ConfigError("em.p_floor must be in [0, 1)");
        admm.validate();
        em.validate();
        (void)dist.build();
    }

    json to_json() const {
        json j;
        j["seed"] = seed;
        j["phantom"] = {{"c", c}, {"R", R}, {"decay", decay}, {"seed", phantom_seed_value()}};
        j["distribution"] = {{"family", dist.family},        {"n_theta", dist.n_theta}, {"center", dist.center},
                             {"concentration", dist.concentration}, {"center2", dist.center2},
                             {"concentration2", dist.concentration2}, {"weight", dist.weight},
                             {"floor", dist.floor},          {"index", dist.index}};
        j["acquisition"] = {{"N", N}, {"K", K}, {"alpha_deg", alpha_deg}, {"L", L}, {"dx", dx}, {"quad_nodes", quad_nodes}};
        if (sigma2) j["acquisition"]["sigma2"] = *sigma2;
        if (snr_db) j["acquisition"]["snr_db"] = *snr_db;
        j["method"] = method;
        j["admm"] = {{"lambda1", admm.lambda1}, {"lambda2", admm.lambda2}, {"rho", admm.rho},
                     {"max_iter", admm.max_iter}, {"tol_primal", admm.tol_primal}, {"tol_change", admm.tol_change}};
        j["em"] = {{"max_iter", em.max_iter}, {"tol_loglik", em.tol_loglik}, {"pinv_cutoff", em.pinv_cutoff},
                   {"mstep_cutoff", em.mstep_cutoff}, {"p_floor", em_p_floor}};
        j["hybrid"] = {{"admm_iter", hybrid_admm_iter}, {"em_iter", hybrid_em_iter}};
        j["n_search"] = n_search;
        j["experiment"] = {{"snr_db", snrs_db}, {"trials", trials}, {"methods", methods}, {"record_runtime", record_runtime}};
        if (!truth.empty()) j["truth"] = truth;
        return j;
    }
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_config(const json& j) {
    RunConfig cfg;
    try {
        detail::reject_unknown(j, {"seed", "phantom", "distribution", "acquisition", "method", "admm", "em", "hybrid",
                                   "n_search", "experiment", "truth"},
                               "config");
        detail::read(j, "seed", cfg.seed);
        detail::read(j, "method", cfg.method);
        detail::read(j, "n_search", cfg.n_search);
        detail::read(j, "truth", cfg.truth);
        if (j.contains("phantom")) {
            const auto& s = j["phantom"];
            detail::reject_unknown(s, {"c", "R", "decay", "seed"}, "phantom");
            detail::read(s, "c", cfg.c);
            detail::read(s, "R", cfg.R);
            detail::read(s, "decay", cfg.decay);
            if (s.contains("seed")) cfg.phantom_seed = s["seed"].get<std::uint64_t>();
        }
        if (j.contains("distribution")) {
            const auto& s = j["distribution"];
            detail::reject_unknown(s, {"family", "n_theta", "center", "concentration", "center2", "concentration2",
                                       "weight", "floor", "index"},
                                   "distribution");
            auto& d = cfg.dist;
            detail::read(s, "family", d.family);
            detail::read(s, "n_theta", d.n_theta);
            detail::read(s, "center", d.center);
            detail::read(s, "concentration", d.concentration);
            detail::read(s, "center2", d.center2);
            detail::read(s, "concentration2", d.concentration2);
            detail::read(s, "weight", d.weight);
            detail::read(s, "floor", d.floor);
            detail::read(s, "index", d.index);
        }
        if (j.contains("acquisition")) {
            const auto& s = j["acquisition"];
            detail::reject_unknown(s, {"N", "K", "alpha_deg", "L", "dx", "sigma2", "snr_db", "quad_nodes"}, "acquisition");
            detail::read(s, "N", cfg.N);
            detail::read(s, "K", cfg.K);
            detail::read(s, "alpha_deg", cfg.alpha_deg);
            detail::read(s, "L", cfg.L);
            detail::read(s, "dx", cfg.dx);
            detail::read(s, "quad_nodes", cfg.quad_nodes);
            if (s.contains("sigma2")) cfg.sigma2 = s["sigma2"].get<double>();
            if (s.contains("snr_db")) cfg.snr_db = s["snr_db"].get<double>();
        }
        if (j.contains("admm")) {
            const auto& s = j["admm"];
            detail::reject_unknown(s, {"lambda1", "lambda2", "rho", "max_iter", "tol_primal", "tol_change"}, "admm");
            detail::read(s, "lambda1", cfg.admm.lambda1);
            detail::read(s, "lambda2", cfg.admm.lambda2);
            detail::read(s, "rho", cfg.admm.rho);
            detail::read(s, "max_iter", cfg.admm.max_iter);
            detail::read(s, "tol_primal", cfg.admm.tol_primal);
            detail::read(s, "tol_change", cfg.admm.tol_change);
        }
        if (j.contains("em")) {
            const auto& s = j["em"];
            detail::reject_unknown(s, {"max_iter", "tol_loglik", "pinv_cutoff", "mstep_cutoff", "p_floor"}, "em");
            detail::read(s, "max_iter", cfg.em.max_iter);
            detail::read(s, "tol_loglik", cfg.em.tol_loglik);
            detail::read(s, "pinv_cutoff", cfg.em.pinv_cutoff);
            detail::read(s, "mstep_cutoff", cfg.em.mstep_cutoff);
            detail::read(s, "p_floor", cfg.em_p_floor);
        }
        if (j.contains("hybrid")) {
            const auto& s = j["hybrid"];
            detail::reject_unknown(s, {"admm_iter", "em_iter"}, "hybrid");
            detail::read(s, "admm_iter", cfg.hybrid_admm_iter);
            detail::read(s, "em_iter", cfg.hybrid_em_iter);
        }
        if (j.contains("experiment")) {
            const auto& s = j["experiment"];
            detail::reject_unknown(s, {"snr_db", "trials", "methods", "record_runtime"}, "experiment");
            detail::read(s, "snr_db", cfg.snrs_db);
            detail::read(s, "trials", cfg.trials);
            detail::read(s, "methods", cfg.methods);
            detail::read(s, "record_runtime", cfg.record_runtime);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const fs::path& path) {
    const std::string text = io::read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j);
}

/// Shared per-batch preprocessing: basis, quadrature, spectral records, noise, moments.
struct Prepared {
    std::shared_ptr<const BasisSpec> spec;
    QuadratureGrid quad;
    SpectralBatch spectral;
    NoiseModel noise;
    MomentFeatures features;
};

inline Prepared prepare(const RunConfig& cfg, const TiltSeriesBatch& batch) {
    if (batch.n_theta != cfg.dist.n_theta)
        throw ConfigError("batch n_theta (" + std::to_string(batch.n_theta) + ") differs from the config (" +
                          std::to_string(cfg.dist.n_theta) + ")");
    Prepared p;
    p.spec = std::make_shared<const BasisSpec>(build_basis_spec(cfg.c, cfg.R));
    batch.grid.validate(p.spec->support_radius());
    p.quad = build_quadrature(cfg.c, cfg.nodes());
    p.spectral = transform_batch(batch, p.quad);
    p.noise = noise_covariance(batch.sigma2, batch.grid, p.quad, batch.K);
    p.features = empirical_moments(p.spectral, p.noise);
    return p;
}

struct MethodResult {
    VectorXc a;
    VectorXd p;
    std::vector<AdmmRecord> admm_history;
    std::vector<double> em_history;
    double runtime = 0.0;
};

inline VectorXd floored(const VectorXd& p, double floor) {
    VectorXd q = (1.0 - floor) * p;
    q.array() += floor / static_cast<double>(p.size());
    return q / q.sum();
}

/// Runs one method from a shared ADMM-style initial state.
inline MethodResult run_method(const std::string& method, const RunConfig& cfg, const Prepared& prep,
                               const MomentProblem& prob, const AdmmState& init, const TiltSeriesBatch& batch) {
    MethodResult out;
    const auto t0 = std::chrono::steady_clock::now();
    auto em_problem = [&] {
        if (!(batch.sigma2 > 0.0)) throw ConfigError("method " + method + " needs a noisy batch (sigma2 > 0)");
        return EmProblem(prep.spectral, prep.noise, *prep.spec, cfg.dist.n_theta, cfg.em.pinv_cutoff);
    };
    if (method == "admm") {
        auto res = run_admm(prob, cfg.admm, init);
        out.a = std::move(res.a);
        out.p = std::move(res.p);
        out.admm_history = std::move(res.history);
    } else if (method == "em") {
        const EmProblem ep = em_problem();
        auto res = run_em(ep, init.a, floored(init.p, cfg.em_p_floor), cfg.em);
        out.a = std::move(res.a);
        out.p = std::move(res.p);
        out.em_history = std::move(res.loglik);
    } else if (method == "admm+em") {
        const EmProblem ep = em_problem();
        AdmmConfig ac = cfg.admm;
        ac.max_iter = cfg.hybrid_admm_iter;
        auto ares = run_admm(prob, ac, init);
        EmConfig ec = cfg.em;
        ec.max_iter = cfg.hybrid_em_iter;
        auto eres = run_em(ep, ares.a, floored(ares.p, cfg.em_p_floor), ec);
        out.a = std::move(eres.a);
        out.p = std::move(eres.p);
        out.admm_history = std::move(ares.history);
        out.em_history = std::move(eres.loglik);
    } else {
        throw ConfigError("unknown method '" + method + "'");
    }
    out.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

inline std::string admm_history_csv(const std::vector<AdmmRecord>& h) {
    std::string s = std::string(io::kAdmmHistoryHeader) + "\n";
    for (const auto& r : h)
        s += std::to_string(r.iter) + "," + io::fmt(r.objective) + "," + io::fmt(r.primal) + "," + io::fmt(r.lagrangian) + "\n";
    return s;
}

inline std::string em_history_csv(const std::vector<double>& h) {
    std::string s = std::string(io::kEmHistoryHeader) + "\n";
    for (std::size_t i = 0; i < h.size(); ++i) s += std::to_string(i + 1) + "," + io::fmt(h[i]) + "\n";
    return s;
}

inline std::string init_hash(const AdmmState& init) {
    io::Estimate e;
    e.a = init.a;
    e.p = init.p;
    return io::git_blob_hash(io::encode_estimate(e));
}

// ---- simulate -------------------------------------------------------------------

struct SimulateSummary {
    double sigma2 = 0.0;
    double snr_db = 0.0;
    fs::path batch, truth, manifest;
};

inline SimulateSummary cmd_simulate(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log = std::cout) {
    cfg.validate();
    const auto spec = std::make_shared<const BasisSpec>(build_basis_spec(cfg.c, cfg.R));
    const auto quad = build_quadrature(cfg.c, cfg.nodes());
    const auto a = random_phantom(spec, cfg.decay, cfg.phantom_seed_value());
    const auto p = cfg.dist.build();
    auto batch = generate_clean_batch(a, p, cfg.N, cfg.K, cfg.alpha(), cfg.grid(), quad, cfg.seed);
    double sigma2 = 0.0;
    if (cfg.sigma2) sigma2 = *cfg.sigma2;
    if (cfg.snr_db) sigma2 = sigma2_for_snr(batch.clean_variance, *cfg.snr_db);
    add_noise(batch, sigma2);

    SimulateSummary s;
    s.sigma2 = sigma2;
    s.snr_db = snr_db(batch.clean_variance, sigma2);
    s.batch = out_dir / "batch.bin";
    s.truth = out_dir / "truth.bin";
    s.manifest = out_dir / "manifest.json";

    const std::string batch_bytes = io::encode_batch(batch);
    io::Estimate truth{cfg.c, cfg.R, a.values, p.p, json{{"kind", "truth"}, {"decay", cfg.decay}}};
    const std::string truth_bytes = io::encode_estimate(truth);
    io::write_file(s.batch, batch_bytes);
    io::write_file(s.truth, truth_bytes);

    json m;
    m["command"] = "simulate";
    m["config"] = cfg.to_json();
    m["inputs"] = json::object();
    m["config_hash"] = io::git_blob_hash(cfg.to_json().dump());
    m["outputs"] = {{"batch.bin", io::git_blob_hash(batch_bytes)}, {"truth.bin", io::git_blob_hash(truth_bytes)}};
    m["sigma2"] = sigma2;
    m["clean_variance"] = batch.clean_variance;
    m["snr_db"] = std::isfinite(s.snr_db) ? json(s.snr_db) : json("inf");
    io::write_file(s.manifest, m.dump(2) + "\n");

    log << "simulate: N=" << cfg.N << " tilts=" << 2 * cfg.K + 1 << " n_a=" << spec->size() << " sigma2=" << io::fmt(sigma2)
        << " snr_db=" << io::fmt(s.snr_db) << "\n";
    return s;
}

// ---- reconstruct ----------------------------------------------------------------

struct ReconstructSummary {
    io::Estimate estimate;
    std::optional<TrialReport> report;  // when a truth file is available
};

inline ReconstructSummary cmd_reconstruct(const RunConfig& cfg, const fs::path& batch_path, const fs::path& out_dir,
                                          std::ostream& log = std::cout) {
    cfg.validate();
    const std::string batch_bytes = io::read_file(batch_path);
    const TiltSeriesBatch batch = io::decode_batch(batch_bytes, batch_path.string());
    const Prepared prep = prepare(cfg, batch);
    const MomentProblem prob = MomentProblem::build(*prep.spec, prep.quad, batch.alpha, prep.features, batch.n_theta);
    const AdmmState init = random_init(prob, cfg.seed);
    const MethodResult res = run_method(cfg.method, cfg, prep, prob, init, batch);

    ReconstructSummary s;
    const double snr = snr_db(batch.clean_variance, batch.sigma2);
    s.estimate = io::Estimate{cfg.c, cfg.R, res.a, res.p,
                              json{{"kind", "estimate"}, {"method", cfg.method}, {"seed", cfg.seed},
                                   {"snr_db", std::isfinite(snr) ? json(snr) : json("inf")}}};
    const std::string est_bytes = io::encode_estimate(s.estimate);
    const std::string admm_csv = admm_history_csv(res.admm_history);
    const std::string em_csv = em_history_csv(res.em_history);
    io::write_file(out_dir / "estimate.bin", est_bytes);
    json outputs = {{"estimate.bin", io::git_blob_hash(est_bytes)}};
    if (cfg.method != "em") {
        io::write_file(out_dir / "admm_history.csv", admm_csv);
        outputs["admm_history.csv"] = io::git_blob_hash(admm_csv);
    }
    if (cfg.method != "admm") {
        io::write_file(out_dir / "em_history.csv", em_csv);
        outputs["em_history.csv"] = io::git_blob_hash(em_csv);
    }
    const auto scaling = io::write_pgm(out_dir / "reconstruction.pgm", synthesize_image(FBCoeffs(prep.spec, res.a), batch.grid.L));
    outputs["reconstruction.pgm"] = io::file_hash(out_dir / "reconstruction.pgm");

    json inputs = {{batch_path.filename().string(), io::git_blob_hash(batch_bytes)}};
    fs::path truth_path = cfg.truth.empty() ? batch_path.parent_path() / "truth.bin" : fs::path(cfg.truth);
    if (!cfg.truth.empty() || fs::exists(truth_path)) {
        const std::string truth_bytes = io::read_file(truth_path);
        const io::Estimate truth = io::decode_estimate(truth_bytes, truth_path.string());
        if (truth.a.size() != res.a.size() || truth.p.size() != res.p.size())
            throw ConfigError("truth file does not match the reconstruction basis");
        inputs[truth_path.filename().string()] = io::git_blob_hash(truth_bytes);
        TrialReport r = evaluate_trial(*prep.spec, truth.a, truth.p, res.a, res.p, cfg.search());
        r.method = cfg.method;
        r.snr_db = snr;
        r.seed = cfg.seed;
        r.runtime = res.runtime;
        s.report = r;
        log << "reconstruct: method=" << cfg.method << " RE=" << io::fmt(r.re) << " TV=" << io::fmt(r.tv) << "\n";
    } else {
        log << "reconstruct: method=" << cfg.method << " (no truth file; metrics skipped)\n";
    }

    json m;
    m["command"] = "reconstruct";
    m["config"] = cfg.to_json();
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["images"] = {{"reconstruction.pgm", {{"min", scaling.min}, {"max", scaling.max}}}};
    m["init_hash"] = init_hash(init);
    io::write_file(out_dir / "manifest.json", m.dump(2) + "\n");
    return s;
}

// ---- evaluate -------------------------------------------------------------------

inline TrialReport cmd_evaluate(const fs::path& truth_path, const fs::path& estimate_path, const fs::path& out_dir,
                                std::ostream& log = std::cout) {
    const std::string tb = io::read_file(truth_path);
    const std::string eb = io::read_file(estimate_path);
    const io::Estimate truth = io::decode_estimate(tb, truth_path.string());
    const io::Estimate est = io::decode_estimate(eb, estimate_path.string());
    if (truth.c != est.c || truth.R != est.R || truth.a.size() != est.a.size() || truth.p.size() != est.p.size())
        throw ConfigError("truth and estimate use different bases or angle grids");
    const auto spec = truth.basis();
    TrialReport r = evaluate_trial(*spec, truth.a, truth.p, est.a, est.p, 10 * static_cast<int>(truth.p.size()));
    r.method = est.extra.value("method", std::string("unknown"));
    r.seed = est.extra.value("seed", std::uint64_t{0});
    const auto snr = est.extra.find("snr_db");
    r.snr_db = (snr != est.extra.end() && snr->is_number()) ? snr->get<double>()
               : (snr != est.extra.end() ? std::numeric_limits<double>::infinity() : std::nan(""));

    const std::string csv = std::string(io::kReportHeader) + "\n" +
                            io::report_row(r.method, r.snr_db, r.re, r.tv, r.success, r.seed, 0.0) + "\n";
    io::write_file(out_dir / "report.csv", csv);
    const int px = std::max(8, static_cast<int>(std::lround(2.0 * truth.R)));
    const auto s1 = io::write_pgm(out_dir / "truth.pgm", synthesize_image(FBCoeffs(spec, truth.a), px));
    const auto s2 = io::write_pgm(out_dir / "estimate_aligned.pgm",
                                  synthesize_image(rotate(FBCoeffs(spec, est.a), r.aligned_rotation), px));
    json m;
    m["command"] = "evaluate";
    m["inputs"] = {{"truth", io::git_blob_hash(tb)}, {"estimate", io::git_blob_hash(eb)}};
    m["outputs"] = {{"report.csv", io::git_blob_hash(csv)}};
    m["images"] = {{"truth.pgm", {{"min", s1.min}, {"max", s1.max}}},
                   {"estimate_aligned.pgm", {{"min", s2.min}, {"max", s2.max}}}};
    m["aligned_rotation"] = r.aligned_rotation;
    m["aligned_shift"] = r.aligned_shift;
    io::write_file(out_dir / "manifest.json", m.dump(2) + "\n");
    log << "evaluate: RE=" << io::fmt(r.re) << " TV=" << io::fmt(r.tv) << " rotation=" << io::fmt(r.aligned_rotation)
        << " shift=" << r.aligned_shift << "\n";
    return r;
}

// ---- experiment -----------------------------------------------------------------

struct ExperimentRow {
    TrialReport report;
    int trial = 0;
    std::string init_hash;
};

struct ExperimentSummary {
    std::vector<ExperimentRow> rows;  // snr-major, then trial, then method order
};

inline std::uint64_t trial_batch_seed(std::uint64_t seed, int trial) { return substream_key(seed, static_cast<std::uint64_t>(trial), 0xBA7C); }
inline std::uint64_t trial_init_seed(std::uint64_t seed, int trial) { return substream_key(seed, static_cast<std::uint64_t>(trial), 0x1417); }

/// One (snr, trial) cell: shared batch and initial point, every configured method.
inline std::vector<ExperimentRow> run_trial(const RunConfig& cfg, const FBCoeffs& truth, const ViewDistribution& p,
                                            const QuadratureGrid& quad, double snr, int trial) {
    auto batch = generate_clean_batch(truth, p, cfg.N, cfg.K, cfg.alpha(), cfg.grid(), quad, trial_batch_seed(cfg.seed, trial));
    add_noise(batch, sigma2_for_snr(batch.clean_variance, snr));
    const Prepared prep = prepare(cfg, batch);
    const MomentProblem prob = MomentProblem::build(*prep.spec, prep.quad, batch.alpha, prep.features, batch.n_theta);
    const AdmmState init = random_init(prob, trial_init_seed(cfg.seed, trial));
    const std::string hash = init_hash(init);
    std::vector<ExperimentRow> rows;
    for (const auto& method : cfg.methods) {
        ExperimentRow row;
        row.trial = trial;
        row.init_hash = hash;
        try {
            const MethodResult res = run_method(method, cfg, prep, prob, init, batch);
            row.report = evaluate_trial(*prep.spec, truth.values, p.p, res.a, res.p, cfg.search());
            row.report.runtime = cfg.record_runtime ? res.runtime : 0.0;
        } catch (const SolverError& e) {
            warn(std::string("trial ") + std::to_string(trial) + " " + method + ": " + e.what());
            row.report.re = row.report.tv = std::numeric_limits<double>::quiet_NaN();
            row.report.success = false;
        }
        row.report.method = method;
        row.report.snr_db = snr;
        row.report.seed = trial_init_seed(cfg.seed, trial);
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace detail {

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = sd = std::numeric_limits<double>::quiet_NaN();
    if (v.empty()) return;
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

}  // namespace detail

inline ExperimentSummary cmd_experiment(const RunConfig& cfg, const fs::path& out_dir, int threads = 1,
                                        std::ostream& log = std::cout) {
    cfg.validate();
    if (threads < 1) throw ConfigError("--threads must be >= 1");
    const auto spec = std::make_shared<const BasisSpec>(build_basis_spec(cfg.c, cfg.R));
    const auto quad = build_quadrature(cfg.c, cfg.nodes());
    const auto truth = random_phantom(spec, cfg.decay, cfg.phantom_seed_value());
    const auto p = cfg.dist.build();

    struct Cell {
        double snr;
        int trial;
    };
    std::vector<Cell> cells;
    for (double snr : cfg.snrs_db)
        for (int t = 0; t < cfg.trials; ++t) cells.push_back({snr, t});
    std::vector<std::vector<ExperimentRow>> results(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) {
            try {
                results[i] = run_trial(cfg, truth, p, quad, cells[i].snr, cells[i].trial);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n = std::min<int>(threads, static_cast<int>(cells.size()));
    std::vector<std::thread> pool;
    for (int i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    ExperimentSummary summary;
    std::string reports = std::string(io::kReportHeader) + "\n";
    std::string hashes = "snr_db,trial,method,init_hash\n";
    for (auto& cell : results)
        for (auto& row : cell) {
            const auto& r = row.report;
            reports += io::report_row(r.method, r.snr_db, r.re, r.tv, r.success, r.seed, r.runtime) + "\n";
            hashes += io::fmt(r.snr_db) + "," + std::to_string(row.trial) + "," + r.method + "," + row.init_hash + "\n";
            summary.rows.push_back(std::move(row));
        }

    // Aggregate: per SNR, per method in the fixed order admm, em, admm+em.
    std::vector<std::string> order;
    for (const char* m : {"admm", "em", "admm+em"})
        if (std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end()) order.emplace_back(m);
    std::string agg = "snr_db";
    for (const auto& m : order) agg += ",re_mean_" + m + ",re_std_" + m + ",tv_mean_" + m + ",tv_std_" + m;
    for (const auto& m : order) agg += ",success_" + m;
    agg += "\n";
    for (double snr : cfg.snrs_db) {
        std::string line = io::fmt(snr);
        std::string rates;
        for (const auto& m : order) {
            std::vector<double> re, tv;
            std::size_t ok = 0, total = 0;
            for (const auto& row : summary.rows) {
                if (row.report.method != m || row.report.snr_db != snr) continue;
                ++total;
                ok += row.report.success ? 1 : 0;
                if (std::isfinite(row.report.re)) re.push_back(row.report.re);
                if (std::isfinite(row.report.tv)) tv.push_back(row.report.tv);
            }
            double rm, rs, tm, ts;
            detail::mean_std(re, rm, rs);
            detail::mean_std(tv, tm, ts);
            line += "," + io::fmt(rm) + "," + io::fmt(rs) + "," + io::fmt(tm) + "," + io::fmt(ts);
            rates += "," + io::fmt(total ? static_cast<double>(ok) / static_cast<double>(total) : 0.0);
        }
        agg += line + rates + "\n";
    }

    io::write_file(out_dir / "reports.csv", reports);
    io::write_file(out_dir / "init_hashes.csv", hashes);
    io::write_file(out_dir / "aggregate.csv", agg);
    json m;
    m["command"] = "experiment";
    m["config"] = cfg.to_json();
    m["config_hash"] = io::git_blob_hash(cfg.to_json().dump());
    m["outputs"] = {{"reports.csv", io::git_blob_hash(reports)},
                    {"init_hashes.csv", io::git_blob_hash(hashes)},
                    {"aggregate.csv", io::git_blob_hash(agg)}};
    io::write_file(out_dir / "manifest.json", m.dump(2) + "\n");
    log << "experiment: " << summary.rows.size() << " runs over " << cfg.snrs_db.size() << " SNRs x " << cfg.trials
        << " trials\n"
        << agg;
    return summary;
}

}  // namespace uvtomo
