// uvtomo: simulate tilt series, reconstruct from moments / EM, evaluate, run experiments.
#include <iostream>

#include <CLI11.hpp>

#include <uvtomo/pipeline.hpp>

namespace {

enum Exit { kOk = 0, kSolver = 1, kInput = 2 };

uvtomo::RunConfig resolve(const std::string& path, const std::optional<std::uint64_t>& seed,
                          const std::string& method) {
    uvtomo::RunConfig cfg = path.empty() ? uvtomo::parse_config(nlohmann::json::object()) : uvtomo::load_config(path);
    if (seed) cfg.seed = *seed;
    if (!method.empty()) cfg.method = method;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tomographic reconstruction from tilt series at unknown view angles"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", method;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    std::string batch_path, truth_path, estimate_path;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override the run seed");
        sub->add_option("--out", out_dir, "output directory");
    };

    auto* sim = app.add_subcommand("simulate", "generate a tilt-series batch and its ground truth");
    common(sim);

    auto* rec = app.add_subcommand("reconstruct", "estimate the object and view distribution from a batch");
    common(rec);
    rec->add_option("batch", batch_path, "batch file")->required();
    rec->add_option("--method", method, "admm | em | admm+em");

    auto* ev = app.add_subcommand("evaluate", "compare an estimate against ground truth");
    ev->add_option("truth", truth_path, "truth file")->required();
    ev->add_option("estimate", estimate_path, "estimate file")->required();
    ev->add_option("--out", out_dir, "output directory");

    auto* ex = app.add_subcommand("experiment", "run the methods x SNR x trial matrix");
    common(ex);
    ex->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInput;
    }

    try {
        if (*sim) {
            uvtomo::cmd_simulate(resolve(config_path, seed, ""), out_dir);
        } else if (*rec) {
            uvtomo::cmd_reconstruct(resolve(config_path, seed, method), batch_path, out_dir);
        } else if (*ev) {
            uvtomo::cmd_evaluate(truth_path, estimate_path, out_dir);
        } else if (*ex) {
            uvtomo::cmd_experiment(resolve(config_path, seed, ""), out_dir, threads);
        }
    } catch (const uvtomo::SolverError& e) {
        std::cerr << "solver failure: " << e.what() << "\n";
        return kSolver;
    } catch (const uvtomo::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kInput;
    } catch (const uvtomo::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kInput;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kInput;
    } catch (const uvtomo::DomainError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kInput;
    }
    return kOk;
}
