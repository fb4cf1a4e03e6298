#include "ddcs/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace ddcs;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> jobs;
    bool dry_run = false;
};

void add_common(CLI::App* app, Options& o)
{
    app->add_option("--config", o.config, "experiment configuration (JSON)")->required();
    app->add_option("--seed", o.seed, "root seed, overrides the config");
    app->add_option("--out", o.out, "output directory, overrides the config");
    app->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    app->add_flag("--dry-run", o.dry_run, "validate and print the planned stages only");
}

ExperimentConfig load(const Options& o)
{
    ExperimentConfig cfg = load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.output_dir = *o.out;
    if (o.jobs) cfg.jobs = *o.jobs;
    cfg.validate();
    return cfg;
}

void print_plan(const std::string& cmd, const ExperimentConfig& cfg)
{
    std::cout << "command: " << cmd << "\npreset: " << cfg.preset << "\nseed: " << cfg.seed
              << "\noutput: " << cfg.output_dir << "\nsizes:";
    for (Index T : cfg.sizes) std::cout << ' ' << T;
    std::cout << "\nstages:";
    if (cmd == "estimate-sweep") {
        std::cout << " collect -> represent (L = I) -> estimate {";
        for (std::size_t i = 0; i < cfg.sweep_methods.size(); ++i)
            std::cout << (i ? ", " : "") << to_string(cfg.sweep_methods[i]);
        std::cout << "} -> parameter error\nreplicates: " << cfg.replicates << '\n';
    } else {
        std::cout << " collect -> represent -> estimate (" << to_string(cfg.method)
                  << ") -> noise -> mean steer -> covariance program -> evaluate (" << cfg.rollouts
                  << " rollouts)\n";
        if (cmd == "sweep-steer") std::cout << "replicates: " << cfg.replicates << '\n';
    }
}

int cmd_estimate_sweep(const ExperimentConfig& cfg)
{
    const std::filesystem::path dir = cfg.output_dir;
    const auto rows = run_estimate_sweep(cfg, cfg.jobs);
    write_text(dir / "rows.csv", estimate_rows_csv(rows));
    const std::string summary = estimate_summary_csv(rows);
    write_text(dir / "summary.csv", summary);
    Json man;
    man["schema_version"] = kSchemaVersion;
    man["kind"] = "estimate_sweep";
    man["seed"] = cfg.seed;
    man["files"] = {"rows.csv", "summary.csv"};
    man["config"] = config_to_json(cfg);
    write_json(dir / "manifest.json", man);
    std::cout << summary;
    return exit_code::success;
}

int cmd_steer(const ExperimentConfig& cfg)
{
    const Index T = cfg.sizes.front();
    const SteerOutcome out = run_steer_pipeline(cfg, T, replicate_seed(cfg.seed, T, 0), cfg.jobs);
    write_steer_artifacts(cfg.output_dir, out, cfg);
    std::cout << "status: " << out.status << "\nterminal_mean_error: " << out.report.terminal_mean_error
              << "\nlambda_max_ratio: " << out.report.lambda_max_ratio
              << "\nfrobenius_distance: " << out.report.frobenius_distance << '\n';
    if (out.exit_code != exit_code::success)
        std::cerr << "covariance_program: " << out.status << ": " << out.covariance.message << '\n';
    return out.exit_code;
}

int cmd_sweep_steer(const ExperimentConfig& cfg)
{
    const auto rows = run_sweep_steer(cfg, cfg.output_dir, cfg.jobs);
    std::cout << sweep_summary_csv(rows);
    return exit_code::success;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Data-driven output-feedback distribution steering"};
    app.require_subcommand(1);
    Options o;
    auto* est = app.add_subcommand("estimate-sweep", "estimator error over dataset sizes and replicates");
    auto* steer = app.add_subcommand("steer", "full pipeline on one dataset");
    auto* sweep = app.add_subcommand("sweep-steer", "steering pipeline over dataset sizes and replicates");
    auto* val = app.add_subcommand("validate-config", "check a configuration file");
    for (auto* s : {est, steer, sweep, val}) add_common(s, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_code::config_error;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        const ExperimentConfig cfg = load(o);
        if (cmd == "validate-config") {
            std::cout << "config ok: preset " << cfg.preset << ", n=" << cfg.system.n() << ", m=" << cfg.system.m()
                      << ", p=" << cfg.system.p() << ", ell=" << cfg.ell << '\n';
            return exit_code::success;
        }
        if (o.dry_run) {
            print_plan(cmd, cfg);
            return exit_code::success;
        }
        if (cmd == "estimate-sweep") return cmd_estimate_sweep(cfg);
        if (cmd == "steer") return cmd_steer(cfg);
        return cmd_sweep_steer(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_code::config_error;
    } catch (const StageError& e) {
        std::cerr << "stage " << e.what() << '\n';
        return e.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code::numerical_failure;
    }
}
