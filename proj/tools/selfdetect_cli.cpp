// Command-line experiment runner: `run` executes a config end to end,
// `validate` checks a dataset file, `report` recomputes summaries from a
// results directory.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "selfdetect/harness.hpp"

namespace {

void print_summaries(const selfdetect::ExperimentResult& result) {
    std::printf("%-20s %10s %10s %8s %6s %10s %8s\n", "strategy", "auroc", "prauc", "ece", "n",
                "api_calls", "fail%");
    for (const auto& s : result.summaries) {
        auto num = [](std::optional<double> v) {
            char buf[32];
            if (!v) return std::string("undefined");
            std::snprintf(buf, sizeof buf, "%.4f", *v);
            return std::string(buf);
        };
        std::printf("%-20s %10s %10s %8.4f %6zu %10lld %8.3f\n", s.id.c_str(),
                    num(s.report.auroc).c_str(), num(s.report.prauc).c_str(), s.report.ece,
                    s.report.n, s.api_calls, s.report.parse_failure_rate * 100.0);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"selfdetect - black-box LLM answer self-detection toolkit"};
    app.require_subcommand(1);

    // run
    std::string config_path;
    std::string strategies_csv;
    std::string output_dir;
    std::string target_mode;
    long long limit = -1;
    long long seed = -1;
    bool trace = false;
    bool lenient = false;
    auto* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config_path, "experiment config (JSON)")->required();
    run->add_option("--strategies", strategies_csv, "comma-separated strategy ids (override)");
    run->add_option("--limit", limit, "seeded sample limit");
    run->add_option("--seed", seed, "rng seed override");
    run->add_option("--output", output_dir, "output directory override");
    run->add_option("--target-mode", target_mode, "target answer mode: greedy|sc|cc");
    run->add_flag("--trace", trace, "store full prompt/response traces");
    run->add_flag("--lenient", lenient, "skip malformed dataset lines instead of aborting");

    // validate
    std::string dataset_path;
    bool val_lenient = false;
    auto* validate_cmd = app.add_subcommand("validate", "validate a JSONL dataset");
    validate_cmd->add_option("dataset", dataset_path, "dataset file (JSONL)")->required();
    validate_cmd->add_flag("--lenient", val_lenient, "report malformed lines without failing");

    // report
    std::string results_dir;
    int ece_bins = 10;
    auto* report_cmd = app.add_subcommand("report", "recompute reports from per-instance results");
    report_cmd->add_option("results-dir", results_dir, "directory with per_instance.jsonl")
        ->required();
    report_cmd->add_option("--ece-bins", ece_bins, "ECE bin count");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            auto cfg = selfdetect::load_experiment_config(config_path);
            if (!strategies_csv.empty()) {
                std::vector<selfdetect::StrategyRequest> picked;
                std::stringstream ss(strategies_csv);
                std::string id;
                while (std::getline(ss, id, ',')) {
                    selfdetect::StrategyRequest req;
                    req.id = id;
                    for (const auto& existing : cfg.strategies)
                        if (existing.id == id) req.config = existing.config;
                    picked.push_back(std::move(req));
                }
                cfg.strategies = std::move(picked);
            }
            if (limit >= 0) cfg.sample_limit = static_cast<std::size_t>(limit);
            if (seed >= 0) cfg.rng_seed = static_cast<std::uint64_t>(seed);
            if (!output_dir.empty()) cfg.output_dir = output_dir;
            if (!target_mode.empty())
                cfg.target_mode = selfdetect::target_mode_from_string(target_mode);
            if (trace) cfg.trace = true;
            if (lenient) cfg.lenient = true;

            auto result = selfdetect::run_experiment(cfg);
            selfdetect::emit_report(result, cfg);
            print_summaries(result);
            std::printf("\nloaded %zu, selected %zu, live backend calls %llu\n", result.loaded,
                        result.selected,
                        static_cast<unsigned long long>(result.live_calls));
            for (const auto& [reason, count] : result.skip_reasons)
                std::printf("skipped (%s): %zu\n", reason.c_str(), count);
            std::printf("reports written to %s\n", cfg.output_dir.c_str());
        } else if (*validate_cmd) {
            auto ds = selfdetect::load_dataset(dataset_path, val_lenient);
            std::printf("ok: %zu instances, %zu counterfactual pairs", ds.instances.size(),
                        ds.pairs.size());
            if (ds.skipped_lines) std::printf(", %zu malformed lines skipped", ds.skipped_lines);
            std::printf("\n");
        } else if (*report_cmd) {
            auto result = selfdetect::reload_results(results_dir, ece_bins);
            selfdetect::ExperimentConfig cfg;
            cfg.output_dir = results_dir;
            cfg.ece_bins = ece_bins;
            selfdetect::emit_report(result, cfg, /*write_per_instance=*/false);
            print_summaries(result);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
