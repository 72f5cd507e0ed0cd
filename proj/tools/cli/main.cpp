#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "commands.hpp"

namespace fs = std::filesystem;
using namespace deepdiver::cli;

int main(int argc, char** argv) {
    CLI::App app{"deepdiver: search-intensive QA agent, grading, toy GRPO and evaluation"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<std::string> out_dir;
    bool verbose = false;
    app.add_option("--config", config_path, "JSON run configuration")->required();
    app.add_option("--seed", seed, "Override the configured seed");
    app.add_option("--workers", workers, "Override the worker pool size");
    app.add_option("--out", out_dir, "Override the output directory");
    app.add_flag("-v,--verbose", verbose, "Debug logging to stderr");

    std::string records, trajectories, log_path;
    std::optional<std::string> extra;
    std::optional<int> runs, k, steps;
    int n = 1;

    auto* tag = app.add_subcommand("tag", "Tag records with pass@4 difficulty");
    tag->add_option("records", records, "Input records (JSONL)")->required();

    auto* rollout = app.add_subcommand("rollout", "Run n episodes per record and dump trajectories");
    rollout->add_option("records", records, "Input records (JSONL)")->required();
    rollout->add_option("-n", n, "Episodes per record")->default_val(1);

    auto* eval = app.add_subcommand("eval", "Strict-grader evaluation with search-intensity accounting");
    eval->add_option("records", records, "Input records (JSONL)")->required();
    eval->add_option("--runs", runs, "Runs per record (default from config)");

    auto* isolate = app.add_subcommand("isolate", "Drop records both models solve without search (pass@k)");
    isolate->add_option("records", records, "Input records (JSONL)")->required();
    isolate->add_option("-k", k, "Attempts per model (default from config)");

    auto* mix = app.add_subcommand("mix", "Select a training mixture from tagged records");
    mix->add_option("records", records, "Tagged records (JSONL)")->required();

    auto* train = app.add_subcommand("train-toy", "GRPO on the toy search environment");
    train->add_option("--steps", steps, "Override the number of steps");

    auto* behaviors = app.add_subcommand("behaviors", "Count reasoning behaviors in trajectories");
    behaviors->add_option("trajectories", trajectories, "Trajectories (JSONL)")->required();
    behaviors->add_option("--records", extra, "Records providing solutions");

    auto* report = app.add_subcommand("report", "Summary CSV and SVG plots from a training log");
    report->add_option("training_log", log_path, "training_log.jsonl")->required();
    report->add_option("--eval-report", extra, "eval_report.json for accuracy bars");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kConfigError;
    }

    spdlog::set_default_logger(spdlog::default_logger());
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

    return run_guarded(
        [&]() -> CommandResult {
            RunConfig config = load_run_config(config_path);
            Overrides o;
            o.seed = seed;
            o.workers = workers;
            if (out_dir) o.output_dir = fs::path(*out_dir);
            apply_overrides(config, o);

            const std::optional<fs::path> extra_path = extra ? std::optional<fs::path>(*extra) : std::nullopt;
            if (tag->parsed()) return cmd_tag(config, records);
            if (rollout->parsed()) return cmd_rollout(config, records, n);
            if (eval->parsed()) return cmd_eval(config, records, runs);
            if (isolate->parsed()) return cmd_isolate(config, records, k);
            if (mix->parsed()) return cmd_mix(config, records);
            if (train->parsed()) return cmd_train_toy(config, steps);
            if (behaviors->parsed()) return cmd_behaviors(config, trajectories, extra_path);
            return cmd_report(config, log_path, extra_path);
        },
        std::cout, std::cerr);
}
