#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace deepdiver::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kBackendFailure = 2, kDataError = 3 };

struct CommandResult {
    std::vector<std::filesystem::path> outputs;
    std::string summary;  ///< one line, printed to stdout
};

// Each command writes its files under config.output_dir and throws on
// failure; run_guarded maps exceptions to exit codes.

/// tagged.jsonl and tagging_audit.jsonl
CommandResult cmd_tag(const RunConfig& config, const std::filesystem::path& records);
/// trajectories.jsonl with n attempts per record
CommandResult cmd_rollout(const RunConfig& config, const std::filesystem::path& records, int n);
/// eval_report.json, eval_records.csv and eval_trajectories.jsonl
CommandResult cmd_eval(const RunConfig& config, const std::filesystem::path& records, std::optional<int> runs = {});
/// isolation_survivors.jsonl and isolation_report.json
CommandResult cmd_isolate(const RunConfig& config, const std::filesystem::path& records, std::optional<int> k = {});
/// mixture.jsonl and mixture_report.json
CommandResult cmd_mix(const RunConfig& config, const std::filesystem::path& tagged_records);
/// training_log.jsonl and toy_policy.json
CommandResult cmd_train_toy(const RunConfig& config, std::optional<int> steps = {});
/// behavior_counts.json
CommandResult cmd_behaviors(const RunConfig& config, const std::filesystem::path& trajectories,
                            const std::optional<std::filesystem::path>& records = {});
/// report_summary.csv, reward_curve.svg, search_curve.svg and, with an eval
/// report, accuracy_bars.svg
CommandResult cmd_report(const RunConfig& config, const std::filesystem::path& training_log,
                         const std::optional<std::filesystem::path>& eval_report = {});

/// Runs fn, prints the summary to out and any diagnostic to err.
int run_guarded(const std::function<CommandResult()>& fn, std::ostream& out, std::ostream& err);

/// Writes through a temporary file and renames, so readers never see a
/// partial file.
void write_file(const std::filesystem::path& path, const std::string& content);

std::vector<agent::Trajectory> read_trajectories(const std::filesystem::path& path);

// SVG rendering, exposed for tests.
struct Series {
    std::string label;
    std::vector<double> values;
};
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::vector<Series>& series);
std::string bar_chart_svg(const std::string& title, const std::vector<std::pair<std::string, double>>& bars);

}  // namespace deepdiver::cli
