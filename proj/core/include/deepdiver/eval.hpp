#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepdiver/agent.hpp"
#include "deepdiver/record.hpp"
#include "deepdiver/reward.hpp"

namespace deepdiver::eval {

inline constexpr std::string_view kEasyMedium = "Easy&Medium";
inline constexpr std::string_view kHardOutliers = "Hard&Outliers";

struct SubsetStats {
    int n = 0;  ///< records in the subset
    double accuracy = 0.0;
    double avg_search_rounds = 0.0;
    double avg_search_queries = 0.0;
};

struct EvalReport {
    int n = 0;
    int runs = 1;
    double accuracy = 0.0;  ///< mean of per-run accuracies
    double avg_search_rounds = 0.0;
    double avg_search_queries = 0.0;
    std::vector<double> run_accuracy;
    /// Keyed by category name, "Easy&Medium" and "Hard&Outliers".
    std::map<std::string, SubsetStats> per_subset;
};

nlohmann::json to_json(const EvalReport& report);

/// One (record, run) pair.
struct RecordOutcome {
    std::string id;
    int run = 1;
    dataset::Category category = dataset::Category::Other;
    std::optional<dataset::Difficulty> difficulty;
    agent::Termination termination = agent::Termination::RoundCapExceeded;
    std::optional<std::string> answer;
    bool correct = false;
    int search_rounds = 0;
    int search_queries = 0;
};

struct EvalResult {
    EvalReport report;
    std::vector<RecordOutcome> outcomes;        ///< record order, then run order
    std::vector<agent::Trajectory> trajectories;  ///< same order as outcomes
};

/// Header plus one line per outcome.
std::string outcomes_csv(const std::vector<RecordOutcome>& outcomes);

/// Runs every record `runs` times and grades answers strictly. Backend
/// failures make that run incorrect.
EvalResult evaluate(const std::vector<dataset::QARecord>& records, backends::ModelBackend& model, search::SearchBackend& search,
                    const agent::AgentConfig& config, reward::Grader& grader, int runs, std::size_t workers = 1);

/// Aggregates outcomes; search metrics depend only on the trajectories.
EvalReport summarize(const std::vector<RecordOutcome>& outcomes, int runs);

// ---------------------------------------------------------------------------

struct IsolationResult {
    std::vector<dataset::QARecord> survivors;  ///< input order
    std::map<std::string, bool> pass_a;         ///< pass@k per record id
    std::map<std::string, bool> pass_b;
};

/// Runs both models k times per record with search disabled (prompt notice,
/// rejected searches, no-op search backend). A record is dropped iff both
/// models pass@k under the strict grader.
IsolationResult isolation_filter(const std::vector<dataset::QARecord>& records, backends::ModelBackend& model_a,
                                 backends::ModelBackend& model_b, int k, reward::Grader& grader,
                                 const agent::AgentConfig& config, std::size_t workers = 1);

// ---------------------------------------------------------------------------

struct BehaviorCounts {
    double reflection_correction = 0.0;
    double conflict_resolution = 0.0;
    double verification_denoising = 0.0;
    int n = 0;  ///< trajectories counted
};

nlohmann::json to_json(const BehaviorCounts& counts);

/// Model turns and retrieved documents of a trajectory, in order.
std::string reasoning_chain(const agent::Trajectory& trajectory);

/// Last integer inside <count></count>.
std::optional<int> parse_count(std::string_view reply);

/// Mean per-trajectory counts for the three behaviors. Solutions are looked
/// up by record id (empty when unknown). An unparseable count is asked again
/// once, then taken as 0.
BehaviorCounts behavior_stats(const std::vector<agent::Trajectory>& trajectories,
                              const std::vector<dataset::QARecord>& records, backends::ModelBackend& judge,
                              std::size_t workers = 1);

}  // namespace deepdiver::eval
