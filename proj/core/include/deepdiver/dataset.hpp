#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepdiver/agent.hpp"
#include "deepdiver/record.hpp"
#include "deepdiver/reward.hpp"

namespace deepdiver::dataset {

inline constexpr int kTaggingAttempts = 4;

/// 4 -> Easy, 2 or 3 -> Medium, 1 -> Hard, 0 -> Outlier.
/// Throws std::out_of_range outside [0, 4].
Difficulty tag_difficulty(int n_correct);

/// One tagging attempt, as written to the audit file.
struct TaggingAttempt {
    std::string id;
    int attempt = 1;  ///< 1..4
    std::optional<std::string> answer;
    std::array<bool, reward::kStrictRounds> judgments{};
    bool correct = false;
    std::string termination;
};

nlohmann::json to_json(const TaggingAttempt& a);

struct TaggingResult {
    std::vector<QARecord> records;          ///< input order, difficulty set
    std::vector<TaggingAttempt> audit;      ///< record order, then attempt order
};

/// Every record gets exactly four episodes; an attempt is correct when it
/// produced an answer and the strict grader accepts it. Backend failures make
/// the attempt incorrect. Records run in parallel on `workers` threads.
TaggingResult run_tagging(const std::vector<QARecord>& records, const agent::AgentConfig& config,
                          backends::ModelBackend& model, search::SearchBackend& search, reward::Grader& grader,
                          std::size_t workers = 1);

// ---------------------------------------------------------------------------
// Mixture selection
// ---------------------------------------------------------------------------

using Cell = std::pair<Category, Difficulty>;

struct MixtureSpec {
    std::map<Cell, int> targets;  ///< missing cells have target 0
    std::uint64_t seed = 0;
};

/// {"seed": n, "targets": {"CrossPageQA": {"Easy": 10, ...}, ...}}
MixtureSpec mixture_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const MixtureSpec& spec);

struct Shortfall {
    Cell cell;
    int target = 0;
    int available = 0;
};

struct MixtureResult {
    std::vector<QARecord> selected;  ///< cell order, then sampled order
    std::vector<Shortfall> shortfalls;
};

/// Per cell, seeded sampling without replacement up to the target. Records
/// without a difficulty are never selected.
MixtureResult select_mixture(const std::vector<QARecord>& records, const MixtureSpec& spec);

}  // namespace deepdiver::dataset
