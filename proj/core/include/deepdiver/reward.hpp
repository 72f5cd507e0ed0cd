#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepdiver/agent.hpp"
#include "deepdiver/backends.hpp"
#include "deepdiver/record.hpp"

namespace deepdiver::reward {

/// Scores at or above this count as correct for the loose grader.
inline constexpr int kLooseThreshold = 6;
inline constexpr int kStrictRounds = 3;
inline constexpr int kStrictMajority = 2;
inline constexpr double kExtraSearchReward = 1.0;

struct LooseVerdict {
    int score = 1;  ///< 1..10
    std::string rationale;
    bool operator==(const LooseVerdict&) const = default;
};

struct StrictVerdict {
    std::array<bool, kStrictRounds> judgments{};
    bool operator==(const StrictVerdict&) const = default;
};

using Verdict = std::variant<LooseVerdict, StrictVerdict>;

enum class GraderMode { Loose, Strict };
const char* to_string(GraderMode mode);

struct ScheduleConfig {
    int switch_step = 80;  ///< first step graded strictly
};

struct RewardBreakdown {
    int format = 0;
    double accuracy = 0.0;
    double extra_search_bonus = 0.0;
    double total = 0.0;  ///< format * accuracy + extra_search_bonus

    bool operator==(const RewardBreakdown&) const = default;
};

nlohmann::json to_json(const RewardBreakdown& r);

double loose_reward(const LooseVerdict& verdict);
int strict_reward(const StrictVerdict& verdict);
/// loose_reward or strict_reward, as a real.
double accuracy_reward(const Verdict& verdict);

GraderMode reward_mode_at(int step, const ScheduleConfig& schedule);

/// 1 iff the episode ended with an answer; with strict_format, any parser
/// warning (query truncation, ignored text, rejected search) also fails it.
int format_reward(const agent::Trajectory& trajectory, bool strict_format = false);

struct SearchOutcome {
    bool used_search = false;
    bool correct = false;
};

/// The group bonus: when no search-free rollout is correct and at least one
/// search-enabled rollout is, each correct search-enabled rollout gets 1.0.
std::vector<double> extra_search_bonus(std::span<const SearchOutcome> group);

struct RolloutScore {
    int format = 0;
    double accuracy = 0.0;
    bool used_search = false;
};

/// Applies the composition rule to a whole group. A rollout counts as correct
/// for the bonus when format * accuracy == 1.
std::vector<RewardBreakdown> compose_rewards(std::span<const RolloutScore> group);

// ---------------------------------------------------------------------------
// Grading
// ---------------------------------------------------------------------------

/// Case-folded answer with ASCII and common CJK punctuation and all
/// whitespace removed.
std::string normalize_answer(std::string_view text);

/// Checklist items joined one per line as "- item".
std::string render_checklist(const std::vector<std::string>& checklist);

/// Last "得分" value in a loose-grader reply, rounded and clamped to [1, 10].
std::optional<int> parse_loose_score(std::string_view reply);
std::string parse_loose_rationale(std::string_view reply);
/// Last "回复正确性" value in a strict-grader reply.
std::optional<bool> parse_strict_judgment(std::string_view reply);

class Grader {
public:
    virtual ~Grader() = default;
    /// ctx identifies the record and attempt; purpose is set by the grader.
    virtual Verdict grade(const dataset::QARecord& record, const std::string& answer, GraderMode mode,
                          const backends::RequestContext& ctx) = 0;
};

/// One judge call with the loose template, or three with the three strict
/// templates. An unparseable reply is asked again once, then scored as
/// negative (score 1 / judgment false).
Verdict grade(const dataset::QARecord& record, const std::string& answer, GraderMode mode,
              backends::ModelBackend& judge, const backends::RequestContext& ctx);

class LlmGrader final : public Grader {
public:
    explicit LlmGrader(backends::ModelBackend& judge) : judge_(judge) {}
    Verdict grade(const dataset::QARecord& record, const std::string& answer, GraderMode mode,
                  const backends::RequestContext& ctx) override;

private:
    backends::ModelBackend& judge_;
};

/// Deterministic judge. Exact: the normalized answer equals the normalized
/// solution or an alias. Relaxed: it contains one. Aliases come from
/// " / "-separated alternatives in the solution and checklist items written
/// "alias: X" or "别名：X".
class OracleGrader final : public Grader {
public:
    enum class Matching { Exact, Relaxed };

    explicit OracleGrader(Matching matching = Matching::Exact) : matching_(matching) {}

    bool matches(const dataset::QARecord& record, std::string_view answer) const;

    Verdict grade(const dataset::QARecord& record, const std::string& answer, GraderMode mode,
                  const backends::RequestContext& ctx) override;

private:
    Matching matching_;
};

/// Routes Loose-mode requests to one grader and Strict-mode ones to another.
class ScheduledGrader final : public Grader {
public:
    ScheduledGrader(Grader& loose, Grader& strict) : loose_(loose), strict_(strict) {}
    Verdict grade(const dataset::QARecord& record, const std::string& answer, GraderMode mode,
                  const backends::RequestContext& ctx) override;

private:
    Grader& loose_;
    Grader& strict_;
};

/// Candidate answers accepted for a record, normalized.
std::vector<std::string> accepted_answers(const dataset::QARecord& record);

}  // namespace deepdiver::reward
