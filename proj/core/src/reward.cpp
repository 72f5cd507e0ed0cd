#include "deepdiver/reward.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>

#include <spdlog/spdlog.h>

#include "deepdiver/common.hpp"
#include "deepdiver/prompts.hpp"

namespace deepdiver::reward {

using nlohmann::json;

const char* to_string(GraderMode mode) { return mode == GraderMode::Loose ? "Loose" : "Strict"; }

json to_json(const RewardBreakdown& r) {
    return {{"format", r.format}, {"accuracy", r.accuracy}, {"extra_search_bonus", r.extra_search_bonus}, {"total", r.total}};
}

double loose_reward(const LooseVerdict& verdict) { return verdict.score >= kLooseThreshold ? 1.0 : 0.0; }

int strict_reward(const StrictVerdict& verdict) {
    const auto positives = std::count(verdict.judgments.begin(), verdict.judgments.end(), true);
    return positives >= kStrictMajority ? 1 : 0;
}

double accuracy_reward(const Verdict& verdict) {
    if (const auto* loose = std::get_if<LooseVerdict>(&verdict)) return loose_reward(*loose);
    return static_cast<double>(strict_reward(std::get<StrictVerdict>(verdict)));
}

GraderMode reward_mode_at(int step, const ScheduleConfig& schedule) {
    return step < schedule.switch_step ? GraderMode::Loose : GraderMode::Strict;
}

int format_reward(const agent::Trajectory& trajectory, bool strict_format) {
    if (trajectory.terminated_by != agent::Termination::Answered) return 0;
    if (strict_format && !trajectory.warnings.empty()) return 0;
    return 1;
}

std::vector<double> extra_search_bonus(std::span<const SearchOutcome> group) {
    std::vector<double> bonus(group.size(), 0.0);
    const bool search_free_success = std::any_of(group.begin(), group.end(), [](const auto& o) { return !o.used_search && o.correct; });
    const bool search_success = std::any_of(group.begin(), group.end(), [](const auto& o) { return o.used_search && o.correct; });
    if (search_free_success || !search_success) return bonus;
    for (std::size_t i = 0; i < group.size(); ++i) {
        if (group[i].used_search && group[i].correct) bonus[i] = kExtraSearchReward;
    }
    return bonus;
}

std::vector<RewardBreakdown> compose_rewards(std::span<const RolloutScore> group) {
    std::vector<SearchOutcome> outcomes;
    outcomes.reserve(group.size());
    for (const auto& s : group) outcomes.push_back({s.used_search, s.format * s.accuracy == 1.0});
    const auto bonus = extra_search_bonus(outcomes);

    std::vector<RewardBreakdown> out;
    out.reserve(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
        RewardBreakdown r{group[i].format, group[i].accuracy, bonus[i], 0.0};
        r.total = r.format * r.accuracy + r.extra_search_bonus;
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

/// Decodes one UTF-8 code point starting at i; advances i.
char32_t next_code_point(std::string_view s, std::size_t& i) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = c >= 0xF0 ? 3 : c >= 0xE0 ? 2 : c >= 0xC0 ? 1 : 0;
    char32_t cp = extra == 3 ? (c & 0x07) : extra == 2 ? (c & 0x0F) : extra == 1 ? (c & 0x1F) : c;
    ++i;
    while (extra-- > 0 && i < s.size()) cp = (cp << 6) | (static_cast<unsigned char>(s[i++]) & 0x3F);
    return cp;
}

bool is_dropped(char32_t cp) {
    if (cp < 0x80) {
        const auto c = static_cast<char>(cp);
        return !((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'));
    }
    // CJK symbols and punctuation, full-width forms punctuation, general punctuation.
    if (cp >= 0x3000 && cp <= 0x303F) return true;
    if (cp >= 0x2000 && cp <= 0x206F) return true;
    if (cp >= 0xFF01 && cp <= 0xFF0F) return true;
    if (cp >= 0xFF1A && cp <= 0xFF20) return true;
    if (cp >= 0xFF3B && cp <= 0xFF40) return true;
    if (cp >= 0xFF5B && cp <= 0xFF65) return true;
    return cp == 0x00A0 || cp == 0x00B7;
}

template <typename Fn>
void for_each_match(std::string_view text, const std::regex& re, Fn fn) {
    const std::string s(text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) fn(*it);
}

const std::regex& loose_score_re() {
    static const std::regex re(R"re("得分"\s*(?::|：)\s*"?(-?[0-9]+(\.[0-9]+)?))re");
    return re;
}

const std::regex& loose_reason_re() {
    static const std::regex re(R"re("打分理由"\s*(?::|：)\s*"((?:[^"\\]|\\.)*)")re");
    return re;
}

const std::regex& strict_re() {
    static const std::regex re("回复正确性(?:\"|'|”|’)?\\s*(?::|：)\\s*(?:\"|'|“|‘)?(正确|错误)");
    return re;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t start = i;
        const char32_t cp = next_code_point(text, i);
        if (is_dropped(cp)) continue;
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp >= 'A' && cp <= 'Z' ? cp - 'A' + 'a' : cp));
        } else {
            out.append(text.substr(start, i - start));
        }
    }
    return out;
}

std::string render_checklist(const std::vector<std::string>& checklist) {
    std::string out;
    for (std::size_t i = 0; i < checklist.size(); ++i) {
        if (i) out += '\n';
        out += "- " + checklist[i];
    }
    return out;
}

std::optional<int> parse_loose_score(std::string_view reply) {
    std::optional<double> value;
    for_each_match(reply, loose_score_re(), [&](const std::smatch& m) { value = std::stod(m[1].str()); });
    if (!value) return std::nullopt;
    return std::clamp(static_cast<int>(std::lround(*value)), 1, 10);
}

std::string parse_loose_rationale(std::string_view reply) {
    std::string rationale;
    for_each_match(reply, loose_reason_re(), [&](const std::smatch& m) { rationale = m[1].str(); });
    return rationale;
}

std::optional<bool> parse_strict_judgment(std::string_view reply) {
    std::optional<bool> verdict;
    for_each_match(reply, strict_re(), [&](const std::smatch& m) { verdict = m[1].str() == "正确"; });
    return verdict;
}

Verdict grade(const dataset::QARecord& record, const std::string& answer, GraderMode mode, backends::ModelBackend& judge,
              const backends::RequestContext& ctx) {
    const std::map<std::string, std::string, std::less<>> slots = {{"query", record.question},
                                                                   {"solution", record.solution},
                                                                   {"checklist", render_checklist(record.checklist)},
                                                                   {"response", answer}};
    backends::RequestContext call = ctx;

    if (mode == GraderMode::Loose) {
        call.purpose = "loose";
        const std::string prompt = prompts::render(prompts::loose_grader(), slots);
        for (int ask = 0; ask < 2; ++ask) {
            const std::string reply = judge.judge(prompt, call);
            if (const auto score = parse_loose_score(reply)) return LooseVerdict{*score, parse_loose_rationale(reply)};
        }
        spdlog::warn("record {}: loose grader reply has no 得分 field after one re-ask; scoring 1", record.id);
        return LooseVerdict{1, "unparseable grader reply"};
    }

    StrictVerdict verdict;
    for (int round = 1; round <= kStrictRounds; ++round) {
        call.purpose = "strict-" + std::to_string(round);
        const std::string prompt = prompts::render(prompts::strict_grader(round), slots);
        std::optional<bool> judgment;
        for (int ask = 0; ask < 2 && !judgment; ++ask) judgment = parse_strict_judgment(judge.judge(prompt, call));
        if (!judgment) spdlog::warn("record {}: strict grader round {} unparseable after one re-ask; counting it negative", record.id, round);
        verdict.judgments[static_cast<std::size_t>(round - 1)] = judgment.value_or(false);
    }
    return verdict;
}

Verdict LlmGrader::grade(const dataset::QARecord& record, const std::string& answer, GraderMode mode,
                         const backends::RequestContext& ctx) {
    return reward::grade(record, answer, mode, judge_, ctx);
}

std::vector<std::string> accepted_answers(const dataset::QARecord& record) {
    std::set<std::string> out;
    auto add = [&](std::string_view text) {
        auto n = normalize_answer(text);
        if (!n.empty()) out.insert(std::move(n));
    };
    add(record.solution);
    std::string_view sol = record.solution;
    for (std::size_t pos = 0; pos <= sol.size();) {
        const auto slash = sol.find('/', pos);
        add(sol.substr(pos, slash == std::string_view::npos ? std::string_view::npos : slash - pos));
        if (slash == std::string_view::npos) break;
        pos = slash + 1;
    }
    for (const auto& item : record.checklist) {
        for (std::string_view prefix : {"alias:", "Alias:", "别名：", "别名:"}) {
            if (std::string_view(item).starts_with(prefix)) add(std::string_view(item).substr(prefix.size()));
        }
    }
    return {out.begin(), out.end()};
}

bool OracleGrader::matches(const dataset::QARecord& record, std::string_view answer) const {
    const std::string normalized = normalize_answer(answer);
    if (normalized.empty()) return false;
    for (const auto& candidate : accepted_answers(record)) {
        if (normalized == candidate) return true;
        if (matching_ == Matching::Relaxed && normalized.find(candidate) != std::string::npos) return true;
    }
    return false;
}

Verdict OracleGrader::grade(const dataset::QARecord& record, const std::string& answer, GraderMode mode,
                            const backends::RequestContext& /*ctx*/) {
    const bool ok = matches(record, answer);
    if (mode == GraderMode::Loose) return LooseVerdict{ok ? 10 : 1, ok ? "oracle match" : "oracle mismatch"};
    return StrictVerdict{{ok, ok, ok}};
}

Verdict ScheduledGrader::grade(const dataset::QARecord& record, const std::string& answer, GraderMode mode,
                               const backends::RequestContext& ctx) {
    return mode == GraderMode::Loose ? loose_.grade(record, answer, mode, ctx) : strict_.grade(record, answer, mode, ctx);
}

}  // namespace deepdiver::reward
