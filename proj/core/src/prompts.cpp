#include "deepdiver/prompts.hpp"

#include <stdexcept>

#include "prompt_data.hpp"

namespace deepdiver::prompts {

std::string_view iterative_rag() { return detail::kIterativeRag; }
std::string_view search_disabled_notice() { return detail::kSearchDisabledNotice; }
std::string_view search_rejected_turn() { return detail::kSearchRejectedTurn; }
std::string_view loose_grader() { return detail::kLooseGrader; }

std::string_view strict_grader(int round) {
    switch (round) {
        case 1: return detail::kStrictGrader1;
        case 2: return detail::kStrictGrader2;
        case 3: return detail::kStrictGrader3;
    }
    throw std::out_of_range("strict grader round must be 1, 2 or 3");
}

std::string_view behavior_reflection() { return detail::kBehaviorReflection; }
std::string_view behavior_conflict() { return detail::kBehaviorConflict; }
std::string_view behavior_verification() { return detail::kBehaviorVerification; }

std::string render(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& slots) {
    const auto is_ident = [](char c) { return c == '_' || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'); };
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '$') {
            std::size_t j = i + 1;
            while (j < tmpl.size() && is_ident(tmpl[j])) ++j;
            if (const auto it = slots.find(tmpl.substr(i + 1, j - i - 1)); j > i + 1 && it != slots.end()) {
                out += it->second;
                i = j;
                continue;
            }
        }
        out += tmpl[i++];
    }
    return out;
}

}  // namespace deepdiver::prompts
