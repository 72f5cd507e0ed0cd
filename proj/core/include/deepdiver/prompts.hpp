#pragma once

#include <map>
#include <string>
#include <string_view>

// Prompt templates are stored under core/prompts/ and compiled into the
// library. Slots are written as $name.

namespace deepdiver::prompts {

std::string_view iterative_rag();
std::string_view search_disabled_notice();
std::string_view search_rejected_turn();
std::string_view loose_grader();
/// round is 1, 2 or 3.
std::string_view strict_grader(int round);
std::string_view behavior_reflection();
std::string_view behavior_conflict();
std::string_view behavior_verification();

/// Single-pass substitution: slot values are never rescanned, so a question
/// containing "$solution" stays literal. Unknown slots are left untouched.
std::string render(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& slots);

}  // namespace deepdiver::prompts
