#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepdiver/backends.hpp"
#include "deepdiver/record.hpp"
#include "deepdiver/search.hpp"

namespace deepdiver::agent {

using search::Document;

struct SearchAction {
    std::vector<std::string> queries;  ///< 1..max_queries_per_round, each non-empty
    bool operator==(const SearchAction&) const = default;
};

struct AnswerAction {
    std::string text;  ///< non-empty
    bool operator==(const AnswerAction&) const = default;
};

using Action = std::variant<SearchAction, AnswerAction>;

inline bool is_search(const Action& a) { return std::holds_alternative<SearchAction>(a); }

struct Round {
    int index = 1;  ///< 1-based
    std::string reasoning;
    Action action;
    std::vector<Document> documents;  ///< empty unless the action is a search
    std::string raw_turn;             ///< model text exactly as received
    bool search_rejected = false;     ///< search attempted while search was disabled
};

/// Reasoning history H_{t-1}: the question plus every completed round.
struct History {
    std::string question;
    std::vector<Round> rounds;
    bool search_enabled = true;
};

enum class Termination { Answered, RoundCapExceeded, BackendError, ParseFailure };
enum class Provenance { Prompt, ModelGenerated, Retrieved };

const char* to_string(Termination t);
const char* to_string(Provenance p);
Termination termination_from_string(std::string_view name);
Provenance provenance_from_string(std::string_view name);

struct TokenSpan {
    std::string text;
    Provenance provenance = Provenance::Prompt;
    bool operator==(const TokenSpan&) const = default;
};

struct Trajectory {
    std::string record_id;
    int attempt = 1;
    std::string question;
    std::vector<Round> rounds;
    std::optional<std::string> final_answer;
    Termination terminated_by = Termination::RoundCapExceeded;
    /// Concatenated, these reproduce the full episode transcript.
    std::vector<TokenSpan> token_spans;
    bool used_search = false;
    /// Non-fatal format issues (query truncation, rejected searches).
    std::vector<std::string> warnings;
    /// Diagnostic for BackendError / ParseFailure terminations.
    std::string error;
    /// The raw turn that failed to parse, when terminated_by = ParseFailure.
    std::optional<std::string> unparsed_turn;

    std::string transcript() const;
    /// Number of rounds whose action is a search.
    int search_rounds() const;
    /// Total queries issued across all search rounds.
    int search_queries() const;
};

struct AgentConfig {
    int max_rounds = 7;
    int max_queries_per_round = 5;
    int top_k_per_query = search::kDefaultTopK;
    double sampling_temperature = 0.9;
    /// When false the prompt forbids tool calls and searches are rejected.
    bool search_enabled = true;

    /// Throws std::invalid_argument when a field is out of range.
    void validate() const;
};

AgentConfig agent_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const AgentConfig& config);

// ---------------------------------------------------------------------------
// Turn format
// ---------------------------------------------------------------------------

struct ParsedTurn {
    std::string reasoning;
    Action action;
    std::vector<std::string> warnings;
};

/// Splits "<thinking>...</thinking>tail". A tail containing a parseable
/// web_search|{'search_queries': [...]} call is a Search; any other non-empty
/// tail is an Answer. Extra queries beyond max_queries_per_round are dropped
/// with a warning. Throws ParseError.
ParsedTurn parse_turn(std::string_view raw, const AgentConfig& config);

/// Inverse of parse_turn for well-formed actions.
std::string format_turn(std::string_view reasoning, const Action& action);

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

inline constexpr std::string_view kResultsHeader = "[检索结果开始]\n";
inline constexpr std::string_view kResultsFooter = "[检索结果结束]";
inline constexpr std::string_view kNoResults = "（无检索结果）\n";

/// The iterative-RAG instruction prompt with the question substituted.
std::string system_prompt(std::string_view question, bool search_enabled = true);

/// One numbered block: "[n] Webpage title: ...\nContent: ...\nSource: ...\n".
std::string render_document(const Document& doc, int number);

/// Chat messages for the next model call. Each search round is followed by
/// a user turn with its documents, numbered continuously across the episode.
/// `new_documents` are the results for the last round in `history`.
std::vector<backends::ChatMessage> conversation(const History& history, std::span<const Document> new_documents);

/// Span-level view of the same conversation.
std::vector<TokenSpan> conversation_spans(const History& history, std::span<const Document> new_documents);

/// ChatML serialization of conversation(history, new_documents).
std::string render_next_prompt(const History& history, std::span<const Document> new_documents);

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

/// Runs the reason/search loop until the model answers, a turn fails to
/// parse, a backend fails, or max_rounds is reached. Never throws for
/// backend or parse failures; they end up in terminated_by.
Trajectory run_episode(const dataset::QARecord& record, backends::ModelBackend& model,
                       search::SearchBackend& search, const AgentConfig& config, int attempt = 1);

/// Per-query top-k lists concatenated in query order, duplicate URLs
/// dropped (first occurrence wins).
std::vector<Document> merge_results(const search::ResultLists& lists, int k);

// ---------------------------------------------------------------------------
// Loss masking
// ---------------------------------------------------------------------------

/// Splits text into tokens whose concatenation is exactly the input.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<std::string_view> split(std::string_view text) const = 0;
};

/// ASCII alphanumeric runs, whitespace runs, single ASCII punctuation marks
/// and single UTF-8 code points for everything else.
class SimpleTokenizer final : public Tokenizer {
public:
    std::vector<std::string_view> split(std::string_view text) const override;
};

/// mask[i] is true iff token i lies in a ModelGenerated span. Each span is
/// tokenized on its own, so tokens never straddle a boundary.
std::vector<bool> provenance_mask(const Trajectory& trajectory, const Tokenizer& tokenizer);

/// Same mask from a tokenization of the whole transcript. Throws
/// SpanAlignmentError if a token crosses a provenance boundary.
std::vector<bool> provenance_mask_joint(const Trajectory& trajectory, const Tokenizer& tokenizer);

// ---------------------------------------------------------------------------
// Transcript dump
// ---------------------------------------------------------------------------

nlohmann::json to_json(const Trajectory& trajectory);
Trajectory trajectory_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const Document& doc);
Document document_from_json(const nlohmann::json& doc);

}  // namespace deepdiver::agent
