#include "deepdiver/agent.hpp"

#include <set>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "deepdiver/common.hpp"
#include "deepdiver/prompts.hpp"

namespace deepdiver::agent {

using nlohmann::json;

namespace {

constexpr std::string_view kOpenTag = "<thinking>";
constexpr std::string_view kCloseTag = "</thinking>";
constexpr std::string_view kToolName = "web_search";
constexpr std::string_view kQueriesKey = "search_queries";

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
    std::size_t count = 0;
    for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) ++count;
    return count;
}

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

/// Cursor over the tool-call argument text.
class CallReader {
public:
    explicit CallReader(std::string_view text) : text_(text) {}

    void skip_ws() {
        while (pos_ < text_.size() && is_ws(text_[pos_])) ++pos_;
    }

    bool consume(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    bool peek(char c) {
        skip_ws();
        return pos_ < text_.size() && text_[pos_] == c;
    }

    std::optional<std::string> quoted() {
        skip_ws();
        if (pos_ >= text_.size() || (text_[pos_] != '\'' && text_[pos_] != '"')) return std::nullopt;
        const char quote = text_[pos_++];
        std::string out;
        while (pos_ < text_.size()) {
            const char c = text_[pos_++];
            if (c == quote) return out;
            if (c == '\\' && pos_ < text_.size()) {
                const char e = text_[pos_++];
                out.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
                continue;
            }
            out.push_back(c);
        }
        return std::nullopt;  // unterminated
    }

    std::size_t position() const { return pos_; }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
};

struct ToolCall {
    std::vector<std::string> queries;
    bool extra_text = false;
};

/// Parses "web_search|{...}" starting at `at` (which points at the tool
/// name). Returns nullopt when the name is not followed by '|', so prose that
/// merely mentions the tool stays an answer.
std::optional<ToolCall> parse_tool_call(std::string_view tail, std::size_t at) {
    CallReader reader(tail.substr(at + kToolName.size()));
    if (!reader.consume('|')) return std::nullopt;

    const auto malformed = [](const std::string& why) { return ParseError("malformed web_search call: " + why); };
    if (!reader.consume('{')) throw malformed("expected '{'");
    const auto key = reader.quoted();
    if (!key || *key != kQueriesKey) throw malformed("expected 'search_queries' key");
    if (!reader.consume(':')) throw malformed("expected ':'");
    if (!reader.consume('[')) throw malformed("expected '['");

    ToolCall call;
    if (!reader.peek(']')) {
        do {
            auto q = reader.quoted();
            if (!q) throw malformed("expected a quoted query");
            if (trim(*q).empty()) throw malformed("empty query");
            call.queries.push_back(std::move(*q));
        } while (reader.consume(','));
    }
    if (!reader.consume(']')) throw malformed("expected ']'");
    if (!reader.consume('}')) throw malformed("expected '}'");
    if (call.queries.empty()) throw ParseError("web_search call with an empty query list");

    reader.skip_ws();
    const std::size_t consumed = at + kToolName.size() + reader.position();
    call.extra_text = !trim(tail.substr(0, at)).empty() || consumed < tail.size();
    return call;
}

std::string escape_query(std::string_view q) {
    std::string out;
    for (char c : q) {
        if (c == '\\' || c == '\'') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

// -- conversation building ---------------------------------------------------

struct Turn {
    std::string role;
    std::vector<TokenSpan> content;
};

std::vector<Turn> build_turns(const History& history, std::span<const Document> new_documents) {
    std::vector<Turn> turns;
    turns.push_back({"system", {{system_prompt(history.question, history.search_enabled), Provenance::Prompt}}});
    int doc_number = 1;
    for (std::size_t i = 0; i < history.rounds.size(); ++i) {
        const Round& r = history.rounds[i];
        const std::string model_text = r.raw_turn.empty() ? format_turn(r.reasoning, r.action) : r.raw_turn;
        turns.push_back({"assistant", {{model_text, Provenance::ModelGenerated}}});
        if (!is_search(r.action)) continue;

        if (r.search_rejected) {
            turns.push_back({"user", {{std::string(prompts::search_rejected_turn()), Provenance::Prompt}}});
            continue;
        }
        const bool last = i + 1 == history.rounds.size();
        const std::span<const Document> docs = last ? new_documents : std::span<const Document>(r.documents);
        Turn user{"user", {{std::string(kResultsHeader), Provenance::Prompt}}};
        for (const auto& d : docs) user.content.push_back({render_document(d, doc_number++), Provenance::Retrieved});
        if (docs.empty()) user.content.push_back({std::string(kNoResults), Provenance::Prompt});
        user.content.push_back({std::string(kResultsFooter), Provenance::Prompt});
        turns.push_back(std::move(user));
    }
    return turns;
}

void push_span(std::vector<TokenSpan>& spans, std::string text, Provenance p) {
    if (text.empty()) return;
    if (!spans.empty() && spans.back().provenance == p) {
        spans.back().text += text;
    } else {
        spans.push_back({std::move(text), p});
    }
}

void append_turn_spans(std::vector<TokenSpan>& spans, const std::string& role, const std::vector<TokenSpan>& content) {
    push_span(spans, "<|im_start|>" + role + "\n", Provenance::Prompt);
    for (const auto& s : content) push_span(spans, s.text, s.provenance);
    push_span(spans, "<|im_end|>\n", Provenance::Prompt);
}

}  // namespace

// ---------------------------------------------------------------------------

const char* to_string(Termination t) {
    switch (t) {
        case Termination::Answered: return "Answered";
        case Termination::RoundCapExceeded: return "RoundCapExceeded";
        case Termination::BackendError: return "BackendError";
        case Termination::ParseFailure: return "ParseFailure";
    }
    return "ParseFailure";
}

const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::Prompt: return "Prompt";
        case Provenance::ModelGenerated: return "ModelGenerated";
        case Provenance::Retrieved: return "Retrieved";
    }
    return "Prompt";
}

Termination termination_from_string(std::string_view name) {
    for (auto t : {Termination::Answered, Termination::RoundCapExceeded, Termination::BackendError, Termination::ParseFailure}) {
        if (name == to_string(t)) return t;
    }
    throw DataError("unknown termination '" + std::string(name) + "'");
}

Provenance provenance_from_string(std::string_view name) {
    for (auto p : {Provenance::Prompt, Provenance::ModelGenerated, Provenance::Retrieved}) {
        if (name == to_string(p)) return p;
    }
    throw DataError("unknown provenance '" + std::string(name) + "'");
}

std::string Trajectory::transcript() const {
    std::string out;
    for (const auto& s : token_spans) out += s.text;
    return out;
}

int Trajectory::search_rounds() const {
    int n = 0;
    for (const auto& r : rounds) n += is_search(r.action) ? 1 : 0;
    return n;
}

int Trajectory::search_queries() const {
    int n = 0;
    for (const auto& r : rounds) {
        if (const auto* s = std::get_if<SearchAction>(&r.action)) n += static_cast<int>(s->queries.size());
    }
    return n;
}

void AgentConfig::validate() const {
    if (max_rounds < 1) throw std::invalid_argument("agent.max_rounds must be >= 1");
    if (max_queries_per_round < 1 || max_queries_per_round > static_cast<int>(search::kMaxQueriesPerCall)) {
        throw std::invalid_argument("agent.max_queries_per_round must lie in [1, 5]");
    }
    if (top_k_per_query < 1) throw std::invalid_argument("agent.top_k_per_query must be >= 1");
    if (sampling_temperature < 0) throw std::invalid_argument("agent.sampling_temperature must be >= 0");
}

AgentConfig agent_config_from_json(const json& doc) {
    AgentConfig c;
    c.max_rounds = doc.value("max_rounds", c.max_rounds);
    c.max_queries_per_round = doc.value("max_queries_per_round", c.max_queries_per_round);
    c.top_k_per_query = doc.value("top_k_per_query", c.top_k_per_query);
    c.sampling_temperature = doc.value("sampling_temperature", c.sampling_temperature);
    c.search_enabled = doc.value("search_enabled", c.search_enabled);
    c.validate();
    return c;
}

json to_json(const AgentConfig& c) {
    return {{"max_rounds", c.max_rounds},
            {"max_queries_per_round", c.max_queries_per_round},
            {"top_k_per_query", c.top_k_per_query},
            {"sampling_temperature", c.sampling_temperature},
            {"search_enabled", c.search_enabled}};
}

// ---------------------------------------------------------------------------

ParsedTurn parse_turn(std::string_view raw, const AgentConfig& config) {
    if (count_occurrences(raw, kOpenTag) != 1 || count_occurrences(raw, kCloseTag) != 1) {
        throw ParseError("thinking tags absent or unbalanced");
    }
    const std::size_t open = raw.find(kOpenTag);
    const std::size_t close = raw.find(kCloseTag);
    if (close < open) throw ParseError("</thinking> precedes <thinking>");

    ParsedTurn turn;
    if (!trim(raw.substr(0, open)).empty()) turn.warnings.emplace_back("text before <thinking> ignored");
    turn.reasoning = std::string(raw.substr(open + kOpenTag.size(), close - open - kOpenTag.size()));
    const std::string_view tail = trim(raw.substr(close + kCloseTag.size()));

    for (auto at = tail.find(kToolName); at != std::string_view::npos; at = tail.find(kToolName, at + 1)) {
        auto call = parse_tool_call(tail, at);
        if (!call) continue;
        if (call->extra_text) turn.warnings.emplace_back("text around the tool call ignored");
        const auto limit = static_cast<std::size_t>(config.max_queries_per_round);
        if (call->queries.size() > limit) {
            turn.warnings.push_back("query limit exceeded: " + std::to_string(call->queries.size()) +
                                    " queries, kept the first " + std::to_string(limit));
            call->queries.resize(limit);
        }
        turn.action = SearchAction{std::move(call->queries)};
        return turn;
    }

    if (tail.empty()) throw ParseError("empty final answer after </thinking>");
    turn.action = AnswerAction{std::string(tail)};
    return turn;
}

std::string format_turn(std::string_view reasoning, const Action& action) {
    std::string out;
    out += kOpenTag;
    out += reasoning;
    out += kCloseTag;
    if (const auto* s = std::get_if<SearchAction>(&action)) {
        out += "web_search|{'search_queries': [";
        for (std::size_t i = 0; i < s->queries.size(); ++i) {
            if (i) out += ", ";
            out += '\'' + escape_query(s->queries[i]) + '\'';
        }
        out += "]}";
    } else {
        out += std::get<AnswerAction>(action).text;
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string system_prompt(std::string_view question, bool search_enabled) {
    std::string text = prompts::render(prompts::iterative_rag(), {{"query", std::string(question)}});
    if (!search_enabled) text += prompts::search_disabled_notice();
    return text;
}

std::string render_document(const Document& doc, int number) {
    return "[" + std::to_string(number) + "] Webpage title: " + doc.title + "\nContent: " + doc.content +
           "\nSource: " + doc.url + "\n";
}

std::vector<backends::ChatMessage> conversation(const History& history, std::span<const Document> new_documents) {
    std::vector<backends::ChatMessage> messages;
    for (auto& turn : build_turns(history, new_documents)) {
        std::string text;
        for (const auto& s : turn.content) text += s.text;
        messages.push_back({std::move(turn.role), std::move(text)});
    }
    return messages;
}

std::vector<TokenSpan> conversation_spans(const History& history, std::span<const Document> new_documents) {
    std::vector<TokenSpan> spans;
    for (const auto& turn : build_turns(history, new_documents)) append_turn_spans(spans, turn.role, turn.content);
    return spans;
}

std::string render_next_prompt(const History& history, std::span<const Document> new_documents) {
    std::string out;
    for (const auto& s : conversation_spans(history, new_documents)) out += s.text;
    return out;
}

std::vector<Document> merge_results(const search::ResultLists& lists, int k) {
    std::vector<Document> merged;
    std::set<std::string> seen_urls;
    for (const auto& list : lists) {
        for (std::size_t i = 0; i < list.size() && static_cast<int>(i) < k; ++i) {
            if (!list[i].url.empty() && !seen_urls.insert(list[i].url).second) continue;
            merged.push_back(list[i]);
        }
    }
    return merged;
}

Trajectory run_episode(const dataset::QARecord& record, backends::ModelBackend& model, search::SearchBackend& search,
                       const AgentConfig& config, int attempt) {
    config.validate();
    Trajectory traj;
    traj.record_id = record.id;
    traj.attempt = attempt;
    traj.question = record.question;
    traj.terminated_by = Termination::RoundCapExceeded;

    History history{record.question, {}, config.search_enabled};
    bool rejected_once = false;
    bool finished = false;

    for (int t = 1; t <= config.max_rounds && !finished; ++t) {
        const std::span<const Document> last_docs =
            history.rounds.empty() ? std::span<const Document>() : std::span<const Document>(history.rounds.back().documents);
        const auto messages = conversation(history, last_docs);
        const backends::RequestContext ctx{record.id, attempt, t, "policy"};

        std::string raw;
        try {
            raw = model.complete(messages, ctx);
        } catch (const BackendError& e) {
            traj.terminated_by = Termination::BackendError;
            traj.error = e.what();
            break;
        }

        ParsedTurn parsed;
        try {
            parsed = parse_turn(raw, config);
        } catch (const ParseError& e) {
            traj.terminated_by = Termination::ParseFailure;
            traj.error = e.what();
            traj.unparsed_turn = raw;
            break;
        }
        for (const auto& w : parsed.warnings) traj.warnings.push_back("round " + std::to_string(t) + ": " + w);

        Round round{t, std::move(parsed.reasoning), std::move(parsed.action), {}, std::move(raw)};

        if (const auto* answer = std::get_if<AnswerAction>(&round.action)) {
            traj.final_answer = answer->text;
            traj.terminated_by = Termination::Answered;
            history.rounds.push_back(std::move(round));
            break;
        }

        const auto& queries = std::get<SearchAction>(round.action).queries;
        if (!config.search_enabled) {
            round.search_rejected = true;
            history.rounds.push_back(std::move(round));
            traj.warnings.push_back("round " + std::to_string(t) + ": search rejected, search is disabled");
            if (rejected_once) {
                traj.terminated_by = Termination::ParseFailure;
                traj.error = "model kept calling search while search is disabled";
                finished = true;
            }
            rejected_once = true;
            continue;
        }

        try {
            round.documents = merge_results(search.search(queries, config.top_k_per_query), config.top_k_per_query);
        } catch (const BackendError& e) {
            history.rounds.push_back(std::move(round));
            traj.terminated_by = Termination::BackendError;
            traj.error = e.what();
            break;
        }
        history.rounds.push_back(std::move(round));
    }

    const std::span<const Document> last_docs =
        history.rounds.empty() ? std::span<const Document>() : std::span<const Document>(history.rounds.back().documents);
    traj.token_spans = conversation_spans(history, last_docs);
    if (traj.unparsed_turn) append_turn_spans(traj.token_spans, "assistant", {{*traj.unparsed_turn, Provenance::ModelGenerated}});

    for (const auto& r : history.rounds) traj.used_search = traj.used_search || is_search(r.action);
    traj.rounds = std::move(history.rounds);
    return traj;
}

// ---------------------------------------------------------------------------

std::vector<std::string_view> SimpleTokenizer::split(std::string_view text) const {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    const auto is_alnum = [](unsigned char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); };
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t j = i + 1;
        if (is_alnum(c)) {
            while (j < text.size() && is_alnum(static_cast<unsigned char>(text[j]))) ++j;
        } else if (is_ws(static_cast<char>(c))) {
            while (j < text.size() && is_ws(text[j])) ++j;
        } else if (c >= 0x80) {
            while (j < text.size() && (static_cast<unsigned char>(text[j]) & 0xC0) == 0x80) ++j;
        }
        tokens.push_back(text.substr(i, j - i));
        i = j;
    }
    return tokens;
}

std::vector<bool> provenance_mask(const Trajectory& trajectory, const Tokenizer& tokenizer) {
    std::vector<bool> mask;
    for (const auto& span : trajectory.token_spans) {
        const auto n = tokenizer.split(span.text).size();
        mask.insert(mask.end(), n, span.provenance == Provenance::ModelGenerated);
    }
    return mask;
}

std::vector<bool> provenance_mask_joint(const Trajectory& trajectory, const Tokenizer& tokenizer) {
    const std::string text = trajectory.transcript();
    const auto tokens = tokenizer.split(text);

    std::vector<std::size_t> span_end;
    std::size_t offset = 0;
    for (const auto& s : trajectory.token_spans) span_end.push_back(offset += s.text.size());

    std::vector<bool> mask;
    mask.reserve(tokens.size());
    std::size_t span = 0;
    for (const auto token : tokens) {
        const auto begin = static_cast<std::size_t>(token.data() - text.data());
        const std::size_t end = begin + token.size();
        while (span < span_end.size() && span_end[span] <= begin) ++span;
        if (span >= span_end.size() || end > span_end[span]) {
            throw SpanAlignmentError("token at byte " + std::to_string(begin) + " crosses a provenance boundary");
        }
        mask.push_back(trajectory.token_spans[span].provenance == Provenance::ModelGenerated);
    }
    return mask;
}

// ---------------------------------------------------------------------------

json to_json(const Document& d) {
    return {{"url", d.url}, {"title", d.title}, {"content", d.content}, {"rank", d.rank}, {"source", search::to_string(d.source)}};
}

Document document_from_json(const json& doc) {
    Document d;
    d.url = doc.value("url", "");
    d.title = doc.value("title", "");
    d.content = doc.value("content", "");
    d.rank = doc.value("rank", 1);
    d.source = doc.value("source", std::string("Simulated")) == "Web" ? search::DocumentSource::Web
                                                                     : search::DocumentSource::Simulated;
    return d;
}

json to_json(const Trajectory& t) {
    json rounds = json::array();
    for (const auto& r : t.rounds) {
        json action;
        if (const auto* s = std::get_if<SearchAction>(&r.action)) {
            action = {{"type", "search"}, {"queries", s->queries}};
        } else {
            action = {{"type", "answer"}, {"text", std::get<AnswerAction>(r.action).text}};
        }
        json docs = json::array();
        for (const auto& d : r.documents) docs.push_back(to_json(d));
        rounds.push_back({{"index", r.index},
                          {"reasoning", r.reasoning},
                          {"action", action},
                          {"documents", docs},
                          {"raw_turn", r.raw_turn},
                          {"search_rejected", r.search_rejected}});
    }
    json spans = json::array();
    for (const auto& s : t.token_spans) spans.push_back({{"text", s.text}, {"provenance", to_string(s.provenance)}});
    return {{"record_id", t.record_id},
            {"attempt", t.attempt},
            {"question", t.question},
            {"rounds", rounds},
            {"final_answer", t.final_answer ? json(*t.final_answer) : json(nullptr)},
            {"terminated_by", to_string(t.terminated_by)},
            {"token_spans", spans},
            {"used_search", t.used_search},
            {"warnings", t.warnings},
            {"error", t.error},
            {"unparsed_turn", t.unparsed_turn ? json(*t.unparsed_turn) : json(nullptr)}};
}

Trajectory trajectory_from_json(const json& doc) {
    try {
        Trajectory t;
        t.record_id = doc.at("record_id").get<std::string>();
        t.attempt = doc.value("attempt", 1);
        t.question = doc.value("question", "");
        for (const auto& r : doc.at("rounds")) {
            Round round;
            round.index = r.at("index").get<int>();
            round.reasoning = r.value("reasoning", "");
            const auto& a = r.at("action");
            if (a.at("type").get<std::string>() == "search") {
                round.action = SearchAction{a.at("queries").get<std::vector<std::string>>()};
            } else {
                round.action = AnswerAction{a.at("text").get<std::string>()};
            }
            for (const auto& d : r.value("documents", json::array())) round.documents.push_back(document_from_json(d));
            round.raw_turn = r.value("raw_turn", "");
            round.search_rejected = r.value("search_rejected", false);
            t.rounds.push_back(std::move(round));
        }
        if (doc.contains("final_answer") && !doc.at("final_answer").is_null()) t.final_answer = doc.at("final_answer").get<std::string>();
        t.terminated_by = termination_from_string(doc.at("terminated_by").get<std::string>());
        for (const auto& s : doc.value("token_spans", json::array())) {
            t.token_spans.push_back({s.at("text").get<std::string>(), provenance_from_string(s.at("provenance").get<std::string>())});
        }
        t.used_search = doc.value("used_search", false);
        t.warnings = doc.value("warnings", std::vector<std::string>{});
        t.error = doc.value("error", "");
        if (doc.contains("unparsed_turn") && !doc.at("unparsed_turn").is_null()) t.unparsed_turn = doc.at("unparsed_turn").get<std::string>();
        return t;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed trajectory: ") + e.what());
    }
}

}  // namespace deepdiver::agent
