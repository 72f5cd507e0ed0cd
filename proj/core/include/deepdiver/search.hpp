#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace deepdiver::search {

inline constexpr int kDefaultTopK = 2;
inline constexpr std::size_t kDefaultContentBudget = 2000;
inline constexpr std::size_t kMaxQueriesPerCall = 5;

enum class DocumentSource { Web, Simulated };

struct Document {
    std::string url;
    std::string title;
    std::string content;
    int rank = 1;  ///< 1-based position in its query's result list
    DocumentSource source = DocumentSource::Simulated;

    bool operator==(const Document&) const = default;
};

/// One result list per query, in query order.
using ResultLists = std::vector<std::vector<Document>>;

/// The search-engine boundary. Implementations must be safe to call from
/// many threads at once.
class SearchBackend {
public:
    virtual ~SearchBackend() = default;

    /// Returns at most k documents per query ordered by descending relevance.
    /// An empty list is a valid answer; only transport failures throw
    /// (deepdiver::BackendError).
    virtual ResultLists search(std::span<const std::string> queries, int k) = 0;
};

// ---------------------------------------------------------------------------
// Simulated corpus
// ---------------------------------------------------------------------------

struct CorpusDoc {
    std::string id;
    std::string title;
    std::string content;
    std::string url;  ///< defaults to sim://<id> when empty
    std::vector<std::string> tags;
};

struct SimCorpus {
    std::vector<CorpusDoc> docs;
    double noise_ratio = 0.0;
    /// Groups of doc ids that assert mutually contradictory facts.
    std::vector<std::vector<std::string>> conflict_sets;
    std::uint64_t seed = 0;
    std::size_t content_char_budget = kDefaultContentBudget;

    /// Throws DataError on out-of-range noise, empty content, duplicate ids or
    /// dangling conflict-set references.
    void validate() const;
};

SimCorpus corpus_from_json(const nlohmann::json& doc);
nlohmann::json corpus_to_json(const SimCorpus& corpus);
SimCorpus load_corpus(const std::string& path);

/// Case-folded tokens, split on ASCII whitespace and punctuation. Bytes
/// >= 0x80 count as word characters so UTF-8 text stays in runs.
std::vector<std::string> lexical_tokens(std::string_view text);

/// |query tokens ∩ doc tokens| / (1 + ln(1 + doc token count)), with the
/// intersection taken over distinct tokens.
double sim_score(std::string_view query, std::string_view doc_text);

/// Title and content joined, the text scored for a corpus document.
std::string scoring_text(const CorpusDoc& doc);

/// Immutable lexical retriever over a SimCorpus. Ties are broken by
/// ascending doc id and documents with zero overlap are never returned.
class SimulatedSearch final : public SearchBackend {
public:
    explicit SimulatedSearch(SimCorpus corpus);

    ResultLists search(std::span<const std::string> queries, int k) override;

    /// Ranked doc indices for one query before adversity injection.
    std::vector<std::size_t> rank(std::string_view query, int k) const;

    /// Noise then conflict injection over raw per-query results (indices into
    /// the corpus). Pure function of (corpus, seed, queries, k).
    std::vector<std::vector<std::size_t>> inject_adversity(std::span<const std::string> queries,
                                                           std::vector<std::vector<std::size_t>> results,
                                                           int k) const;

    const SimCorpus& corpus() const noexcept { return corpus_; }
    std::optional<std::size_t> index_of(std::string_view doc_id) const;
    Document to_document(std::size_t index, int rank) const;

private:
    SimCorpus corpus_;
    std::vector<std::vector<std::string>> doc_tokens_;
    std::vector<double> doc_norm_;
    std::map<std::string, std::size_t, std::less<>> id_index_;
    std::vector<std::vector<std::size_t>> conflict_of_;  ///< per doc, indices of conflict sets it belongs to
};

/// Used when search is disabled: every query returns nothing.
class NoSearch final : public SearchBackend {
public:
    ResultLists search(std::span<const std::string> queries, int k) override;
};

// ---------------------------------------------------------------------------
// Web search over HTTP
// ---------------------------------------------------------------------------

/// Field mapping for Bocha/LangSearch-shaped JSON APIs. Pointers use RFC 6901
/// syntax; item pointers are relative to one element of the results array.
struct WebSearchConfig {
    std::string endpoint;  ///< e.g. https://api.langsearch.com/v1/web-search
    std::string api_key_env;  ///< name of the env var holding the bearer token
    std::string query_field = "query";
    std::string count_field = "count";
    std::string results_pointer = "/data/webPages/value";
    std::string title_pointer = "/name";
    std::string snippet_pointer = "/snippet";
    std::string url_pointer = "/url";
    double timeout_seconds = 20.0;
    int max_retries = 2;
    int backoff_ms = 500;
    std::size_t content_char_budget = kDefaultContentBudget;
};

WebSearchConfig web_search_config_from_json(const nlohmann::json& doc);

class WebSearch final : public SearchBackend {
public:
    explicit WebSearch(WebSearchConfig config);
    ResultLists search(std::span<const std::string> queries, int k) override;

    /// Maps one response body onto documents (exposed for tests).
    std::vector<Document> decode(const nlohmann::json& body, int k) const;

private:
    std::vector<Document> search_one(const std::string& query, int k) const;

    WebSearchConfig config_;
};

const char* to_string(DocumentSource source);

}  // namespace deepdiver::search
