#include "deepdiver/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "deepdiver/common.hpp"
#include "http.hpp"

namespace deepdiver::search {

using nlohmann::json;

const char* to_string(DocumentSource source) {
    return source == DocumentSource::Web ? "Web" : "Simulated";
}

void SimCorpus::validate() const {
    if (!(noise_ratio >= 0.0 && noise_ratio <= 1.0)) {
        throw DataError("noise_ratio must lie in [0, 1], got " + std::to_string(noise_ratio));
    }
    std::set<std::string, std::less<>> ids;
    for (const auto& doc : docs) {
        if (doc.id.empty()) throw DataError("corpus document with empty id");
        if (doc.content.empty()) throw DataError("corpus document '" + doc.id + "' has empty content");
        if (!ids.insert(doc.id).second) throw DataError("duplicate corpus document id '" + doc.id + "'");
    }
    for (const auto& group : conflict_sets) {
        if (group.size() < 2) throw DataError("conflict set needs at least two documents");
        for (const auto& id : group) {
            if (!ids.contains(id)) throw DataError("conflict set references unknown document '" + id + "'");
        }
    }
}

SimCorpus corpus_from_json(const json& doc) {
    SimCorpus corpus;
    for (const auto& item : doc.value("docs", json::array())) {
        CorpusDoc d;
        d.id = item.at("id").get<std::string>();
        d.title = item.value("title", "");
        d.content = item.at("content").get<std::string>();
        d.url = item.value("url", "");
        d.tags = item.value("tags", std::vector<std::string>{});
        corpus.docs.push_back(std::move(d));
    }
    corpus.noise_ratio = doc.value("noise_ratio", 0.0);
    corpus.conflict_sets = doc.value("conflict_sets", std::vector<std::vector<std::string>>{});
    corpus.seed = doc.value("seed", std::uint64_t{0});
    corpus.content_char_budget = doc.value("content_char_budget", kDefaultContentBudget);
    corpus.validate();
    return corpus;
}

json corpus_to_json(const SimCorpus& corpus) {
    json docs = json::array();
    for (const auto& d : corpus.docs) {
        docs.push_back({{"id", d.id}, {"title", d.title}, {"content", d.content}, {"url", d.url}, {"tags", d.tags}});
    }
    return {{"docs", docs},
            {"noise_ratio", corpus.noise_ratio},
            {"conflict_sets", corpus.conflict_sets},
            {"seed", corpus.seed},
            {"content_char_budget", corpus.content_char_budget}};
}

SimCorpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file: " + path);
    try {
        return corpus_from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw DataError("malformed corpus file " + path + ": " + e.what());
    }
}

std::vector<std::string> lexical_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        const bool word = c >= 0x80 || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
        if (word) {
            current.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

namespace {

double overlap_score(const std::set<std::string, std::less<>>& query_tokens,
                     const std::vector<std::string>& doc_tokens, double norm) {
    std::set<std::string_view> seen;
    std::size_t overlap = 0;
    for (const auto& t : doc_tokens) {
        if (query_tokens.contains(t) && seen.insert(t).second) ++overlap;
    }
    return static_cast<double>(overlap) / norm;
}

double length_norm(std::size_t token_count) {
    return 1.0 + std::log(1.0 + static_cast<double>(token_count));
}

std::set<std::string, std::less<>> token_set(std::string_view text) {
    auto tokens = lexical_tokens(text);
    return {std::make_move_iterator(tokens.begin()), std::make_move_iterator(tokens.end())};
}

}  // namespace

double sim_score(std::string_view query, std::string_view doc_text) {
    const auto doc_tokens = lexical_tokens(doc_text);
    return overlap_score(token_set(query), doc_tokens, length_norm(doc_tokens.size()));
}

std::string scoring_text(const CorpusDoc& doc) {
    return doc.title + " " + doc.content;
}

SimulatedSearch::SimulatedSearch(SimCorpus corpus) : corpus_(std::move(corpus)) {
    corpus_.validate();
    doc_tokens_.reserve(corpus_.docs.size());
    for (std::size_t i = 0; i < corpus_.docs.size(); ++i) {
        doc_tokens_.push_back(lexical_tokens(scoring_text(corpus_.docs[i])));
        doc_norm_.push_back(length_norm(doc_tokens_.back().size()));
        id_index_.emplace(corpus_.docs[i].id, i);
    }
    conflict_of_.resize(corpus_.docs.size());
    for (std::size_t s = 0; s < corpus_.conflict_sets.size(); ++s) {
        for (const auto& id : corpus_.conflict_sets[s]) conflict_of_[id_index_.at(id)].push_back(s);
    }
}

std::optional<std::size_t> SimulatedSearch::index_of(std::string_view doc_id) const {
    const auto it = id_index_.find(doc_id);
    if (it == id_index_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::size_t> SimulatedSearch::rank(std::string_view query, int k) const {
    const auto qtokens = token_set(query);
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < corpus_.docs.size(); ++i) {
        const double s = overlap_score(qtokens, doc_tokens_[i], doc_norm_[i]);
        if (s > 0.0) scored.emplace_back(s, i);
    }
    std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return corpus_.docs[a.second].id < corpus_.docs[b.second].id;
    });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < scored.size() && static_cast<int>(i) < k; ++i) out.push_back(scored[i].second);
    return out;
}

std::vector<std::vector<std::size_t>> SimulatedSearch::inject_adversity(
    std::span<const std::string> queries, std::vector<std::vector<std::size_t>> results, int k) const {
    const std::size_t n_docs = corpus_.docs.size();
    for (std::size_t q = 0; q < results.size() && q < queries.size(); ++q) {
        auto& list = results[q];
        const auto qtokens = token_set(queries[q]);
        auto score_of = [&](std::size_t i) { return overlap_score(qtokens, doc_tokens_[i], doc_norm_[i]); };
        auto contains = [&](std::size_t i) { return std::find(list.begin(), list.end(), i) != list.end(); };

        // Noise: one uniform draw per slot, always consumed, so the stream is
        // independent of which slots get replaced.
        Rng rng(mix_seed({corpus_.seed, fnv1a64(queries[q]), q}));
        for (auto& slot : list) {
            if (!(rng.uniform() < corpus_.noise_ratio)) continue;
            std::vector<std::size_t> off_topic;
            for (std::size_t i = 0; i < n_docs; ++i) {
                if (!contains(i) && score_of(i) == 0.0) off_topic.push_back(i);
            }
            if (off_topic.empty()) {
                for (std::size_t i = 0; i < n_docs; ++i) {
                    if (!contains(i)) off_topic.push_back(i);
                }
            }
            if (off_topic.empty()) continue;
            slot = off_topic[rng.below(off_topic.size())];
        }

        // Conflicts: every returned member gets its best-scoring partner.
        std::set<std::size_t> pinned;
        for (std::size_t pos = 0; pos < list.size(); ++pos) {
            const std::size_t doc = list[pos];
            for (std::size_t set_index : conflict_of_[doc]) {
                const auto& group = corpus_.conflict_sets[set_index];
                bool partner_present = false;
                std::optional<std::size_t> best;
                double best_score = -1.0;
                for (const auto& id : group) {
                    const std::size_t other = id_index_.at(id);
                    if (other == doc) continue;
                    if (contains(other)) partner_present = true;
                    const double s = score_of(other);
                    if (s > best_score || (s == best_score && corpus_.docs[other].id < corpus_.docs[*best].id)) {
                        best_score = s;
                        best = other;
                    }
                }
                pinned.insert(doc);
                if (partner_present || !best) continue;
                if (static_cast<int>(list.size()) < k) {
                    list.push_back(*best);
                    pinned.insert(*best);
                    continue;
                }
                // Evict the last slot not holding a pinned conflict member.
                for (std::size_t j = list.size(); j-- > 0;) {
                    if (!pinned.contains(list[j])) {
                        list[j] = *best;
                        pinned.insert(*best);
                        break;
                    }
                }
            }
        }
    }
    return results;
}

Document SimulatedSearch::to_document(std::size_t index, int rank) const {
    const auto& d = corpus_.docs.at(index);
    Document doc;
    doc.url = d.url.empty() ? "sim://" + d.id : d.url;
    doc.title = d.title;
    doc.content = utf8_truncate(d.content, corpus_.content_char_budget);
    doc.rank = rank;
    doc.source = DocumentSource::Simulated;
    return doc;
}

ResultLists SimulatedSearch::search(std::span<const std::string> queries, int k) {
    if (k < 1) throw std::invalid_argument("search requires k >= 1");
    std::vector<std::vector<std::size_t>> raw;
    raw.reserve(queries.size());
    for (const auto& q : queries) raw.push_back(rank(q, k));
    raw = inject_adversity(queries, std::move(raw), k);

    ResultLists out(raw.size());
    for (std::size_t q = 0; q < raw.size(); ++q) {
        for (std::size_t r = 0; r < raw[q].size(); ++r) out[q].push_back(to_document(raw[q][r], static_cast<int>(r + 1)));
    }
    return out;
}

ResultLists NoSearch::search(std::span<const std::string> queries, int /*k*/) {
    return ResultLists(queries.size());
}

// ---------------------------------------------------------------------------

WebSearchConfig web_search_config_from_json(const json& doc) {
    WebSearchConfig c;
    c.endpoint = doc.at("endpoint").get<std::string>();
    c.api_key_env = doc.value("api_key_env", c.api_key_env);
    c.query_field = doc.value("query_field", c.query_field);
    c.count_field = doc.value("count_field", c.count_field);
    c.results_pointer = doc.value("results_pointer", c.results_pointer);
    c.title_pointer = doc.value("title_pointer", c.title_pointer);
    c.snippet_pointer = doc.value("snippet_pointer", c.snippet_pointer);
    c.url_pointer = doc.value("url_pointer", c.url_pointer);
    c.timeout_seconds = doc.value("timeout_seconds", c.timeout_seconds);
    c.max_retries = doc.value("max_retries", c.max_retries);
    c.backoff_ms = doc.value("backoff_ms", c.backoff_ms);
    c.content_char_budget = doc.value("content_char_budget", c.content_char_budget);
    return c;
}

WebSearch::WebSearch(WebSearchConfig config) : config_(std::move(config)) {
    if (config_.timeout_seconds <= 0) throw std::invalid_argument("web search timeout must be positive");
}

std::vector<Document> WebSearch::decode(const json& body, int k) const {
    const json::json_pointer results_ptr(config_.results_pointer);
    if (!body.contains(results_ptr)) return {};  // engines omit the array when nothing matched
    const json& items = body.at(results_ptr);
    if (!items.is_array()) {
        throw BackendError(BackendError::Kind::Decode, "search results at " + config_.results_pointer + " are not an array");
    }
    auto field = [](const json& item, const std::string& pointer) -> std::string {
        const json::json_pointer p(pointer);
        if (!item.contains(p) || !item.at(p).is_string()) return {};
        return item.at(p).get<std::string>();
    };
    std::vector<Document> docs;
    for (const auto& item : items) {
        if (static_cast<int>(docs.size()) >= k) break;
        Document d;
        d.title = field(item, config_.title_pointer);
        d.content = utf8_truncate(field(item, config_.snippet_pointer), config_.content_char_budget);
        d.url = field(item, config_.url_pointer);
        d.source = DocumentSource::Web;
        if (d.content.empty()) continue;
        d.rank = static_cast<int>(docs.size()) + 1;
        docs.push_back(std::move(d));
    }
    return docs;
}

std::vector<Document> WebSearch::search_one(const std::string& query, int k) const {
    json request = {{config_.query_field, query}, {config_.count_field, k}};
    std::map<std::string, std::string> headers;
    if (const auto key = detail::env_or_empty(config_.api_key_env); !key.empty()) {
        headers["Authorization"] = "Bearer " + key;
    }
    const auto response = detail::post_json(config_.endpoint, request.dump(), headers,
                                            std::chrono::duration<double>(config_.timeout_seconds),
                                            {config_.max_retries, std::chrono::milliseconds(config_.backoff_ms)});
    json body;
    try {
        body = json::parse(response.body);
    } catch (const json::exception& e) {
        throw BackendError(BackendError::Kind::Decode, std::string("search response is not JSON: ") + e.what());
    }
    return decode(body, k);
}

ResultLists WebSearch::search(std::span<const std::string> queries, int k) {
    if (k < 1) throw std::invalid_argument("search requires k >= 1");
    ResultLists out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(search_one(q, k));
    return out;
}

}  // namespace deepdiver::search
