#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include <deepdiver/common.hpp>
#include <deepdiver/search.hpp>

using namespace deepdiver;
using namespace deepdiver::search;

namespace {

SimCorpus fruit_corpus() {
    SimCorpus c;
    c.docs = {{"d1", "Apple pie", "apple pie recipe with cinnamon", "", {}},
              {"d2", "Apple orchard", "apple trees grow in the orchard", "https://ex.org/orchard", {}},
              {"d3", "Banana bread", "banana bread baking guide", "", {}},
              {"d4", "Cherry", "cherry pie is red", "", {}},
              {"d5", "Train schedule", "timetable for regional trains", "", {}},
              {"d6", "Tax law", "income tax filing rules", "", {}}};
    return c;
}

std::vector<std::string> ids(const SimulatedSearch& s, const std::vector<Document>& docs) {
    std::vector<std::string> out;
    for (const auto& d : docs) {
        for (const auto& c : s.corpus().docs) {
            if (d.title == c.title) out.push_back(c.id);
        }
    }
    return out;
}

}  // namespace

TEST(Lexical, TokensAreCaseFoldedAndSplitOnPunctuation) {
    EXPECT_EQ(lexical_tokens("Hello, World! 中文x"), (std::vector<std::string>{"hello", "world", "中文x"}));
    EXPECT_TRUE(lexical_tokens(" ,.; ").empty());
}

TEST(Lexical, ScoreMatchesHandArithmetic) {
    // 2 shared distinct tokens, 3 doc tokens: 2 / (1 + ln 4)
    EXPECT_NEAR(sim_score("apple pie", "Apple pie recipe"), 2.0 / (1.0 + std::log(4.0)), 1e-12);
    EXPECT_EQ(sim_score("zebra", "apple pie"), 0.0);
    // repeated query tokens count once
    EXPECT_DOUBLE_EQ(sim_score("apple apple", "apple"), sim_score("apple", "apple"));
}

TEST(SimulatedSearch, RanksByScoreAndExcludesZeroOverlap) {
    SimulatedSearch s(fruit_corpus());
    const std::vector<std::string> q{"apple pie"};
    const auto lists = s.search(q, 10);
    ASSERT_EQ(lists.size(), 1u);
    const auto got = ids(s, lists[0]);
    ASSERT_GE(got.size(), 2u);
    EXPECT_EQ(got[0], "d1");
    for (const auto& id : got) EXPECT_TRUE(id == "d1" || id == "d2" || id == "d4") << id;
    EXPECT_EQ(lists[0][0].rank, 1);
    EXPECT_EQ(lists[0][0].url, "sim://d1");
    EXPECT_EQ(lists[0][0].source, DocumentSource::Simulated);
}

TEST(SimulatedSearch, TopKAndTieBreakById) {
    SimCorpus c;
    c.docs = {{"b", "x", "same words", "", {}}, {"a", "x", "same words", "", {}}, {"c", "x", "same words", "", {}}};
    SimulatedSearch s(c);
    const auto r = s.rank("same", 2);
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(s.corpus().docs[r[0]].id, "a");
    EXPECT_EQ(s.corpus().docs[r[1]].id, "b");
    const std::vector<std::string> q{"same"};
    EXPECT_EQ(s.search(q, 2)[0].size(), 2u);
    EXPECT_THROW(s.search(q, 0), std::invalid_argument);
}

TEST(SimulatedSearch, NoiseIsSeededAndReplacesWithOffTopicDocs) {
    auto c = fruit_corpus();
    c.noise_ratio = 1.0;
    c.seed = 5;
    SimulatedSearch s(c);
    const std::vector<std::string> q{"apple pie"};
    const auto a = s.search(q, 2);
    const auto b = s.search(q, 2);
    EXPECT_EQ(a, b);
    for (const auto& d : a[0]) EXPECT_EQ(sim_score("apple pie", d.title + " " + d.content), 0.0) << d.title;

    c.seed = 6;
    SimulatedSearch other(c);
    bool differs = false;
    for (int i = 0; i < 20 && !differs; ++i) {
        const std::vector<std::string> qi{"apple pie " + std::to_string(i)};
        differs = s.search(qi, 2) != other.search(qi, 2);
    }
    EXPECT_TRUE(differs);
}

TEST(SimulatedSearch, ZeroNoiseIsPureRanking) {
    SimulatedSearch s(fruit_corpus());
    const std::vector<std::string> q{"apple orchard trees"};
    const auto lists = s.search(q, 2);
    const auto ranked = s.rank(q[0], 2);
    ASSERT_EQ(lists[0].size(), ranked.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) EXPECT_EQ(lists[0][i], s.to_document(ranked[i], static_cast<int>(i + 1)));
}

TEST(SimulatedSearch, ConflictPartnerIsSurfaced) {
    auto c = fruit_corpus();
    c.docs.push_back({"d7", "Cinnamon facts", "cinnamon comes from bark", "", {}});
    c.conflict_sets = {{"d1", "d7"}};
    SimulatedSearch s(c);
    const std::vector<std::string> q{"apple pie recipe"};
    const auto got = ids(s, s.search(q, 2)[0]);
    ASSERT_EQ(got.size(), 2u);
    EXPECT_EQ(got[0], "d1");
    EXPECT_EQ(got[1], "d7");

    // with room to spare the partner is appended instead of evicting
    const auto roomy = ids(s, s.search(q, 5)[0]);
    EXPECT_NE(std::find(roomy.begin(), roomy.end(), "d7"), roomy.end());
    EXPECT_LE(roomy.size(), 5u);
}

TEST(SimulatedSearch, ContentIsTruncatedToBudget) {
    auto c = fruit_corpus();
    c.content_char_budget = 5;
    SimulatedSearch s(c);
    const std::vector<std::string> q{"apple pie"};
    EXPECT_EQ(s.search(q, 1)[0][0].content, "apple");
}

TEST(SimCorpus, ValidationErrors) {
    auto c = fruit_corpus();
    c.noise_ratio = 1.5;
    EXPECT_THROW(c.validate(), DataError);
    c = fruit_corpus();
    c.docs.push_back(c.docs.front());
    EXPECT_THROW(c.validate(), DataError);
    c = fruit_corpus();
    c.conflict_sets = {{"d1", "missing"}};
    EXPECT_THROW(c.validate(), DataError);
    c = fruit_corpus();
    c.docs[0].content.clear();
    EXPECT_THROW(c.validate(), DataError);
}

TEST(SimCorpus, JsonRoundTrip) {
    auto c = fruit_corpus();
    c.noise_ratio = 0.25;
    c.seed = 77;
    c.conflict_sets = {{"d1", "d2"}};
    const auto back = corpus_from_json(corpus_to_json(c));
    EXPECT_EQ(back.docs.size(), c.docs.size());
    EXPECT_EQ(back.docs[1].url, "https://ex.org/orchard");
    EXPECT_EQ(back.noise_ratio, 0.25);
    EXPECT_EQ(back.seed, 77u);
    EXPECT_EQ(back.conflict_sets, c.conflict_sets);
}

TEST(NoSearch, ReturnsEmptyListPerQuery) {
    NoSearch s;
    const std::vector<std::string> q{"a", "b"};
    const auto r = s.search(q, 2);
    ASSERT_EQ(r.size(), 2u);
    EXPECT_TRUE(r[0].empty());
    EXPECT_TRUE(r[1].empty());
}

TEST(WebSearch, DecodeMapsFieldsAndCapsAtK) {
    WebSearchConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1/search";
    cfg.content_char_budget = 4;
    WebSearch w(cfg);
    const auto body = nlohmann::json::parse(R"({"data":{"webPages":{"value":[
        {"name":"T1","snippet":"snippet one","url":"https://a"},
        {"name":"T2","snippet":"s2","url":"https://b"},
        {"name":"T3","snippet":"s3","url":"https://c"}]}}})");
    const auto docs = w.decode(body, 2);
    ASSERT_EQ(docs.size(), 2u);
    EXPECT_EQ(docs[0].title, "T1");
    EXPECT_EQ(docs[0].content, "snip");
    EXPECT_EQ(docs[0].url, "https://a");
    EXPECT_EQ(docs[0].source, DocumentSource::Web);
    EXPECT_EQ(docs[1].rank, 2);

    EXPECT_TRUE(w.decode(nlohmann::json::parse(R"({"data":{}})"), 2).empty());
    try {
        w.decode(nlohmann::json::parse(R"({"data":{"webPages":{"value":7}}})"), 2);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendError::Kind::Decode);
    }
}

TEST(WebSearch, ConfigFromJson) {
    const auto cfg = web_search_config_from_json(nlohmann::json::parse(
        R"({"endpoint":"https://api.example.com/v1/web-search","api_key_env":"KEY","results_pointer":"/results","timeout_seconds":3})"));
    EXPECT_EQ(cfg.results_pointer, "/results");
    EXPECT_EQ(cfg.api_key_env, "KEY");
    EXPECT_EQ(cfg.timeout_seconds, 3.0);
    EXPECT_EQ(cfg.title_pointer, "/name");
}
