#include <set>

#include <gtest/gtest.h>

#include <deepdiver/common.hpp>
#include <deepdiver/dataset.hpp>

using namespace deepdiver;
using namespace deepdiver::dataset;
using backends::ScriptedBackend;
using backends::ScriptedTurn;

namespace {

QARecord rec(const std::string& id, Category c = Category::Other, std::optional<Difficulty> d = std::nullopt) {
    QARecord r;
    r.id = id;
    r.question = "question " + id;
    r.solution = "sol-" + id;
    r.category = c;
    r.difficulty = d;
    return r;
}

std::string answer_turn(const std::string& text) { return "<thinking>t</thinking>" + text; }

}  // namespace

TEST(Difficulty, Table) {
    EXPECT_EQ(tag_difficulty(4), Difficulty::Easy);
    EXPECT_EQ(tag_difficulty(3), Difficulty::Medium);
    EXPECT_EQ(tag_difficulty(2), Difficulty::Medium);
    EXPECT_EQ(tag_difficulty(1), Difficulty::Hard);
    EXPECT_EQ(tag_difficulty(0), Difficulty::Outlier);
    EXPECT_THROW(tag_difficulty(5), std::out_of_range);
    EXPECT_THROW(tag_difficulty(-1), std::out_of_range);
}

TEST(Tagging, FourAttemptsPerRecordWithAudit) {
    const std::vector<QARecord> records{rec("a"), rec("b")};
    ScriptedBackend model;
    // a: attempts 1 and 3 right; b: all right
    for (int k = 1; k <= 4; ++k) model.add({std::string("a"), k, std::nullopt, std::nullopt, answer_turn(k % 2 ? "sol-a" : "wrong")});
    model.add({std::string("b"), std::nullopt, std::nullopt, std::nullopt, answer_turn("sol-b")});
    search::NoSearch s;
    reward::OracleGrader grader;
    const auto result = run_tagging(records, {}, model, s, grader, 3);
    EXPECT_EQ(result.records[0].difficulty, Difficulty::Medium);
    EXPECT_EQ(result.records[1].difficulty, Difficulty::Easy);
    ASSERT_EQ(result.audit.size(), 8u);
    EXPECT_EQ(result.audit[1].id, "a");
    EXPECT_EQ(result.audit[1].attempt, 2);
    EXPECT_FALSE(result.audit[1].correct);
    EXPECT_EQ(result.audit[2].judgments, (std::array<bool, 3>{true, true, true}));
    EXPECT_EQ(to_json(result.audit[0])["termination"], "Answered");
}

TEST(Tagging, BackendFailuresCountIncorrect) {
    const std::vector<QARecord> records{rec("a")};
    ScriptedBackend model;  // every call throws
    search::NoSearch s;
    reward::OracleGrader grader;
    const auto result = run_tagging(records, {}, model, s, grader);
    EXPECT_EQ(result.records[0].difficulty, Difficulty::Outlier);
    for (const auto& a : result.audit) EXPECT_EQ(a.termination, "BackendError");
}

TEST(Tagging, JudgeFailureCountsIncorrect) {
    const std::vector<QARecord> records{rec("a")};
    ScriptedBackend model({}, {{std::nullopt, std::nullopt, std::nullopt, std::nullopt, answer_turn("sol-a")}});
    ScriptedBackend judge;
    reward::LlmGrader grader(judge);
    search::NoSearch s;
    const auto result = run_tagging(records, {}, model, s, grader);
    EXPECT_EQ(result.records[0].difficulty, Difficulty::Outlier);
    EXPECT_TRUE(result.audit[0].answer.has_value());
}

TEST(Mixture, SamplesPerCellWithoutReplacement) {
    std::vector<QARecord> pool;
    for (int i = 0; i < 10; ++i) pool.push_back(rec("e" + std::to_string(i), Category::WikiRiddle, Difficulty::Easy));
    for (int i = 0; i < 3; ++i) pool.push_back(rec("h" + std::to_string(i), Category::WikiRiddle, Difficulty::Hard));
    pool.push_back(rec("untagged", Category::WikiRiddle));
    MixtureSpec spec;
    spec.seed = 7;
    spec.targets[{Category::WikiRiddle, Difficulty::Easy}] = 4;
    spec.targets[{Category::WikiRiddle, Difficulty::Hard}] = 5;
    const auto r = select_mixture(pool, spec);
    ASSERT_EQ(r.selected.size(), 7u);
    std::set<std::string> ids;
    for (const auto& x : r.selected) ids.insert(x.id);
    EXPECT_EQ(ids.size(), 7u);
    EXPECT_FALSE(ids.contains("untagged"));
    ASSERT_EQ(r.shortfalls.size(), 1u);
    EXPECT_EQ(r.shortfalls[0].target, 5);
    EXPECT_EQ(r.shortfalls[0].available, 3);

    const auto again = select_mixture(pool, spec);
    EXPECT_EQ(again.selected, r.selected);
    spec.seed = 8;
    bool differs = false;
    for (std::uint64_t s = 8; s < 20 && !differs; ++s) {
        spec.seed = s;
        differs = select_mixture(pool, spec).selected != r.selected;
    }
    EXPECT_TRUE(differs);
}

TEST(Mixture, SpecJson) {
    const auto spec = mixture_spec_from_json(nlohmann::json::parse(R"({"seed":3,"targets":{"OpenRiddle":{"Hard":12,"Easy":0}}})"));
    EXPECT_EQ(spec.seed, 3u);
    EXPECT_EQ(spec.targets.at({Category::OpenRiddle, Difficulty::Hard}), 12);
    EXPECT_EQ(to_json(spec)["targets"]["OpenRiddle"]["Hard"], 12);
    EXPECT_THROW(mixture_spec_from_json(nlohmann::json::parse(R"({"targets":{"Nope":{"Hard":1}}})")), DataError);
    EXPECT_THROW(mixture_spec_from_json(nlohmann::json::parse(R"({"targets":{"Other":{"Hard":-1}}})")), DataError);
}
