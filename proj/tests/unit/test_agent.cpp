#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include <deepdiver/agent.hpp>
#include <deepdiver/common.hpp>
#include <deepdiver/prompts.hpp>

using namespace deepdiver;
using namespace deepdiver::agent;
using backends::ChatMessage;
using backends::ScriptedBackend;
using dataset::QARecord;

namespace {

std::string chatml(const std::vector<ChatMessage>& messages) {
    std::string out;
    for (const auto& m : messages) out += "<|im_start|>" + m.role + "\n" + m.content + "<|im_end|>\n";
    return out;
}

QARecord record(const std::string& id = "q1") {
    QARecord r;
    r.id = id;
    r.question = "Which fruit is in the pie?";
    r.solution = "apple";
    return r;
}

search::SimulatedSearch corpus() {
    search::SimCorpus c;
    c.docs = {{"d1", "Apple pie", "apple pie recipe", "", {}},
              {"d2", "Fruit", "pie fruit is apple", "", {}},
              {"d3", "Cherry", "cherry pie", "", {}}};
    return search::SimulatedSearch(c);
}

/// Records every model call's messages.
class RecordingModel final : public backends::ModelBackend {
public:
    explicit RecordingModel(std::vector<std::string> turns) : inner_(std::move(turns)) {}
    std::string complete(const std::vector<ChatMessage>& m, const backends::RequestContext& ctx) override {
        calls.push_back(m);
        contexts.push_back(ctx);
        return inner_.complete(m, ctx);
    }
    std::vector<std::vector<ChatMessage>> calls;
    std::vector<backends::RequestContext> contexts;

private:
    ScriptedBackend inner_;
};

}  // namespace

// -- parse_turn ---------------------------------------------------------------

TEST(ParseTurn, Answer) {
    const auto t = parse_turn("<thinking>easy</thinking>  apple  ", {});
    EXPECT_EQ(t.reasoning, "easy");
    EXPECT_EQ(std::get<AnswerAction>(t.action).text, "apple");
    EXPECT_TRUE(t.warnings.empty());
}

TEST(ParseTurn, SearchCallWithEitherQuoteStyle) {
    const auto t = parse_turn(R"(<thinking>look</thinking>web_search|{'search_queries': ["a b", 'it\'s']})", {});
    EXPECT_EQ(std::get<SearchAction>(t.action).queries, (std::vector<std::string>{"a b", "it's"}));
}

TEST(ParseTurn, ProseMentioningToolIsAnswer) {
    const auto t = parse_turn("<thinking>x</thinking>I would use web_search but the answer is 5", {});
    EXPECT_FALSE(is_search(t.action));
}

TEST(ParseTurn, ExtraQueriesTruncatedWithWarning) {
    AgentConfig cfg;
    cfg.max_queries_per_round = 2;
    const auto t = parse_turn("<thinking>x</thinking>web_search|{'search_queries': ['a','b','c']}", cfg);
    EXPECT_EQ(std::get<SearchAction>(t.action).queries.size(), 2u);
    ASSERT_EQ(t.warnings.size(), 1u);
    EXPECT_NE(t.warnings[0].find("query limit"), std::string::npos);
}

TEST(ParseTurn, Malformed) {
    const AgentConfig cfg;
    for (const char* bad : {"no tags at all", "<thinking>x", "</thinking>x<thinking>", "<thinking>a</thinking><thinking>b</thinking>c",
                            "<thinking>x</thinking>", "<thinking>x</thinking>   ",
                            "<thinking>x</thinking>web_search|{'search_queries': []}",
                            "<thinking>x</thinking>web_search|{'search_queries': ['']}",
                            "<thinking>x</thinking>web_search|{'queries': ['a']}",
                            "<thinking>x</thinking>web_search|{'search_queries': ['a'"}) {
        EXPECT_THROW(parse_turn(bad, cfg), ParseError) << bad;
    }
}

TEST(ParseTurn, TextAroundCallWarns) {
    const auto t = parse_turn("pre<thinking>x</thinking>ok web_search|{'search_queries': ['a']} trailing", {});
    EXPECT_TRUE(is_search(t.action));
    EXPECT_EQ(t.warnings.size(), 2u);
}

TEST(FormatTurn, RoundTripsThroughParser) {
    const std::vector<Action> actions{SearchAction{{"plain", "it's \\ quoted"}}, AnswerAction{"final answer"}};
    for (const auto& a : actions) {
        const auto t = parse_turn(format_turn("why", a), {});
        EXPECT_EQ(t.reasoning, "why");
        EXPECT_EQ(t.action, a);
    }
}

// -- prompts and conversation -------------------------------------------------

TEST(Prompts, RenderIsSinglePass) {
    EXPECT_EQ(prompts::render("Q: $query / $other", {{"query", "costs $query"}}), "Q: costs $query / $other");
    EXPECT_NE(system_prompt("my question").find("my question"), std::string::npos);
    EXPECT_GT(system_prompt("q", false).size(), system_prompt("q", true).size());
}

TEST(Conversation, DocumentsNumberedAcrossRounds) {
    History h{"q", {}, true};
    Round r1{1, "a", SearchAction{{"x"}}, {{"u1", "t1", "c1", 1, search::DocumentSource::Simulated}}, "", false};
    Round r2{2, "b", SearchAction{{"y"}}, {}, "", false};
    h.rounds = {r1, r2};
    const std::vector<Document> fresh{{"u2", "t2", "c2", 1, search::DocumentSource::Simulated}};
    const auto msgs = conversation(h, fresh);
    ASSERT_EQ(msgs.size(), 5u);
    EXPECT_EQ(msgs[2].content, std::string(kResultsHeader) + render_document(r1.documents[0], 1) + std::string(kResultsFooter));
    EXPECT_NE(msgs[4].content.find("[2] Webpage title: t2"), std::string::npos);
    EXPECT_EQ(chatml(msgs), render_next_prompt(h, fresh));
}

TEST(Conversation, EmptyResultsUseNotice) {
    History h{"q", {{1, "a", SearchAction{{"x"}}, {}, "", false}}, true};
    const auto msgs = conversation(h, {});
    EXPECT_EQ(msgs.back().content, std::string(kResultsHeader) + std::string(kNoResults) + std::string(kResultsFooter));
}

TEST(MergeResults, DedupesByUrlAndCapsPerQuery) {
    using search::Document;
    const search::ResultLists lists{{{"a", "", "1", 1}, {"b", "", "2", 2}, {"c", "", "3", 3}}, {{"b", "", "2", 1}, {"d", "", "4", 2}}};
    const auto merged = merge_results(lists, 2);
    ASSERT_EQ(merged.size(), 3u);
    EXPECT_EQ(merged[0].url, "a");
    EXPECT_EQ(merged[1].url, "b");
    EXPECT_EQ(merged[2].url, "d");
}

// -- episodes -----------------------------------------------------------------

TEST(Episode, SearchThenAnswer) {
    RecordingModel model({"<thinking>need facts</thinking>web_search|{'search_queries': ['apple pie']}",
                          "<thinking>found it</thinking>apple"});
    auto s = corpus();
    const auto traj = run_episode(record(), model, s, {}, 3);
    EXPECT_EQ(traj.terminated_by, Termination::Answered);
    EXPECT_EQ(traj.final_answer, "apple");
    EXPECT_EQ(traj.attempt, 3);
    EXPECT_TRUE(traj.used_search);
    EXPECT_EQ(traj.search_rounds(), 1);
    EXPECT_EQ(traj.search_queries(), 1);
    ASSERT_EQ(traj.rounds.size(), 2u);
    EXPECT_EQ(traj.rounds[0].documents.size(), 2u);

    ASSERT_EQ(model.contexts.size(), 2u);
    EXPECT_EQ(model.contexts[1].round, 2);
    EXPECT_EQ(model.contexts[1].attempt, 3);
    // the transcript is the last prompt plus the final model turn
    const auto expected = chatml(model.calls.back()) + "<|im_start|>assistant\n" + traj.rounds.back().raw_turn + "<|im_end|>\n";
    EXPECT_EQ(traj.transcript(), expected);
    // retrieved text never appears inside a model span
    for (const auto& span : traj.token_spans) {
        if (span.provenance == Provenance::ModelGenerated) EXPECT_EQ(span.text.find("Webpage title"), std::string::npos);
    }
}

TEST(Episode, RoundCapEndsWithDocumentsTurn) {
    std::vector<std::string> turns(3, "<thinking>more</thinking>web_search|{'search_queries': ['pie']}");
    ScriptedBackend model(turns);
    auto s = corpus();
    AgentConfig cfg;
    cfg.max_rounds = 3;
    const auto traj = run_episode(record(), model, s, cfg);
    EXPECT_EQ(traj.terminated_by, Termination::RoundCapExceeded);
    EXPECT_FALSE(traj.final_answer);
    EXPECT_EQ(traj.rounds.size(), 3u);
    EXPECT_EQ(traj.token_spans.back().provenance, Provenance::Prompt);
    EXPECT_NE(traj.transcript().rfind(std::string(kResultsFooter)), std::string::npos);
}

TEST(Episode, ParseFailureKeepsRawTurn) {
    ScriptedBackend model({"oops no tags"});
    search::NoSearch s;
    const auto traj = run_episode(record(), model, s, {});
    EXPECT_EQ(traj.terminated_by, Termination::ParseFailure);
    EXPECT_EQ(traj.unparsed_turn, "oops no tags");
    EXPECT_NE(traj.transcript().find("oops no tags"), std::string::npos);
}

TEST(Episode, BackendErrorIsCaptured) {
    ScriptedBackend model;
    search::NoSearch s;
    const auto traj = run_episode(record(), model, s, {});
    EXPECT_EQ(traj.terminated_by, Termination::BackendError);
    EXPECT_FALSE(traj.error.empty());
}

TEST(Episode, SearchDisabledRejectsThenFails) {
    const std::string call = "<thinking>x</thinking>web_search|{'search_queries': ['pie']}";
    {
        ScriptedBackend model({call, "<thinking>ok</thinking>apple"});
        auto s = corpus();
        AgentConfig cfg;
        cfg.search_enabled = false;
        const auto traj = run_episode(record(), model, s, cfg);
        EXPECT_EQ(traj.terminated_by, Termination::Answered);
        EXPECT_TRUE(traj.rounds[0].search_rejected);
        EXPECT_TRUE(traj.rounds[0].documents.empty());
        EXPECT_EQ(traj.warnings.size(), 1u);
        EXPECT_NE(traj.transcript().find(std::string(prompts::search_rejected_turn())), std::string::npos);
    }
    {
        ScriptedBackend model({call, call, call});
        search::NoSearch s;
        AgentConfig cfg;
        cfg.search_enabled = false;
        const auto traj = run_episode(record(), model, s, cfg);
        EXPECT_EQ(traj.terminated_by, Termination::ParseFailure);
        EXPECT_EQ(traj.rounds.size(), 2u);
    }
}

TEST(Episode, InvalidConfigThrows) {
    ScriptedBackend model;
    search::NoSearch s;
    AgentConfig cfg;
    cfg.max_rounds = 0;
    EXPECT_THROW(run_episode(record(), model, s, cfg), std::invalid_argument);
    cfg = {};
    cfg.max_queries_per_round = 6;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

// -- masks ----------------------------------------------------------------------

TEST(Tokenizer, ConcatenationIsIdentity) {
    const std::string text = "Hello,  world!\n中文 abc123";
    const auto toks = SimpleTokenizer().split(text);
    std::string joined;
    for (auto t : toks) joined += t;
    EXPECT_EQ(joined, text);
    EXPECT_EQ(toks[0], "Hello");
    EXPECT_EQ(toks[1], ",");
    EXPECT_EQ(toks[2], "  ");
}

TEST(Mask, PerSpanAndJointAgree) {
    ScriptedBackend model({"<thinking>go</thinking>web_search|{'search_queries': ['apple']}", "<thinking>ok</thinking>apple"});
    auto s = corpus();
    const auto traj = run_episode(record(), model, s, {});
    const SimpleTokenizer tok;
    const auto a = provenance_mask(traj, tok);
    const auto b = provenance_mask_joint(traj, tok);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.size(), tok.split(traj.transcript()).size());
    EXPECT_GT(std::count(a.begin(), a.end(), true), 0);
}

TEST(Mask, JointDetectsStraddlingToken) {
    Trajectory t;
    t.token_spans = {{"abc", Provenance::Prompt}, {"def", Provenance::ModelGenerated}};
    EXPECT_THROW(provenance_mask_joint(t, SimpleTokenizer()), SpanAlignmentError);
    EXPECT_EQ(provenance_mask(t, SimpleTokenizer()), (std::vector<bool>{false, true}));
}

// -- serialization --------------------------------------------------------------

TEST(TrajectoryJson, RoundTrip) {
    ScriptedBackend model({"<thinking>go</thinking>web_search|{'search_queries': ['apple', 'pie']}", "<thinking>ok</thinking>apple"});
    auto s = corpus();
    const auto traj = run_episode(record(), model, s, {});
    const auto back = trajectory_from_json(to_json(traj));
    EXPECT_EQ(to_json(back), to_json(traj));
    EXPECT_EQ(back.transcript(), traj.transcript());
    EXPECT_THROW(trajectory_from_json(nlohmann::json::object()), DataError);
}

TEST(Records, ReadWriteAndErrors) {
    const auto dir = std::filesystem::temp_directory_path() / "deepdiver_records_test";
    std::filesystem::create_directories(dir);
    auto r = record("a");
    r.checklist = {"alias: Apple"};
    r.difficulty = dataset::Difficulty::Hard;
    r.category = dataset::Category::WikiRiddle;
    dataset::write_records((dir / "ok.jsonl").string(), {r, record("b")});
    const auto back = dataset::read_records((dir / "ok.jsonl").string());
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0], r);

    std::ofstream(dir / "dup.jsonl") << nlohmann::json(dataset::to_json(r)).dump() << "\n\n" << dataset::to_json(r).dump() << "\n";
    try {
        dataset::read_records((dir / "dup.jsonl").string());
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
    }
    std::ofstream(dir / "bad.jsonl") << R"({"id":"x","question":"","solution":"s"})" << "\n";
    EXPECT_THROW(dataset::read_records((dir / "bad.jsonl").string()), DataError);
    EXPECT_THROW(dataset::category_from_string("Nope"), DataError);
    std::filesystem::remove_all(dir);
}
