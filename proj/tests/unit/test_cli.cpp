#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include <deepdiver/common.hpp>

#include "commands.hpp"
#include "run_config.hpp"

using namespace deepdiver;
using namespace deepdiver::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("deepdiver_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write(const std::string& name, const std::string& text) {
        const auto p = dir_ / name;
        std::ofstream(p, std::ios::binary) << text;
        return p;
    }
    fs::path write_json(const std::string& name, const json& doc) { return write(name, doc.dump()); }

    static std::string read(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream s;
        s << in.rdbuf();
        return s.str();
    }

    /// Two records, a policy that searches then answers, a small corpus and
    /// an exact oracle judge.
    RunConfig basic_config() {
        write("records.jsonl",
              R"({"id":"r1","question":"What fruit?","solution":"apple","category":"WikiRiddle"})" "\n"
              R"({"id":"r2","question":"What colour?","solution":"red","category":"OpenRiddle"})" "\n");
        write_json("policy.json", {{"turns",
                                    {{{"round", 1}, {"text", "<thinking>look</thinking>web_search|{'search_queries': ['apple fruit']}"}},
                                     {{"record_id", "r1"}, {"round", 2}, {"text", "<thinking>ok</thinking>apple"}},
                                     {{"record_id", "r2"}, {"round", 2}, {"text", "<thinking>ok</thinking>blue"}}}}});
        write_json("corpus.json", {{"docs", {{{"id", "d1"}, {"title", "Apple"}, {"content", "apple is a fruit"}}}}});
        write_json("config.json", {{"seed", 1},
                                   {"output_dir", "out"},
                                   {"backends",
                                    {{"policy", {{"type", "scripted"}, {"script", "policy.json"}}},
                                     {"judge", {{"type", "oracle"}}},
                                     {"search", {{"type", "simulated"}, {"corpus", "corpus.json"}}}}}});
        return load_run_config(dir_ / "config.json");
    }

    fs::path dir_;
};

}  // namespace

TEST_F(CliTest, ConfigResolvesPathsAgainstConfigDir) {
    const auto c = basic_config();
    EXPECT_EQ(c.policy.path, dir_ / "policy.json");
    EXPECT_EQ(c.output_dir, dir_ / "out");
    EXPECT_EQ(c.agent.max_rounds, 7);
    EXPECT_EQ(c.grpo.group_size, 14);
    EXPECT_EQ(c.schedule.switch_step, 80);
    EXPECT_EQ(c.toy.schedule.switch_step, 80);
}

TEST_F(CliTest, ConfigErrorsNameTheField) {
    auto expect_error = [&](const json& doc, const std::string& field) {
        try {
            run_config_from_json(doc, dir_);
            FAIL() << field;
        } catch (const ConfigError& e) {
            EXPECT_EQ(std::string(e.what()).rfind(field, 0), 0u) << e.what();
        }
    };
    expect_error({{"agent", {{"max_rounds", 0}}}}, "agent");
    expect_error({{"grpo", {{"clip_epsilon", 2.0}}}}, "grpo");
    expect_error({{"backends", {{"policy", {{"type", "carrier-pigeon"}}}}}}, "backends.policy.type");
    expect_error({{"backends", {{"policy", {{"type", "scripted"}, {"script", "missing.json"}}}}}}, "backends.policy.script");
    expect_error({{"backends", {{"search", {{"type", "simulated"}}}}}}, "backends.search.corpus");
    expect_error({{"backends", {{"judge", {{"type", "oracle"}, {"matching", "fuzzy"}}}}}}, "backends.judge.matching");
    expect_error({{"eval", {{"runs", 0}}}}, "eval.runs");
    expect_error({{"workers", 0}}, "workers");
    expect_error(json::array(), "<root>");
    EXPECT_THROW(load_run_config(dir_ / "nope.json"), ConfigError);
    write("broken.json", "{not json");
    EXPECT_THROW(load_run_config(dir_ / "broken.json"), ConfigError);
}

TEST_F(CliTest, OverridesApply) {
    auto c = basic_config();
    c.mixture = dataset::MixtureSpec{};
    apply_overrides(c, {42, 3, dir_ / "elsewhere"});
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.mixture->seed, 42u);
    EXPECT_EQ(c.workers, 3u);
    EXPECT_EQ(c.toy.workers, 3);
    EXPECT_EQ(c.output_dir, dir_ / "elsewhere");
    EXPECT_THROW(apply_overrides(c, {std::nullopt, 0, std::nullopt}), ConfigError);
}

TEST_F(CliTest, TagEvalAndRolloutWriteOutputs) {
    const auto c = basic_config();
    const auto records = dir_ / "records.jsonl";
    const auto tag = cmd_tag(c, records);
    const auto tagged = dataset::read_records(tag.outputs[0].string());
    EXPECT_EQ(tagged[0].difficulty, dataset::Difficulty::Easy);
    EXPECT_EQ(tagged[1].difficulty, dataset::Difficulty::Outlier);
    EXPECT_NE(tag.summary.find("Easy 1"), std::string::npos);

    const auto ev = cmd_eval(c, tag.outputs[0], 2);
    const auto report = json::parse(read(ev.outputs[0]));
    EXPECT_EQ(report["runs"], 2);
    EXPECT_DOUBLE_EQ(report["accuracy"].get<double>(), 0.5);
    EXPECT_DOUBLE_EQ(report["per_subset"]["Easy&Medium"]["accuracy"].get<double>(), 1.0);
    EXPECT_EQ(read_trajectories(ev.outputs[2]).size(), 4u);

    const auto ro = cmd_rollout(c, records, 3);
    EXPECT_EQ(read_trajectories(ro.outputs[0]).size(), 6u);
    EXPECT_THROW(cmd_rollout(c, records, 0), ConfigError);
    EXPECT_FALSE(fs::exists(ro.outputs[0].string() + ".tmp"));
}

TEST_F(CliTest, ExitCodes) {
    auto c = basic_config();
    std::ostringstream out, err;
    EXPECT_EQ(run_guarded([&] { return cmd_tag(c, dir_ / "records.jsonl"); }, out, err), kOk);
    EXPECT_NE(out.str().find("tag:"), std::string::npos);
    EXPECT_EQ(run_guarded([&] { return cmd_tag(c, dir_ / "missing.jsonl"); }, out, err), kDataError);
    EXPECT_EQ(run_guarded([&] { return cmd_mix(c, dir_ / "records.jsonl"); }, out, err), kConfigError);

    write_json("empty_script.json", json::object());
    c.policy.path = dir_ / "empty_script.json";
    err.str("");
    EXPECT_EQ(run_guarded([&] { return cmd_tag(c, dir_ / "records.jsonl"); }, out, err), kBackendFailure);
    EXPECT_NE(err.str().find("backend failure"), std::string::npos);
    EXPECT_EQ(run_guarded([]() -> CommandResult { throw ConfigError("x: y"); }, out, err), kConfigError);
}

TEST_F(CliTest, IsolateAndMix) {
    auto c = basic_config();
    write_json("policy_b.json", {{"queue", json::array()}, {"turns", {{{"text", "<thinking>t</thinking>apple"}}}}});
    c.policy_b = {"scripted", dir_ / "policy_b.json", "exact", {}};
    write_json("policy_a.json", {{"turns", {{{"text", "<thinking>t</thinking>apple"}}}}});
    c.policy.path = dir_ / "policy_a.json";
    const auto iso = cmd_isolate(c, dir_ / "records.jsonl", 1);
    const auto survivors = dataset::read_records(iso.outputs[0].string());
    ASSERT_EQ(survivors.size(), 1u);
    EXPECT_EQ(survivors[0].id, "r2");

    write("tagged.jsonl", R"({"id":"a","question":"q","solution":"s","category":"WikiRiddle","difficulty":"Hard"})" "\n"
                          R"({"id":"b","question":"q","solution":"s","category":"WikiRiddle","difficulty":"Hard"})" "\n");
    c.mixture = dataset::mixture_spec_from_json({{"targets", {{"WikiRiddle", {{"Hard", 1}, {"Easy", 2}}}}}});
    const auto mix = cmd_mix(c, dir_ / "tagged.jsonl");
    EXPECT_EQ(dataset::read_records(mix.outputs[0].string()).size(), 1u);
    EXPECT_EQ(json::parse(read(mix.outputs[1]))["shortfalls"].size(), 1u);
}

TEST_F(CliTest, TrainToyAndReport) {
    auto c = basic_config();
    c.grpo.group_size = 4;
    c.grpo.batch_size = 2;
    c.grpo.learning_rate = 1.0;
    const auto train = cmd_train_toy(c, 5);
    EXPECT_EQ(grpo::read_training_log(train.outputs[0].string()).size(), 5u);
    EXPECT_EQ(json::parse(read(train.outputs[1]))["n_states"], 9);
    const auto again = cmd_train_toy(c, 5);
    EXPECT_EQ(read(train.outputs[0]), read(again.outputs[0]));

    write_json("report.json", {{"accuracy", 0.5}, {"per_subset", {{"WikiRiddle", {{"accuracy", 1.0}}}}}});
    const auto rep = cmd_report(c, train.outputs[0], dir_ / "report.json");
    ASSERT_EQ(rep.outputs.size(), 4u);
    EXPECT_EQ(read(rep.outputs[0]).rfind("metric,value\nsteps,5\n", 0), 0u);
    for (std::size_t i = 1; i < rep.outputs.size(); ++i) {
        const auto svg = read(rep.outputs[i]);
        EXPECT_EQ(svg.rfind("<svg", 0), 0u);
        EXPECT_NE(svg.find("</svg>"), std::string::npos);
    }
    write("empty.jsonl", "");
    EXPECT_THROW(cmd_report(c, dir_ / "empty.jsonl"), DataError);
}

TEST_F(CliTest, BehaviorsNeedsModelJudge) {
    auto c = basic_config();
    const auto ro = cmd_rollout(c, dir_ / "records.jsonl", 1);
    EXPECT_THROW(cmd_behaviors(c, ro.outputs[0]), ConfigError);
    write_json("judge.json", {{"turns", {{{"text", "<count>1</count>"}}}}});
    c.judge = {"scripted", dir_ / "judge.json", "exact", {}};
    const auto b = cmd_behaviors(c, ro.outputs[0], dir_ / "records.jsonl");
    const auto counts = json::parse(read(b.outputs[0]));
    EXPECT_EQ(counts["n"], 2);
    EXPECT_DOUBLE_EQ(counts["reflection_correction"].get<double>(), 1.0);
}

TEST(Svg, EscapesLabels) {
    const auto svg = bar_chart_svg("a<b & c", {{"x\"y", 0.5}});
    EXPECT_NE(svg.find("a&lt;b &amp; c"), std::string::npos);
    EXPECT_EQ(svg.find("a<b"), std::string::npos);
    const auto line = line_chart_svg("t", "step", {{"s", {}}});
    EXPECT_NE(line.find("</svg>"), std::string::npos);
}
