#include "deepdiver/eval.hpp"

#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "deepdiver/common.hpp"
#include "deepdiver/prompts.hpp"

namespace deepdiver::eval {

using nlohmann::json;

namespace {

json to_json(const SubsetStats& s) {
    return {{"n", s.n}, {"accuracy", s.accuracy}, {"avg_search_rounds", s.avg_search_rounds}, {"avg_search_queries", s.avg_search_queries}};
}

std::string csv_field(std::string_view text) {
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

bool graded_correct(const dataset::QARecord& record, const agent::Trajectory& traj, reward::Grader& grader) {
    if (!traj.final_answer) return false;
    const backends::RequestContext ctx{record.id, traj.attempt, 1, "strict"};
    try {
        return reward::accuracy_reward(grader.grade(record, *traj.final_answer, reward::GraderMode::Strict, ctx)) == 1.0;
    } catch (const BackendError& e) {
        spdlog::warn("record {} run {}: judge failure, counted incorrect: {}", record.id, traj.attempt, e.what());
        return false;
    }
}

}  // namespace

json to_json(const EvalReport& r) {
    json subsets = json::object();
    for (const auto& [key, stats] : r.per_subset) subsets[key] = to_json(stats);
    return {{"n", r.n},
            {"runs", r.runs},
            {"accuracy", r.accuracy},
            {"avg_search_rounds", r.avg_search_rounds},
            {"avg_search_queries", r.avg_search_queries},
            {"run_accuracy", r.run_accuracy},
            {"per_subset", subsets}};
}

std::string outcomes_csv(const std::vector<RecordOutcome>& outcomes) {
    std::ostringstream out;
    out << "id,run,category,difficulty,termination,correct,search_rounds,search_queries,answer\n";
    for (const auto& o : outcomes) {
        out << csv_field(o.id) << ',' << o.run << ',' << dataset::to_string(o.category) << ','
            << (o.difficulty ? dataset::to_string(*o.difficulty) : "") << ',' << agent::to_string(o.termination) << ','
            << (o.correct ? 1 : 0) << ',' << o.search_rounds << ',' << o.search_queries << ','
            << (o.answer ? csv_field(*o.answer) : std::string()) << '\n';
    }
    return out.str();
}

EvalReport summarize(const std::vector<RecordOutcome>& outcomes, int runs) {
    EvalReport report;
    report.runs = runs;
    report.run_accuracy.assign(static_cast<std::size_t>(runs), 0.0);

    struct Acc {
        std::set<std::string> ids;
        double correct = 0, rounds = 0, queries = 0, count = 0;
    };
    Acc all;
    std::map<std::string, Acc> subsets;
    std::vector<double> run_counts(static_cast<std::size_t>(runs), 0.0);

    auto add = [](Acc& a, const RecordOutcome& o) {
        a.ids.insert(o.id);
        a.correct += o.correct;
        a.rounds += o.search_rounds;
        a.queries += o.search_queries;
        a.count += 1;
    };
    for (const auto& o : outcomes) {
        if (o.run < 1 || o.run > runs) throw std::invalid_argument("outcome run index out of range");
        add(all, o);
        add(subsets[dataset::to_string(o.category)], o);
        if (o.difficulty) {
            const bool easy = *o.difficulty == dataset::Difficulty::Easy || *o.difficulty == dataset::Difficulty::Medium;
            add(subsets[std::string(easy ? kEasyMedium : kHardOutliers)], o);
        }
        report.run_accuracy[static_cast<std::size_t>(o.run - 1)] += o.correct;
        run_counts[static_cast<std::size_t>(o.run - 1)] += 1;
    }
    for (std::size_t r = 0; r < run_counts.size(); ++r) {
        if (run_counts[r] > 0) report.run_accuracy[r] /= run_counts[r];
    }

    report.n = static_cast<int>(all.ids.size());
    if (all.count > 0) {
        double sum = 0.0;
        for (double a : report.run_accuracy) sum += a;
        report.accuracy = sum / runs;
        report.avg_search_rounds = all.rounds / all.count;
        report.avg_search_queries = all.queries / all.count;
    }
    for (const auto& [key, a] : subsets) {
        report.per_subset[key] = {static_cast<int>(a.ids.size()), a.correct / a.count, a.rounds / a.count, a.queries / a.count};
    }
    return report;
}

EvalResult evaluate(const std::vector<dataset::QARecord>& records, backends::ModelBackend& model, search::SearchBackend& search,
                    const agent::AgentConfig& config, reward::Grader& grader, int runs, std::size_t workers) {
    if (runs < 1) throw std::invalid_argument("runs must be >= 1");
    config.validate();
    const auto r = static_cast<std::size_t>(runs);
    EvalResult result;
    result.outcomes.resize(records.size() * r);
    result.trajectories.resize(records.size() * r);

    parallel_for(records.size() * r, workers, [&](std::size_t k) {
        const auto& record = records[k / r];
        const int run = static_cast<int>(k % r) + 1;
        auto traj = agent::run_episode(record, model, search, config, run);
        if (traj.terminated_by == agent::Termination::BackendError) {
            spdlog::warn("record {} run {}: backend failure, counted incorrect: {}", record.id, run, traj.error);
        }
        RecordOutcome& o = result.outcomes[k];
        o.id = record.id;
        o.run = run;
        o.category = record.category;
        o.difficulty = record.difficulty;
        o.termination = traj.terminated_by;
        o.answer = traj.final_answer;
        o.correct = graded_correct(record, traj, grader);
        o.search_rounds = traj.search_rounds();
        o.search_queries = traj.search_queries();
        result.trajectories[k] = std::move(traj);
    });
    result.report = summarize(result.outcomes, runs);
    return result;
}

IsolationResult isolation_filter(const std::vector<dataset::QARecord>& records, backends::ModelBackend& model_a,
                                 backends::ModelBackend& model_b, int k, reward::Grader& grader, const agent::AgentConfig& config,
                                 std::size_t workers) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    agent::AgentConfig closed = config;
    closed.search_enabled = false;
    closed.validate();
    search::NoSearch none;

    const auto kk = static_cast<std::size_t>(k);
    // [record][model][attempt]
    std::vector<char> correct(records.size() * 2 * kk, 0);
    parallel_for(correct.size(), workers, [&](std::size_t idx) {
        const auto& record = records[idx / (2 * kk)];
        auto& model = (idx / kk) % 2 == 0 ? model_a : model_b;
        const int attempt = static_cast<int>(idx % kk) + 1;
        const auto traj = agent::run_episode(record, model, none, closed, attempt);
        correct[idx] = graded_correct(record, traj, grader);
    });

    IsolationResult out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        bool a = false, b = false;
        for (std::size_t t = 0; t < kk; ++t) {
            a = a || correct[i * 2 * kk + t];
            b = b || correct[i * 2 * kk + kk + t];
        }
        out.pass_a[records[i].id] = a;
        out.pass_b[records[i].id] = b;
        if (!(a && b)) out.survivors.push_back(records[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------

json to_json(const BehaviorCounts& c) {
    return {{"n", c.n},
            {"reflection_correction", c.reflection_correction},
            {"conflict_resolution", c.conflict_resolution},
            {"verification_denoising", c.verification_denoising}};
}

std::string reasoning_chain(const agent::Trajectory& trajectory) {
    std::string out;
    int number = 1;
    for (const auto& round : trajectory.rounds) {
        out += round.raw_turn;
        out += '\n';
        if (round.documents.empty()) continue;
        out += agent::kResultsHeader;
        for (const auto& doc : round.documents) out += agent::render_document(doc, number++);
        out += agent::kResultsFooter;
        out += '\n';
    }
    if (trajectory.unparsed_turn) out += *trajectory.unparsed_turn + "\n";
    return out;
}

std::optional<int> parse_count(std::string_view reply) {
    static const std::regex re(R"(<count>\s*([0-9]+)\s*</count>)");
    std::optional<int> value;
    const std::string s(reply);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
        value = std::stoi((*it)[1].str());
    }
    return value;
}

BehaviorCounts behavior_stats(const std::vector<agent::Trajectory>& trajectories, const std::vector<dataset::QARecord>& records,
                              backends::ModelBackend& judge, std::size_t workers) {
    struct Behavior {
        const char* name;
        std::string_view (*prompt)();
    };
    static const Behavior behaviors[] = {{"reflection", prompts::behavior_reflection},
                                         {"conflict", prompts::behavior_conflict},
                                         {"verification", prompts::behavior_verification}};

    std::map<std::string, const dataset::QARecord*, std::less<>> by_id;
    for (const auto& r : records) by_id[r.id] = &r;

    std::vector<int> counts(trajectories.size() * 3, 0);
    parallel_for(counts.size(), workers, [&](std::size_t idx) {
        const auto& traj = trajectories[idx / 3];
        const auto& behavior = behaviors[idx % 3];
        const auto it = by_id.find(traj.record_id);
        const std::string solution = it == by_id.end() ? std::string() : it->second->solution;
        const std::string prompt =
            prompts::render(behavior.prompt(), {{"query", traj.question}, {"cot", reasoning_chain(traj)}, {"solution", solution}});
        const backends::RequestContext ctx{traj.record_id, traj.attempt, 1, std::string("behavior:") + behavior.name};
        for (int ask = 0; ask < 2; ++ask) {
            if (const auto n = parse_count(judge.judge(prompt, ctx))) {
                counts[idx] = *n;
                return;
            }
        }
        spdlog::warn("trajectory {}#{}: no <count> for {} after one re-ask; using 0", traj.record_id, traj.attempt, behavior.name);
    });

    BehaviorCounts out;
    out.n = static_cast<int>(trajectories.size());
    if (trajectories.empty()) return out;
    double sums[3] = {0, 0, 0};
    for (std::size_t i = 0; i < counts.size(); ++i) sums[i % 3] += counts[i];
    const double n = static_cast<double>(trajectories.size());
    out.reflection_correction = sums[0] / n;
    out.conflict_resolution = sums[1] / n;
    out.verification_denoising = sums[2] / n;
    return out;
}

}  // namespace deepdiver::eval
