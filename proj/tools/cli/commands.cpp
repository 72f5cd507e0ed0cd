#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <deepdiver/common.hpp>
#include <deepdiver/eval.hpp>

namespace deepdiver::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path out_path(const RunConfig& config, const char* name) {
    fs::create_directories(config.output_dir);
    return config.output_dir / name;
}

std::vector<dataset::QARecord> load_records(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("no such records file: " + path.string());
    return dataset::read_records(path.string());
}

/// Individual failures are tolerated; a run where nothing reached the model
/// is not.
void fail_if_all_backend_errors(const std::vector<agent::Trajectory>& trajs) {
    if (trajs.empty()) return;
    for (const auto& t : trajs) {
        if (t.terminated_by != agent::Termination::BackendError) return;
    }
    throw BackendError(BackendError::Kind::Transport,
                       "all " + std::to_string(trajs.size()) + " episodes failed; first error: " + trajs.front().error);
}

std::string jsonl(const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    return out;
}

std::string fmt_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
constexpr double kW = 640, kH = 360, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;

}  // namespace

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << content;
        if (!out) throw DataError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::vector<agent::Trajectory> read_trajectories(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open trajectories file: " + path.string());
    std::vector<agent::Trajectory> out;
    std::string line;
    for (int line_no = 1; std::getline(in, line); ++line_no) {
        if (trim(line).empty()) continue;
        try {
            out.push_back(agent::trajectory_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

CommandResult cmd_tag(const RunConfig& config, const fs::path& records_path) {
    const auto records = load_records(records_path);
    auto model = make_model(config.policy, "backends.policy");
    auto search = make_search(config.search, config.seed);
    auto judge = make_grader(config.judge);

    const auto result = dataset::run_tagging(records, config.agent, *model, *search, *judge.grader, config.workers);
    if (!records.empty() && std::all_of(result.audit.begin(), result.audit.end(), [](const auto& a) { return a.termination == "BackendError"; })) {
        throw BackendError(BackendError::Kind::Transport, "every tagging attempt failed at the policy backend");
    }

    CommandResult r;
    r.outputs = {out_path(config, "tagged.jsonl"), out_path(config, "tagging_audit.jsonl")};
    std::vector<json> tagged, audit;
    for (const auto& rec : result.records) tagged.push_back(dataset::to_json(rec));
    for (const auto& a : result.audit) audit.push_back(dataset::to_json(a));
    write_file(r.outputs[0], jsonl(tagged));
    write_file(r.outputs[1], jsonl(audit));

    std::map<dataset::Difficulty, int> counts;
    for (const auto& rec : result.records) ++counts[*rec.difficulty];
    std::ostringstream s;
    s << "tag: " << records.size() << " records";
    for (auto d : dataset::kAllDifficulties) s << ", " << dataset::to_string(d) << " " << counts[d];
    s << " -> " << r.outputs[0].string();
    r.summary = s.str();
    return r;
}

CommandResult cmd_rollout(const RunConfig& config, const fs::path& records_path, int n) {
    if (n < 1) throw ConfigError("-n: must be >= 1");
    const auto records = load_records(records_path);
    auto model = make_model(config.policy, "backends.policy");
    auto search = make_search(config.search, config.seed);

    const auto per = static_cast<std::size_t>(n);
    std::vector<agent::Trajectory> trajs(records.size() * per);
    parallel_for(trajs.size(), config.workers, [&](std::size_t k) {
        trajs[k] = agent::run_episode(records[k / per], *model, *search, config.agent, static_cast<int>(k % per) + 1);
    });
    fail_if_all_backend_errors(trajs);

    CommandResult r;
    r.outputs = {out_path(config, "trajectories.jsonl")};
    std::vector<json> rows;
    int answered = 0;
    for (const auto& t : trajs) {
        rows.push_back(agent::to_json(t));
        answered += t.terminated_by == agent::Termination::Answered;
    }
    write_file(r.outputs[0], jsonl(rows));
    r.summary = "rollout: " + std::to_string(trajs.size()) + " episodes, " + std::to_string(answered) + " answered -> " + r.outputs[0].string();
    return r;
}

CommandResult cmd_eval(const RunConfig& config, const fs::path& records_path, std::optional<int> runs) {
    const int n_runs = runs.value_or(config.eval_runs);
    if (n_runs < 1) throw ConfigError("--runs: must be >= 1");
    const auto records = load_records(records_path);
    auto model = make_model(config.policy, "backends.policy");
    auto search = make_search(config.search, config.seed);
    auto judge = make_grader(config.judge);

    const auto result = eval::evaluate(records, *model, *search, config.agent, *judge.grader, n_runs, config.workers);
    fail_if_all_backend_errors(result.trajectories);

    CommandResult r;
    r.outputs = {out_path(config, "eval_report.json"), out_path(config, "eval_records.csv"), out_path(config, "eval_trajectories.jsonl")};
    write_file(r.outputs[0], eval::to_json(result.report).dump(2) + "\n");
    write_file(r.outputs[1], eval::outcomes_csv(result.outcomes));
    std::vector<json> rows;
    for (const auto& t : result.trajectories) rows.push_back(agent::to_json(t));
    write_file(r.outputs[2], jsonl(rows));

    const auto& rep = result.report;
    r.summary = "eval: " + std::to_string(rep.n) + " records x " + std::to_string(n_runs) + " runs, accuracy " + fmt_num(rep.accuracy) +
                ", search rounds " + fmt_num(rep.avg_search_rounds) + " -> " + r.outputs[0].string();
    return r;
}

CommandResult cmd_isolate(const RunConfig& config, const fs::path& records_path, std::optional<int> k) {
    const int kk = k.value_or(config.isolation_k);
    if (kk < 1) throw ConfigError("-k: must be >= 1");
    const auto records = load_records(records_path);
    auto model_a = make_model(config.policy, "backends.policy");
    auto model_b = make_model(config.policy_b, "backends.policy_b");
    auto judge = make_grader(config.judge);

    const auto result = eval::isolation_filter(records, *model_a, *model_b, kk, *judge.grader, config.agent, config.workers);

    CommandResult r;
    r.outputs = {out_path(config, "isolation_survivors.jsonl"), out_path(config, "isolation_report.json")};
    std::vector<json> rows;
    for (const auto& rec : result.survivors) rows.push_back(dataset::to_json(rec));
    write_file(r.outputs[0], jsonl(rows));
    json report = {{"k", kk}, {"n", records.size()}, {"survivors", result.survivors.size()}, {"pass_a", result.pass_a}, {"pass_b", result.pass_b}};
    write_file(r.outputs[1], report.dump(2) + "\n");
    r.summary = "isolate: " + std::to_string(result.survivors.size()) + " of " + std::to_string(records.size()) + " records survive at k=" +
                std::to_string(kk) + " -> " + r.outputs[0].string();
    return r;
}

CommandResult cmd_mix(const RunConfig& config, const fs::path& tagged_path) {
    if (!config.mixture) throw ConfigError("mixture: missing section");
    const auto records = load_records(tagged_path);
    const auto result = dataset::select_mixture(records, *config.mixture);

    CommandResult r;
    r.outputs = {out_path(config, "mixture.jsonl"), out_path(config, "mixture_report.json")};
    std::vector<json> rows;
    for (const auto& rec : result.selected) rows.push_back(dataset::to_json(rec));
    write_file(r.outputs[0], jsonl(rows));
    json shortfalls = json::array();
    for (const auto& s : result.shortfalls) {
        shortfalls.push_back({{"category", dataset::to_string(s.cell.first)},
                              {"difficulty", dataset::to_string(s.cell.second)},
                              {"target", s.target},
                              {"available", s.available}});
    }
    write_file(r.outputs[1], json{{"selected", result.selected.size()}, {"shortfalls", shortfalls}}.dump(2) + "\n");
    r.summary = "mix: selected " + std::to_string(result.selected.size()) + " records, " + std::to_string(result.shortfalls.size()) +
                " cells short -> " + r.outputs[0].string();
    return r;
}

CommandResult cmd_train_toy(const RunConfig& config, std::optional<int> steps) {
    grpo::ToyTrainConfig train = config.toy;
    if (steps) train.steps = *steps;
    train.validate();
    const auto env = grpo::make_toy_env(config.toy_env.n_tasks, config.toy_env.unanswerable_fraction, config.toy_env.n_answers, config.seed);
    const auto log = grpo::train_toy(env, config.grpo, train, config.seed);

    CommandResult r;
    r.outputs = {out_path(config, "training_log.jsonl"), out_path(config, "toy_policy.json")};
    std::vector<json> rows;
    for (const auto& m : log.steps) rows.push_back(grpo::to_json(m));
    write_file(r.outputs[0], jsonl(rows));
    json policy = {{"n_states", log.final_policy.n_states}, {"n_actions", log.final_policy.n_actions}, {"logits", log.final_policy.logits}};
    write_file(r.outputs[1], policy.dump(2) + "\n");

    const auto trend = grpo::training_trend(log.steps);
    r.summary = "train-toy: " + std::to_string(trend.steps) + " steps, reward " + fmt_num(trend.initial_reward) + " -> " +
                fmt_num(trend.final_reward) + ", search rate " + fmt_num(trend.initial_search_rate) + " -> " +
                fmt_num(trend.final_search_rate) + " -> " + r.outputs[0].string();
    return r;
}

CommandResult cmd_behaviors(const RunConfig& config, const fs::path& trajectories, const std::optional<fs::path>& records_path) {
    if (config.judge.type == "oracle") throw ConfigError("backends.judge.type: behavior counting needs a scripted or http judge");
    const auto trajs = read_trajectories(trajectories);
    std::vector<dataset::QARecord> records;
    if (records_path) records = load_records(*records_path);
    auto judge = make_model(config.judge, "backends.judge");

    const auto counts = eval::behavior_stats(trajs, records, *judge, config.workers);
    CommandResult r;
    r.outputs = {out_path(config, "behavior_counts.json")};
    write_file(r.outputs[0], eval::to_json(counts).dump(2) + "\n");
    r.summary = "behaviors: " + std::to_string(counts.n) + " trajectories, reflection " + fmt_num(counts.reflection_correction) +
                ", conflict " + fmt_num(counts.conflict_resolution) + ", verification " + fmt_num(counts.verification_denoising) + " -> " +
                r.outputs[0].string();
    return r;
}

CommandResult cmd_report(const RunConfig& config, const fs::path& training_log, const std::optional<fs::path>& eval_report) {
    if (!fs::exists(training_log)) throw DataError("no such training log: " + training_log.string());
    const auto steps = grpo::read_training_log(training_log.string());
    if (steps.empty()) throw DataError(training_log.string() + ": training log is empty");
    const auto trend = grpo::training_trend(steps);

    Series reward{"mean reward", {}}, search{"search calls per rollout", {}}, acc{"accuracy", {}};
    double kl_sum = 0.0;
    for (const auto& m : steps) {
        reward.values.push_back(m.mean_reward);
        search.values.push_back(m.search_rate);
        acc.values.push_back(m.accuracy);
        kl_sum += m.kl;
    }

    std::ostringstream csv;
    csv << "metric,value\n"
        << "steps," << trend.steps << "\n"
        << "initial_mean_reward," << fmt_num(trend.initial_reward) << "\n"
        << "final_mean_reward," << fmt_num(trend.final_reward) << "\n"
        << "initial_search_rate," << fmt_num(trend.initial_search_rate) << "\n"
        << "final_search_rate," << fmt_num(trend.final_search_rate) << "\n"
        << "reward_search_pearson," << fmt_num(trend.reward_search_correlation) << "\n"
        << "mean_kl," << fmt_num(kl_sum / static_cast<double>(steps.size())) << "\n"
        << "final_loss," << fmt_num(steps.back().loss) << "\n";

    CommandResult r;
    r.outputs = {out_path(config, "report_summary.csv"), out_path(config, "reward_curve.svg"), out_path(config, "search_curve.svg")};
    write_file(r.outputs[0], csv.str());
    write_file(r.outputs[1], line_chart_svg("Training reward", "step", {reward, acc}));
    write_file(r.outputs[2], line_chart_svg("Search calls per rollout", "step", {search}));

    if (eval_report) {
        std::ifstream in(*eval_report);
        if (!in) throw DataError("cannot open eval report: " + eval_report->string());
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw DataError(eval_report->string() + ": " + e.what());
        }
        std::vector<std::pair<std::string, double>> bars{{"overall", doc.at("accuracy").get<double>()}};
        const json subsets = doc.value("per_subset", json::object());
        for (const auto& [key, stats] : subsets.items()) bars.emplace_back(key, stats.at("accuracy").get<double>());
        r.outputs.push_back(out_path(config, "accuracy_bars.svg"));
        write_file(r.outputs.back(), bar_chart_svg("Accuracy by subset", bars));
    }
    r.summary = "report: " + std::to_string(steps.size()) + " steps, reward/search pearson " + fmt_num(trend.reward_search_correlation) +
                " -> " + r.outputs[0].string();
    return r;
}

// ---------------------------------------------------------------------------

int run_guarded(const std::function<CommandResult()>& fn, std::ostream& out, std::ostream& err) {
    try {
        const auto r = fn();
        out << r.summary << std::endl;
        return kOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << std::endl;
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << std::endl;
        return kConfigError;
    } catch (const BackendError& e) {
        err << "backend failure (" << to_string(e.kind()) << "): " << e.what() << std::endl;
        return kBackendFailure;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << std::endl;
        return kDataError;
    } catch (const json::exception& e) {
        err << "data error: " << e.what() << std::endl;
        return kDataError;
    } catch (const Error& e) {
        err << "data error: " << e.what() << std::endl;
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << std::endl;
        return kDataError;
    }
}

// ---------------------------------------------------------------------------

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::vector<Series>& series) {
    std::size_t n = 0;
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values) {
            lo = first ? v : std::min(lo, v);
            hi = first ? v : std::max(hi, v);
            first = false;
        }
    }
    lo = std::min(lo, 0.0);
    if (hi <= lo) hi = lo + 1.0;
    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    auto x_of = [&](std::size_t i) { return kLeft + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0); };
    auto y_of = [&](double v) { return kTop + ph * (1.0 - (v - lo) / (hi - lo)); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title) << "</text>\n"
        << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << y_of(v) + 4 << "\" text-anchor=\"end\">" << fmt_num(v) << "</text>\n";
        if (n > 0) {
            const auto i = static_cast<std::size_t>(std::lround(static_cast<double>(n - 1) * t / 4.0));
            svg << "<text x=\"" << x_of(i) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << i << "</text>\n";
        }
    }
    svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">" << xml_escape(x_label) << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = kPalette[k % std::size(kPalette)];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[k].values.size(); ++i) svg << (i ? " " : "") << fmt_num(x_of(i)) << "," << fmt_num(y_of(series[k].values[i]));
        svg << "\"/>\n";
        const double ly = kTop + 14.0 * static_cast<double>(k);
        svg << "<rect x=\"" << kLeft + pw - 150 << "\" y=\"" << ly - 8 << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n"
            << "<text x=\"" << kLeft + pw - 135 << "\" y=\"" << ly + 1 << "\">" << xml_escape(series[k].label) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::pair<std::string, double>>& bars) {
    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    const double slot = bars.empty() ? pw : pw / static_cast<double>(bars.size());
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title) << "</text>\n"
        << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << kTop + ph * (1.0 - t / 4.0) + 4 << "\" text-anchor=\"end\">" << fmt_num(t / 4.0) << "</text>\n";
    }
    for (std::size_t k = 0; k < bars.size(); ++k) {
        const double v = std::clamp(bars[k].second, 0.0, 1.0);
        const double x = kLeft + slot * static_cast<double>(k) + slot * 0.15;
        svg << "<rect x=\"" << fmt_num(x) << "\" y=\"" << fmt_num(kTop + ph * (1.0 - v)) << "\" width=\"" << fmt_num(slot * 0.7) << "\" height=\""
            << fmt_num(ph * v) << "\" fill=\"" << kPalette[k % std::size(kPalette)] << "\"/>\n"
            << "<text x=\"" << fmt_num(x + slot * 0.35) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << xml_escape(bars[k].first)
            << "</text>\n"
            << "<text x=\"" << fmt_num(x + slot * 0.35) << "\" y=\"" << fmt_num(kTop + ph * (1.0 - v) - 4) << "\" text-anchor=\"middle\">"
            << fmt_num(bars[k].second) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace deepdiver::cli
