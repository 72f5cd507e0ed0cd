#include "run_config.hpp"

#include <fstream>

#include <deepdiver/common.hpp>

namespace deepdiver::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const json& section(const json& doc, const char* key) {
    static const json empty = json::object();
    if (!doc.contains(key)) return empty;
    if (!doc.at(key).is_object()) throw ConfigError(std::string(key) + ": expected an object");
    return doc.at(key);
}

fs::path existing(const fs::path& base, const json& node, const std::string& field) {
    if (!node.is_string()) throw ConfigError(field + ": expected a path string");
    fs::path p = node.get<std::string>();
    if (p.is_relative()) p = base / p;
    if (!fs::exists(p)) throw ConfigError(field + ": no such file: " + p.string());
    return p;
}

/// Runs a section parser and prefixes any error with its field path.
template <typename Fn>
auto parse_section(const std::string& field, Fn fn) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(field + ": " + e.what());
    }
}

BackendSpec backend_spec(const json& node, const fs::path& base, const std::string& field, const BackendSpec& fallback) {
    if (node.is_null()) return fallback;
    if (!node.is_object()) throw ConfigError(field + ": expected an object");
    BackendSpec spec;
    spec.raw = node;
    spec.type = node.value("type", std::string());
    if (spec.type.empty()) throw ConfigError(field + ".type: missing");
    if (node.contains("script")) spec.path = existing(base, node.at("script"), field + ".script");
    if (node.contains("corpus")) spec.path = existing(base, node.at("corpus"), field + ".corpus");
    spec.matching = node.value("matching", spec.matching);
    return spec;
}

void check_type(const BackendSpec& spec, const std::string& field, std::initializer_list<const char*> allowed) {
    for (const char* a : allowed) {
        if (spec.type == a) return;
    }
    throw ConfigError(field + ".type: unsupported backend type '" + spec.type + "'");
}

}  // namespace

RunConfig run_config_from_json(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) throw ConfigError("<root>: expected an object");
    RunConfig c;
    try {
        c.seed = doc.value("seed", std::uint64_t{0});
        c.workers = doc.value("workers", std::size_t{1});
        if (doc.contains("output_dir")) {
            c.output_dir = doc.at("output_dir").get<std::string>();
            if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
        } else {
            c.output_dir = base_dir / "out";
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("<root>: ") + e.what());
    }
    if (c.workers < 1) throw ConfigError("workers: must be >= 1");

    c.agent = parse_section("agent", [&] { return agent::agent_config_from_json(section(doc, "agent")); });
    c.grpo = parse_section("grpo", [&] { return grpo::grpo_config_from_json(section(doc, "grpo")); });
    c.schedule.switch_step = parse_section("schedule.switch_step", [&] { return section(doc, "schedule").value("switch_step", 80); });
    if (c.schedule.switch_step < 0) throw ConfigError("schedule.switch_step: must be >= 0");

    c.toy = parse_section("toy", [&] {
        json toy = section(doc, "toy");
        if (!toy.contains("switch_step")) toy["switch_step"] = c.schedule.switch_step;
        if (!toy.contains("workers")) toy["workers"] = c.workers;
        return grpo::toy_train_config_from_json(toy);
    });
    parse_section("toy", [&] {
        const json& toy = section(doc, "toy");
        c.toy_env.n_tasks = toy.value("n_tasks", c.toy_env.n_tasks);
        c.toy_env.unanswerable_fraction = toy.value("unanswerable_fraction", c.toy_env.unanswerable_fraction);
        c.toy_env.n_answers = toy.value("n_answers", c.toy_env.n_answers);
        return 0;
    });

    parse_section("eval", [&] {
        const json& ev = section(doc, "eval");
        c.eval_runs = ev.value("runs", c.eval_runs);
        c.isolation_k = ev.value("isolation_k", c.isolation_k);
        return 0;
    });
    if (c.eval_runs < 1) throw ConfigError("eval.runs: must be >= 1");
    if (c.isolation_k < 1) throw ConfigError("eval.isolation_k: must be >= 1");

    if (doc.contains("mixture")) {
        c.mixture = parse_section("mixture", [&] { return dataset::mixture_spec_from_json(doc.at("mixture")); });
        if (!doc.at("mixture").contains("seed")) c.mixture->seed = c.seed;
    }

    const json& b = section(doc, "backends");
    auto node = [&](const char* key) { return b.contains(key) ? b.at(key) : json(); };
    c.policy = backend_spec(node("policy"), base_dir, "backends.policy", c.policy);
    c.policy_b = backend_spec(node("policy_b"), base_dir, "backends.policy_b", c.policy_b);
    c.judge = backend_spec(node("judge"), base_dir, "backends.judge", c.judge);
    c.search = backend_spec(node("search"), base_dir, "backends.search", c.search);
    check_type(c.policy, "backends.policy", {"scripted", "http"});
    check_type(c.policy_b, "backends.policy_b", {"scripted", "http"});
    check_type(c.judge, "backends.judge", {"scripted", "http", "oracle"});
    check_type(c.search, "backends.search", {"simulated", "web", "none"});
    if (c.judge.type == "oracle" && c.judge.matching != "exact" && c.judge.matching != "relaxed") {
        throw ConfigError("backends.judge.matching: expected 'exact' or 'relaxed'");
    }
    if (c.search.type == "simulated" && c.search.path.empty()) throw ConfigError("backends.search.corpus: missing");
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("--config: no such file: " + path.string());
    std::ifstream in(path);
    if (!in) throw ConfigError("--config: cannot read " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    auto base = path.parent_path();
    if (base.empty()) base = ".";
    RunConfig c = run_config_from_json(doc, base);
    c.source = path;
    return c;
}

void apply_overrides(RunConfig& config, const Overrides& o) {
    if (o.seed) {
        config.seed = *o.seed;
        if (config.mixture) config.mixture->seed = *o.seed;
    }
    if (o.workers) {
        if (*o.workers < 1) throw ConfigError("--workers: must be >= 1");
        config.workers = *o.workers;
        config.toy.workers = static_cast<int>(*o.workers);
    }
    if (o.output_dir) config.output_dir = *o.output_dir;
}

std::unique_ptr<backends::ModelBackend> make_model(const BackendSpec& spec, const std::string& field) {
    if (spec.type == "scripted") {
        if (spec.path.empty()) throw ConfigError(field + ".script: missing");
        try {
            return backends::load_script(spec.path.string());
        } catch (const DataError& e) {
            throw ConfigError(field + ".script: " + e.what());
        }
    }
    if (spec.type == "http") {
        return parse_section(field, [&] { return std::make_unique<backends::HttpChatBackend>(backends::http_chat_config_from_json(spec.raw)); });
    }
    throw ConfigError(field + ".type: '" + spec.type + "' is not a model backend");
}

std::unique_ptr<search::SearchBackend> make_search(const BackendSpec& spec, std::uint64_t seed) {
    if (spec.type == "none") return std::make_unique<search::NoSearch>();
    if (spec.type == "web") {
        return parse_section("backends.search", [&] { return std::make_unique<search::WebSearch>(search::web_search_config_from_json(spec.raw)); });
    }
    search::SimCorpus corpus;
    try {
        corpus = search::load_corpus(spec.path.string());
    } catch (const DataError& e) {
        throw ConfigError(std::string("backends.search.corpus: ") + e.what());
    }
    corpus.seed = seed;
    return std::make_unique<search::SimulatedSearch>(std::move(corpus));
}

GraderHandle make_grader(const BackendSpec& spec) {
    GraderHandle h;
    if (spec.type == "oracle") {
        h.grader = std::make_unique<reward::OracleGrader>(spec.matching == "relaxed" ? reward::OracleGrader::Matching::Relaxed
                                                                                      : reward::OracleGrader::Matching::Exact);
        return h;
    }
    h.model = make_model(spec, "backends.judge");
    h.grader = std::make_unique<reward::LlmGrader>(*h.model);
    return h;
}

}  // namespace deepdiver::cli
