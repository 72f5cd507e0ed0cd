#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include <deepdiver/agent.hpp>
#include <deepdiver/backends.hpp>
#include <deepdiver/dataset.hpp>
#include <deepdiver/grpo.hpp>
#include <deepdiver/reward.hpp>
#include <deepdiver/search.hpp>

namespace deepdiver::cli {

/// Invalid or missing configuration; the message starts with the field path.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raw backend section; resolved into live objects by make_* below.
struct BackendSpec {
    std::string type;  ///< policy/judge: scripted | http | oracle (judge only); search: simulated | web | none
    std::filesystem::path path;  ///< script or corpus file, already resolved
    std::string matching = "exact";  ///< oracle judge: exact | relaxed
    nlohmann::json raw = nlohmann::json::object();
};

struct ToyEnvConfig {
    int n_tasks = 20;
    double unanswerable_fraction = 0.8;
    int n_answers = 4;
};

struct RunConfig {
    std::filesystem::path source;  ///< the config file itself
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::filesystem::path output_dir = "out";
    agent::AgentConfig agent;
    grpo::GRPOConfig grpo;
    grpo::ToyTrainConfig toy;
    ToyEnvConfig toy_env;
    reward::ScheduleConfig schedule;
    int eval_runs = 1;
    int isolation_k = 3;
    std::optional<dataset::MixtureSpec> mixture;
    BackendSpec policy{"scripted", {}};
    BackendSpec policy_b{"scripted", {}};  ///< second model for isolation testing
    BackendSpec judge{"oracle", {}};
    BackendSpec search{"none", {}};
};

/// Parses the JSON config. Relative paths resolve against the config file's
/// directory; referenced files must exist. Throws ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// Flag overrides applied after loading.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<std::filesystem::path> output_dir;
};
void apply_overrides(RunConfig& config, const Overrides& overrides);

std::unique_ptr<backends::ModelBackend> make_model(const BackendSpec& spec, const std::string& field);
std::unique_ptr<search::SearchBackend> make_search(const BackendSpec& spec, std::uint64_t seed);

/// The judge as a grader. Owns its model backend when it needs one.
struct GraderHandle {
    std::unique_ptr<backends::ModelBackend> model;
    std::unique_ptr<reward::Grader> grader;
};
GraderHandle make_grader(const BackendSpec& spec);

}  // namespace deepdiver::cli
