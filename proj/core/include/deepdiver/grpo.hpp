#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepdiver/agent.hpp"
#include "deepdiver/reward.hpp"

namespace deepdiver::grpo {

struct GRPOConfig {
    int group_size = 14;
    double clip_epsilon = 0.2;
    double kl_beta = 0.001;
    double learning_rate = 1e-6;
    double std_guard = 1e-6;
    int batch_size = 32;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

GRPOConfig grpo_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const GRPOConfig& config);

/// A_i = (r_i - mean) / std with the population std; all zeros when
/// std < std_guard.
std::vector<double> compute_advantages(std::span<const double> rewards, double std_guard);

/// Softmax policy over a finite action set, one logit row per state.
struct ToyPolicy {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> logits;  ///< row-major [state][action]

    ToyPolicy() = default;
    ToyPolicy(int states, int actions, double init = 0.0);

    double& logit(int state, int action) { return logits[index(state, action)]; }
    double logit(int state, int action) const { return logits[index(state, action)]; }
    std::vector<double> probs(int state) const;
    double logprob(int state, int action) const;
    std::size_t index(int state, int action) const {
        return static_cast<std::size_t>(state) * static_cast<std::size_t>(n_actions) + static_cast<std::size_t>(action);
    }

    bool operator==(const ToyPolicy&) const = default;
};

/// Exact KL(p || q) for the two policies' distributions at one state.
double categorical_kl(const ToyPolicy& p, const ToyPolicy& q, int state);

struct TokenStep {
    int state = 0;
    int action = 0;
    bool operator==(const TokenStep&) const = default;
};

/// One group of G rollouts of the same prompt. Per-rollout lists must have
/// equal lengths within a rollout.
struct RolloutGroup {
    std::vector<double> rewards;
    std::vector<std::vector<TokenStep>> tokens;
    std::vector<std::vector<double>> token_logprobs_old;
    std::vector<std::vector<double>> token_logprobs_ref;
    std::vector<std::vector<bool>> loss_mask;  ///< true = trained (model-generated)
    std::vector<double> advantages;

    /// Throws ShapeMismatch.
    void validate() const;
};

struct LossResult {
    double loss = 0.0;
    double surrogate = 0.0;  ///< (1/G) sum_i mean_t min(rho A, clip(rho) A)
    double kl = 0.0;         ///< (1/G) sum_i mean_t KL(pi_theta || pi_ref)
    std::vector<double> gradient;  ///< d loss / d logits, same layout as ToyPolicy::logits
};

/// loss = -(1/G) sum_i mean_{t unmasked} [min(rho A_i, clip(rho, 1-eps, 1+eps) A_i) - beta KL_t].
/// Rollouts with no unmasked token contribute nothing. The reference policy
/// supplies the exact per-state KL. Throws ShapeMismatch.
LossResult grpo_loss(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& reference,
                     const GRPOConfig& config);

/// logits - learning_rate * gradient.
ToyPolicy apply_update(const ToyPolicy& policy, std::span<const double> gradient, double learning_rate);

// ---------------------------------------------------------------------------
// Toy environment
// ---------------------------------------------------------------------------

struct ToyTask {
    int answer = 1;  ///< 1..n_answers
    bool answerable_without_search = false;
};

/// Observation states: 0 = opaque clue, c = clue pointing at answer c,
/// n_answers + c = answer c revealed by a search. Actions: 0 = search,
/// c = answer_c.
struct ToySeekEnv {
    std::vector<ToyTask> tasks;
    int n_answers = 4;

    int n_states() const { return 2 * n_answers + 1; }
    int n_actions() const { return n_answers + 1; }
    double unanswerable_fraction() const;
    /// Record whose solution is "answer_c".
    dataset::QARecord record(std::size_t task) const;
};

ToySeekEnv make_toy_env(int n_tasks, double unanswerable_fraction, int n_answers, std::uint64_t seed);

/// Search backend for the toy env: query "toy-task <k>" returns one document
/// revealing task k's answer.
class ToySearch final : public search::SearchBackend {
public:
    explicit ToySearch(const ToySeekEnv& env) : env_(env) {}
    search::ResultLists search(std::span<const std::string> queries, int k) override;

private:
    const ToySeekEnv& env_;
};

/// One sampled rollout together with the (state, action) steps the policy
/// took and the retrieved observations it was shown (masked).
struct ToyRollout {
    agent::Trajectory trajectory;
    std::vector<TokenStep> tokens;
    std::vector<bool> mask;
    std::vector<double> logprobs;  ///< under the sampling policy
};

struct ToyTrainConfig {
    int steps = 120;
    /// Initial logit of the search action in every state (others start at 0).
    double initial_search_logit = -1.0;
    /// Initial logit bonus for answer_c in the revealed_c state: how likely
    /// the untrained policy is to copy an answer it has just read.
    double reveal_prior = 2.0;
    /// Chance that an answer turn carries trailing words ("answer_3, final"),
    /// which only relaxed matching accepts.
    double verbose_answer_prob = 0.0;
    reward::ScheduleConfig schedule{};
    agent::AgentConfig agent{};
    int workers = 1;

    void validate() const;
};

ToyTrainConfig toy_train_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ToyTrainConfig& config);

/// Samples one episode of `policy` on `task` through the agent loop.
ToyRollout toy_rollout(const ToySeekEnv& env, std::size_t task, const ToyPolicy& policy, const ToyTrainConfig& config,
                       std::uint64_t seed, int attempt);

/// Softmax policy with every logit 0 except the search action and the
/// revealed answer in each revealed state.
ToyPolicy initial_toy_policy(const ToySeekEnv& env, double search_logit, double reveal_prior);

struct StepMetrics {
    int step = 0;
    reward::GraderMode mode = reward::GraderMode::Loose;
    double mean_reward = 0.0;
    double search_rate = 0.0;  ///< mean search rounds per rollout
    double accuracy = 0.0;     ///< fraction of rollouts with format * accuracy = 1
    double kl = 0.0;
    double loss = 0.0;

    bool operator==(const StepMetrics&) const = default;
};

nlohmann::json to_json(const StepMetrics& m);
StepMetrics step_metrics_from_json(const nlohmann::json& doc);

struct TrainingLog {
    std::vector<StepMetrics> steps;
    ToyPolicy final_policy;
};

void write_training_log(const std::string& path, const std::vector<StepMetrics>& steps);
std::vector<StepMetrics> read_training_log(const std::string& path);

/// Observer for every graded group: step, task index, rollouts and their
/// reward breakdowns.
using GroupObserver = std::function<void(int, std::size_t, const std::vector<ToyRollout>&,
                                         const std::vector<reward::RewardBreakdown>&)>;

/// Scores a group with `grader` under `mode`: format gate, accuracy and the
/// group search bonus.
std::vector<reward::RewardBreakdown> score_group(const ToySeekEnv& env, std::size_t task,
                                                 std::span<const agent::Trajectory> group, reward::Grader& grader,
                                                 reward::GraderMode mode);

/// GRPO on the toy env. Each step samples batch_size tasks with a group of
/// group_size rollouts each. Loose-mode steps use the relaxed oracle, strict-mode
/// steps the exact oracle. One gradient step per batch; the old policy is the
/// sampling policy and the reference is the initial policy. Deterministic
/// given seed.
TrainingLog train_toy(const ToySeekEnv& env, const GRPOConfig& config, const ToyTrainConfig& train, std::uint64_t seed,
                      const GroupObserver& observer = {});

/// Pearson correlation; 0 when either series is constant.
double pearson(std::span<const double> x, std::span<const double> y);

/// Start/end levels of a training run, each averaged over the first or last
/// max(1, steps / 10) steps to smooth sampling noise.
struct TrainingTrend {
    int steps = 0;
    double initial_reward = 0.0;
    double final_reward = 0.0;
    double initial_search_rate = 0.0;
    double final_search_rate = 0.0;
    double reward_search_correlation = 0.0;  ///< Pearson over all steps
};

TrainingTrend training_trend(std::span<const StepMetrics> steps);

}  // namespace deepdiver::grpo
