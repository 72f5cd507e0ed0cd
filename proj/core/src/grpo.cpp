#include "deepdiver/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "deepdiver/common.hpp"

namespace deepdiver::grpo {

using nlohmann::json;

void GRPOConfig::validate() const {
    if (group_size < 2) throw std::invalid_argument("grpo.group_size must be >= 2");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw std::invalid_argument("grpo.clip_epsilon must be in (0, 1)");
    if (kl_beta < 0.0) throw std::invalid_argument("grpo.kl_beta must be >= 0");
    if (learning_rate < 0.0) throw std::invalid_argument("grpo.learning_rate must be >= 0");
    if (!(std_guard > 0.0)) throw std::invalid_argument("grpo.std_guard must be > 0");
    if (batch_size < 1) throw std::invalid_argument("grpo.batch_size must be >= 1");
}

GRPOConfig grpo_config_from_json(const json& doc) {
    GRPOConfig c;
    c.group_size = doc.value("group_size", c.group_size);
    c.clip_epsilon = doc.value("clip_epsilon", c.clip_epsilon);
    c.kl_beta = doc.value("kl_beta", c.kl_beta);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.std_guard = doc.value("std_guard", c.std_guard);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.validate();
    return c;
}

json to_json(const GRPOConfig& c) {
    return {{"group_size", c.group_size}, {"clip_epsilon", c.clip_epsilon}, {"kl_beta", c.kl_beta},
            {"learning_rate", c.learning_rate}, {"std_guard", c.std_guard}, {"batch_size", c.batch_size}};
}

std::vector<double> compute_advantages(std::span<const double> rewards, double std_guard) {
    std::vector<double> adv(rewards.size(), 0.0);
    if (rewards.empty()) return adv;
    const double n = static_cast<double>(rewards.size());
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / n);
    if (sd < std_guard) return adv;
    for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / sd;
    return adv;
}

// ---------------------------------------------------------------------------

ToyPolicy::ToyPolicy(int states, int actions, double init)
    : n_states(states), n_actions(actions), logits(static_cast<std::size_t>(states) * static_cast<std::size_t>(actions), init) {}

std::vector<double> ToyPolicy::probs(int state) const {
    const double* row = logits.data() + index(state, 0);
    const double top = *std::max_element(row, row + n_actions);
    std::vector<double> p(static_cast<std::size_t>(n_actions));
    double z = 0.0;
    for (int a = 0; a < n_actions; ++a) z += (p[static_cast<std::size_t>(a)] = std::exp(row[a] - top));
    for (double& v : p) v /= z;
    return p;
}

double ToyPolicy::logprob(int state, int action) const {
    const double* row = logits.data() + index(state, 0);
    const double top = *std::max_element(row, row + n_actions);
    double z = 0.0;
    for (int a = 0; a < n_actions; ++a) z += std::exp(row[a] - top);
    return row[action] - top - std::log(z);
}

double categorical_kl(const ToyPolicy& p, const ToyPolicy& q, int state) {
    const auto pp = p.probs(state);
    double kl = 0.0;
    for (int a = 0; a < p.n_actions; ++a) {
        const double pa = pp[static_cast<std::size_t>(a)];
        if (pa > 0.0) kl += pa * (p.logprob(state, a) - q.logprob(state, a));
    }
    return std::max(kl, 0.0);
}

void RolloutGroup::validate() const {
    const std::size_t g = rewards.size();
    auto check = [&](std::size_t n, const char* what) {
        if (n != g) throw ShapeMismatch(std::string(what) + " has " + std::to_string(n) + " rollouts, rewards has " + std::to_string(g));
    };
    check(tokens.size(), "tokens");
    check(token_logprobs_old.size(), "token_logprobs_old");
    check(token_logprobs_ref.size(), "token_logprobs_ref");
    check(loss_mask.size(), "loss_mask");
    check(advantages.size(), "advantages");
    for (std::size_t i = 0; i < g; ++i) {
        const std::size_t t = tokens[i].size();
        if (token_logprobs_old[i].size() != t || token_logprobs_ref[i].size() != t || loss_mask[i].size() != t) {
            throw ShapeMismatch("rollout " + std::to_string(i) + ": token, logprob and mask lengths disagree");
        }
    }
}

LossResult grpo_loss(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& reference, const GRPOConfig& config) {
    group.validate();
    if (policy.n_states != reference.n_states || policy.n_actions != reference.n_actions) {
        throw ShapeMismatch("policy and reference policy shapes differ");
    }
    LossResult out;
    out.gradient.assign(policy.logits.size(), 0.0);
    const double g = static_cast<double>(group.rewards.size());
    const double lo = 1.0 - config.clip_epsilon;
    const double hi = 1.0 + config.clip_epsilon;

    for (std::size_t i = 0; i < group.tokens.size(); ++i) {
        const auto& mask = group.loss_mask[i];
        const auto active = static_cast<double>(std::count(mask.begin(), mask.end(), true));
        if (active == 0.0) continue;
        const double w = 1.0 / (g * active);  // token mean, then rollout mean
        const double adv = group.advantages[i];

        for (std::size_t t = 0; t < group.tokens[i].size(); ++t) {
            if (!mask[t]) continue;
            const auto [s, a] = group.tokens[i][t];
            const auto p = policy.probs(s);
            const double ratio = std::exp(policy.logprob(s, a) - group.token_logprobs_old[i][t]);
            const double unclipped = ratio * adv;
            const double clipped = std::clamp(ratio, lo, hi) * adv;
            const double surrogate = std::min(unclipped, clipped);
            const double kl = categorical_kl(policy, reference, s);

            out.surrogate += w * surrogate;
            out.kl += w * kl;

            double* grad = out.gradient.data() + policy.index(s, 0);
            // d(-surrogate): only the unclipped branch depends on the logits.
            if (unclipped <= clipped) {
                for (int b = 0; b < policy.n_actions; ++b) {
                    const double dlogp = (b == a ? 1.0 : 0.0) - p[static_cast<std::size_t>(b)];
                    grad[b] -= w * adv * ratio * dlogp;
                }
            }
            // d(beta KL)/dz_b = beta p_b (log p_b - log q_b - KL)
            if (config.kl_beta != 0.0) {
                for (int b = 0; b < policy.n_actions; ++b) {
                    const double pb = p[static_cast<std::size_t>(b)];
                    grad[b] += w * config.kl_beta * pb * (policy.logprob(s, b) - reference.logprob(s, b) - kl);
                }
            }
        }
    }
    out.loss = -out.surrogate + config.kl_beta * out.kl;
    return out;
}

ToyPolicy apply_update(const ToyPolicy& policy, std::span<const double> gradient, double learning_rate) {
    if (gradient.size() != policy.logits.size()) throw ShapeMismatch("gradient size does not match the policy");
    ToyPolicy next = policy;
    for (std::size_t k = 0; k < next.logits.size(); ++k) next.logits[k] -= learning_rate * gradient[k];
    return next;
}

// ---------------------------------------------------------------------------

namespace {

std::string answer_token(int c) { return "answer_" + std::to_string(c); }
std::string task_query(std::size_t task) { return "toy-task " + std::to_string(task); }
constexpr std::string_view kRevealMarker = "toy-reveal: answer_";

/// Revealed answer in the newest user turn, 0 if none.
int revealed_answer(const std::vector<backends::ChatMessage>& messages) {
    if (messages.empty() || messages.back().role != "user") return 0;
    const auto& text = messages.back().content;
    const auto pos = text.rfind(kRevealMarker);
    if (pos == std::string::npos) return 0;
    return std::atoi(text.c_str() + pos + kRevealMarker.size());
}

int sample(const std::vector<double>& p, Rng& rng) {
    double u = rng.uniform();
    for (std::size_t a = 0; a < p.size(); ++a) {
        if (u < p[a]) return static_cast<int>(a);
        u -= p[a];
    }
    return static_cast<int>(p.size()) - 1;
}

}  // namespace

double ToySeekEnv::unanswerable_fraction() const {
    if (tasks.empty()) return 0.0;
    const auto n = std::count_if(tasks.begin(), tasks.end(), [](const ToyTask& t) { return !t.answerable_without_search; });
    return static_cast<double>(n) / static_cast<double>(tasks.size());
}

dataset::QARecord ToySeekEnv::record(std::size_t task) const {
    const auto& t = tasks.at(task);
    dataset::QARecord r;
    r.id = "toy-" + std::to_string(task);
    r.question = task_query(task) + ": clue " + (t.answerable_without_search ? answer_token(t.answer) : std::string("opaque"));
    r.solution = answer_token(t.answer);
    r.language = "en";
    return r;
}

ToySeekEnv make_toy_env(int n_tasks, double unanswerable_fraction, int n_answers, std::uint64_t seed) {
    if (n_tasks < 1 || n_answers < 1) throw std::invalid_argument("toy env needs at least one task and one answer");
    ToySeekEnv env;
    env.n_answers = n_answers;
    Rng rng(mix_seed({seed, 0x7079}));
    const int hidden = static_cast<int>(std::ceil(unanswerable_fraction * n_tasks - 1e-9));
    for (int k = 0; k < n_tasks; ++k) {
        env.tasks.push_back({1 + static_cast<int>(rng.below(static_cast<std::size_t>(n_answers))), k >= hidden});
    }
    return env;
}

search::ResultLists ToySearch::search(std::span<const std::string> queries, int k) {
    search::ResultLists out;
    for (const auto& q : queries) {
        std::vector<search::Document> docs;
        for (std::size_t t = 0; t < env_.tasks.size() && k > 0; ++t) {
            if (q != task_query(t)) continue;
            docs.push_back({"toy://" + std::to_string(t), task_query(t), std::string(kRevealMarker) + std::to_string(env_.tasks[t].answer), 1,
                            search::DocumentSource::Simulated});
        }
        out.push_back(std::move(docs));
    }
    return out;
}

void ToyTrainConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("toy.steps must be >= 0");
    if (verbose_answer_prob < 0.0 || verbose_answer_prob > 1.0) throw std::invalid_argument("toy.verbose_answer_prob must be in [0, 1]");
    if (schedule.switch_step < 0) throw std::invalid_argument("toy.switch_step must be >= 0");
    if (workers < 1) throw std::invalid_argument("toy.workers must be >= 1");
    agent.validate();
}

ToyTrainConfig toy_train_config_from_json(const json& doc) {
    ToyTrainConfig c;
    c.steps = doc.value("steps", c.steps);
    c.initial_search_logit = doc.value("initial_search_logit", c.initial_search_logit);
    c.reveal_prior = doc.value("reveal_prior", c.reveal_prior);
    c.verbose_answer_prob = doc.value("verbose_answer_prob", c.verbose_answer_prob);
    c.schedule.switch_step = doc.value("switch_step", c.schedule.switch_step);
    if (doc.contains("agent")) c.agent = agent::agent_config_from_json(doc.at("agent"));
    c.workers = doc.value("workers", c.workers);
    c.validate();
    return c;
}

json to_json(const ToyTrainConfig& c) {
    return {{"steps", c.steps},
            {"initial_search_logit", c.initial_search_logit},
            {"reveal_prior", c.reveal_prior},
            {"verbose_answer_prob", c.verbose_answer_prob},
            {"switch_step", c.schedule.switch_step},
            {"agent", agent::to_json(c.agent)},
            {"workers", c.workers}};
}

ToyPolicy initial_toy_policy(const ToySeekEnv& env, double search_logit, double reveal_prior) {
    ToyPolicy p(env.n_states(), env.n_actions());
    for (int s = 0; s < p.n_states; ++s) p.logit(s, 0) = search_logit;
    for (int c = 1; c <= env.n_answers; ++c) p.logit(env.n_answers + c, c) = reveal_prior;
    return p;
}

ToyRollout toy_rollout(const ToySeekEnv& env, std::size_t task, const ToyPolicy& policy, const ToyTrainConfig& config,
                       std::uint64_t seed, int attempt) {
    const auto& t = env.tasks.at(task);
    const int start_state = t.answerable_without_search ? t.answer : 0;
    Rng rng(seed);
    ToyRollout out;

    backends::CallbackBackend model([&](const std::vector<backends::ChatMessage>& messages, const backends::RequestContext&) {
        int state = start_state;
        if (const int c = revealed_answer(messages); c > 0) {
            state = env.n_answers + c;
            // the revealed answer is retrieved text, never trained on
            out.tokens.push_back({state, c});
            out.mask.push_back(false);
            out.logprobs.push_back(policy.logprob(state, c));
        }
        const int action = sample(policy.probs(state), rng);
        out.tokens.push_back({state, action});
        out.mask.push_back(true);
        out.logprobs.push_back(policy.logprob(state, action));

        if (action == 0) return agent::format_turn("search", agent::SearchAction{{task_query(task)}});
        std::string text = answer_token(action);
        if (rng.uniform() < config.verbose_answer_prob) text += ", final";
        return agent::format_turn("answer", agent::AnswerAction{text});
    });
    ToySearch search(env);
    out.trajectory = agent::run_episode(env.record(task), model, search, config.agent, attempt);
    return out;
}

json to_json(const StepMetrics& m) {
    return {{"step", m.step}, {"mode", reward::to_string(m.mode)}, {"mean_reward", m.mean_reward}, {"search_rate", m.search_rate},
            {"accuracy", m.accuracy}, {"kl", m.kl}, {"loss", m.loss}};
}

StepMetrics step_metrics_from_json(const json& doc) {
    StepMetrics m;
    try {
        m.step = doc.at("step").get<int>();
        m.mode = doc.at("mode").get<std::string>() == "Strict" ? reward::GraderMode::Strict : reward::GraderMode::Loose;
        m.mean_reward = doc.at("mean_reward").get<double>();
        m.search_rate = doc.at("search_rate").get<double>();
        m.accuracy = doc.value("accuracy", 0.0);
        m.kl = doc.at("kl").get<double>();
        m.loss = doc.at("loss").get<double>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed training log entry: ") + e.what());
    }
    return m;
}

void write_training_log(const std::string& path, const std::vector<StepMetrics>& steps) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write training log: " + path);
    for (const auto& m : steps) out << to_json(m).dump() << '\n';
}

std::vector<StepMetrics> read_training_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open training log: " + path);
    std::vector<StepMetrics> steps;
    std::string line;
    for (int line_no = 1; std::getline(in, line); ++line_no) {
        if (trim(line).empty()) continue;
        try {
            steps.push_back(step_metrics_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return steps;
}

std::vector<reward::RewardBreakdown> score_group(const ToySeekEnv& env, std::size_t task, std::span<const agent::Trajectory> group,
                                                 reward::Grader& grader, reward::GraderMode mode) {
    const auto record = env.record(task);
    std::vector<reward::RolloutScore> scores;
    scores.reserve(group.size());
    for (const auto& traj : group) {
        reward::RolloutScore s{reward::format_reward(traj), 0.0, traj.used_search};
        if (traj.final_answer) {
            const backends::RequestContext ctx{record.id, traj.attempt, 1, "loose"};
            s.accuracy = reward::accuracy_reward(grader.grade(record, *traj.final_answer, mode, ctx));
        }
        scores.push_back(s);
    }
    return reward::compose_rewards(scores);
}

TrainingLog train_toy(const ToySeekEnv& env, const GRPOConfig& config, const ToyTrainConfig& train, std::uint64_t seed,
                      const GroupObserver& observer) {
    config.validate();
    train.validate();
    if (env.tasks.empty()) throw std::invalid_argument("toy env has no tasks");

    reward::OracleGrader relaxed(reward::OracleGrader::Matching::Relaxed);
    reward::OracleGrader exact(reward::OracleGrader::Matching::Exact);
    reward::ScheduledGrader grader(relaxed, exact);

    const ToyPolicy reference = initial_toy_policy(env, train.initial_search_logit, train.reveal_prior);
    TrainingLog log;
    log.final_policy = reference;
    const auto g = static_cast<std::size_t>(config.group_size);
    const auto batch = static_cast<std::size_t>(config.batch_size);

    for (int step = 0; step < train.steps; ++step) {
        const ToyPolicy& policy = log.final_policy;
        const auto mode = reward::reward_mode_at(step, train.schedule);

        Rng task_rng(mix_seed({seed, static_cast<std::uint64_t>(step), 0x7461736b}));
        std::vector<std::size_t> tasks(batch);
        for (auto& t : tasks) t = task_rng.below(env.tasks.size());

        std::vector<ToyRollout> rollouts(batch * g);
        parallel_for(rollouts.size(), static_cast<std::size_t>(train.workers), [&](std::size_t k) {
            const std::size_t b = k / g;
            const std::uint64_t s = mix_seed({seed, static_cast<std::uint64_t>(step), b, k % g});
            rollouts[k] = toy_rollout(env, tasks[b], policy, train, s, static_cast<int>(k % g) + 1);
        });

        StepMetrics m;
        m.step = step;
        m.mode = mode;
        std::vector<double> gradient(policy.logits.size(), 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::vector<ToyRollout> members(rollouts.begin() + static_cast<std::ptrdiff_t>(b * g),
                                                  rollouts.begin() + static_cast<std::ptrdiff_t>((b + 1) * g));
            std::vector<agent::Trajectory> trajs;
            for (const auto& r : members) trajs.push_back(r.trajectory);
            const auto breakdowns = score_group(env, tasks[b], trajs, grader, mode);
            if (observer) observer(step, tasks[b], members, breakdowns);

            RolloutGroup group;
            for (std::size_t i = 0; i < g; ++i) {
                group.rewards.push_back(breakdowns[i].total);
                group.tokens.push_back(members[i].tokens);
                group.token_logprobs_old.push_back(members[i].logprobs);
                std::vector<double> ref;
                for (const auto& tok : members[i].tokens) ref.push_back(reference.logprob(tok.state, tok.action));
                group.token_logprobs_ref.push_back(std::move(ref));
                group.loss_mask.push_back(members[i].mask);

                m.mean_reward += breakdowns[i].total;
                m.search_rate += members[i].trajectory.search_rounds();
                m.accuracy += breakdowns[i].format * breakdowns[i].accuracy;
            }
            group.advantages = compute_advantages(group.rewards, config.std_guard);
            const auto loss = grpo_loss(group, policy, reference, config);
            for (std::size_t k = 0; k < gradient.size(); ++k) gradient[k] += loss.gradient[k] / static_cast<double>(batch);
            m.loss += loss.loss / static_cast<double>(batch);
            m.kl += loss.kl / static_cast<double>(batch);
        }
        const double n = static_cast<double>(batch * g);
        m.mean_reward /= n;
        m.search_rate /= n;
        m.accuracy /= n;
        log.steps.push_back(m);
        spdlog::debug("toy step {}: reward {:.3f} search {:.3f} kl {:.5f}", step, m.mean_reward, m.search_rate, m.kl);

        log.final_policy = apply_update(policy, gradient, config.learning_rate);
    }
    return log;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) return 0.0;
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

TrainingTrend training_trend(std::span<const StepMetrics> steps) {
    TrainingTrend t;
    t.steps = static_cast<int>(steps.size());
    if (steps.empty()) return t;
    const std::size_t w = std::max<std::size_t>(1, steps.size() / 10);
    std::vector<double> reward, search;
    for (const auto& m : steps) {
        reward.push_back(m.mean_reward);
        search.push_back(m.search_rate);
    }
    auto mean = [](auto first, auto last) { return std::accumulate(first, last, 0.0) / static_cast<double>(last - first); };
    t.initial_reward = mean(reward.begin(), reward.begin() + static_cast<std::ptrdiff_t>(w));
    t.final_reward = mean(reward.end() - static_cast<std::ptrdiff_t>(w), reward.end());
    t.initial_search_rate = mean(search.begin(), search.begin() + static_cast<std::ptrdiff_t>(w));
    t.final_search_rate = mean(search.end() - static_cast<std::ptrdiff_t>(w), search.end());
    t.reward_search_correlation = pearson(reward, search);
    return t;
}

}  // namespace deepdiver::grpo
