#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include <deepdiver/agent.hpp>
#include <deepdiver/common.hpp>
#include <deepdiver/grpo.hpp>
#include <deepdiver/search.hpp>

using namespace deepdiver;

namespace {

search::SimCorpus synthetic_corpus(int n_docs) {
    static const char* words[] = {"river", "capital", "opera", "planet", "prime", "tower", "novel", "painter",
                                  "chemist", "emperor", "island", "mountain", "鲁迅", "长江", "北京", "数学"};
    Rng rng(1);
    search::SimCorpus c;
    for (int i = 0; i < n_docs; ++i) {
        std::string content;
        for (int w = 0; w < 40; ++w) content += std::string(words[rng.below(std::size(words))]) + " ";
        c.docs.push_back({"d" + std::to_string(i), words[i % std::size(words)], content, {}, {}});
    }
    c.noise_ratio = 0.2;
    return c;
}

void BM_SimulatedSearch(benchmark::State& state) {
    search::SimulatedSearch engine(synthetic_corpus(static_cast<int>(state.range(0))));
    const std::vector<std::string> queries{"capital river", "opera painter 鲁迅", "prime planet tower"};
    for (auto _ : state) benchmark::DoNotOptimize(engine.search(queries, 2));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(queries.size()));
}
BENCHMARK(BM_SimulatedSearch)->Arg(100)->Arg(1000)->Arg(10000);

void BM_GrpoLoss(benchmark::State& state) {
    const int g = static_cast<int>(state.range(0));
    grpo::ToyPolicy policy(9, 5), reference(9, 5);
    Rng rng(2);
    for (auto& v : policy.logits) v = rng.uniform() - 0.5;
    grpo::RolloutGroup group;
    for (int i = 0; i < g; ++i) {
        std::vector<grpo::TokenStep> steps;
        std::vector<bool> mask;
        std::vector<double> lp, ref;
        for (int t = 0; t < 64; ++t) {
            const int s = static_cast<int>(rng.below(9)), a = static_cast<int>(rng.below(5));
            steps.push_back({s, a});
            mask.push_back(t % 4 != 3);
            lp.push_back(policy.logprob(s, a) + 0.05 * (rng.uniform() - 0.5));
            ref.push_back(reference.logprob(s, a));
        }
        group.tokens.push_back(steps);
        group.loss_mask.push_back(mask);
        group.token_logprobs_old.push_back(lp);
        group.token_logprobs_ref.push_back(ref);
        group.rewards.push_back(rng.uniform());
    }
    group.advantages = grpo::compute_advantages(group.rewards, 1e-6);
    const grpo::GRPOConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(grpo::grpo_loss(group, policy, reference, cfg));
}
BENCHMARK(BM_GrpoLoss)->Arg(14)->Arg(64);

void BM_ParseTurn(benchmark::State& state) {
    const agent::AgentConfig cfg;
    const std::string search_turn = agent::format_turn(
        std::string(400, 'x') + " 需要进一步检索", agent::SearchAction{{"tallest tower in Asia", "鲁迅 原名", "it's a \"quoted\" query"}});
    const std::string answer_turn = "<thinking>" + std::string(400, 'y') + "</thinking>Canberra";
    for (auto _ : state) {
        benchmark::DoNotOptimize(agent::parse_turn(search_turn, cfg));
        benchmark::DoNotOptimize(agent::parse_turn(answer_turn, cfg));
    }
}
BENCHMARK(BM_ParseTurn);

void BM_ToyRollout(benchmark::State& state) {
    const auto env = grpo::make_toy_env(20, 0.8, 4, 3);
    const grpo::ToyTrainConfig train;
    const auto policy = grpo::initial_toy_policy(env, train.initial_search_logit, train.reveal_prior);
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(grpo::toy_rollout(env, seed % 20, policy, train, seed, 1)), ++seed;
}
BENCHMARK(BM_ToyRollout);

}  // namespace

BENCHMARK_MAIN();
