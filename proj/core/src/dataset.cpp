#include "deepdiver/dataset.hpp"

#include <stdexcept>

#include <spdlog/spdlog.h>

#include "deepdiver/common.hpp"

namespace deepdiver::dataset {

using nlohmann::json;

Difficulty tag_difficulty(int n_correct) {
    switch (n_correct) {
        case 4: return Difficulty::Easy;
        case 3:
        case 2: return Difficulty::Medium;
        case 1: return Difficulty::Hard;
        case 0: return Difficulty::Outlier;
        default: throw std::out_of_range("n_correct must be in [0, 4], got " + std::to_string(n_correct));
    }
}

json to_json(const TaggingAttempt& a) {
    return {{"id", a.id},
            {"attempt", a.attempt},
            {"answer", a.answer ? json(*a.answer) : json(nullptr)},
            {"judgments", a.judgments},
            {"correct", a.correct},
            {"termination", a.termination}};
}

TaggingResult run_tagging(const std::vector<QARecord>& records, const agent::AgentConfig& config, backends::ModelBackend& model,
                          search::SearchBackend& search, reward::Grader& grader, std::size_t workers) {
    config.validate();
    TaggingResult result;
    result.records = records;
    result.audit.resize(records.size() * kTaggingAttempts);

    parallel_for(records.size() * kTaggingAttempts, workers, [&](std::size_t k) {
        const auto& record = records[k / kTaggingAttempts];
        const int attempt = static_cast<int>(k % kTaggingAttempts) + 1;
        TaggingAttempt audit;
        audit.id = record.id;
        audit.attempt = attempt;

        const auto traj = agent::run_episode(record, model, search, config, attempt);
        audit.termination = agent::to_string(traj.terminated_by);
        if (traj.terminated_by == agent::Termination::BackendError) {
            spdlog::warn("tagging {} attempt {}: backend failure, counted incorrect: {}", record.id, attempt, traj.error);
        }
        if (traj.final_answer) {
            audit.answer = traj.final_answer;
            const backends::RequestContext ctx{record.id, attempt, 1, "strict"};
            try {
                const auto verdict = std::get<reward::StrictVerdict>(grader.grade(record, *traj.final_answer, reward::GraderMode::Strict, ctx));
                audit.judgments = verdict.judgments;
                audit.correct = reward::strict_reward(verdict) == 1;
            } catch (const BackendError& e) {
                spdlog::warn("tagging {} attempt {}: judge failure, counted incorrect: {}", record.id, attempt, e.what());
            }
        }
        result.audit[k] = std::move(audit);
    });

    for (std::size_t r = 0; r < records.size(); ++r) {
        int n_correct = 0;
        for (int a = 0; a < kTaggingAttempts; ++a) n_correct += result.audit[r * kTaggingAttempts + static_cast<std::size_t>(a)].correct;
        result.records[r].difficulty = tag_difficulty(n_correct);
    }
    return result;
}

// ---------------------------------------------------------------------------

MixtureSpec mixture_spec_from_json(const json& doc) {
    MixtureSpec spec;
    spec.seed = doc.value("seed", std::uint64_t{0});
    if (!doc.contains("targets")) return spec;
    for (const auto& [cat, row] : doc.at("targets").items()) {
        for (const auto& [diff, count] : row.items()) {
            const int n = count.get<int>();
            if (n < 0) throw DataError("mixture target for " + cat + "/" + diff + " is negative");
            spec.targets[{category_from_string(cat), difficulty_from_string(diff)}] = n;
        }
    }
    return spec;
}

json to_json(const MixtureSpec& spec) {
    json targets = json::object();
    for (const auto& [cell, n] : spec.targets) targets[to_string(cell.first)][to_string(cell.second)] = n;
    return {{"seed", spec.seed}, {"targets", targets}};
}

MixtureResult select_mixture(const std::vector<QARecord>& records, const MixtureSpec& spec) {
    MixtureResult out;
    for (const auto& [cell, target] : spec.targets) {
        if (target < 0) throw DataError("mixture targets must be >= 0");
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (records[i].category == cell.first && records[i].difficulty == cell.second) pool.push_back(i);
        }
        // Partial Fisher-Yates with a per-cell stream.
        Rng rng(mix_seed({spec.seed, static_cast<std::uint64_t>(cell.first), static_cast<std::uint64_t>(cell.second)}));
        const std::size_t take = std::min(pool.size(), static_cast<std::size_t>(target));
        for (std::size_t k = 0; k < take; ++k) {
            std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
            out.selected.push_back(records[pool[k]]);
        }
        if (static_cast<std::size_t>(target) > pool.size()) {
            out.shortfalls.push_back({cell, target, static_cast<int>(pool.size())});
            spdlog::warn("mixture cell {}/{}: target {} but only {} available", to_string(cell.first), to_string(cell.second), target,
                         pool.size());
        }
    }
    return out;
}

}  // namespace deepdiver::dataset
