#include "deepdiver/backends.hpp"

#include <fstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "deepdiver/common.hpp"
#include "http.hpp"

namespace deepdiver::backends {

using nlohmann::json;

std::string ModelBackend::judge(const std::string& prompt, const RequestContext& ctx) {
    return complete({ChatMessage{"user", prompt}}, ctx);
}

ConcurrencyLimiter::ConcurrencyLimiter(int limit) : available_(limit) {
    if (limit < 1) throw std::invalid_argument("concurrency limit must be >= 1");
}

void ConcurrencyLimiter::acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [this] { return available_ > 0; });
    --available_;
}

void ConcurrencyLimiter::release() {
    {
        std::lock_guard lock(mutex_);
        ++available_;
    }
    cv_.notify_one();
}

// ---------------------------------------------------------------------------

HttpChatConfig http_chat_config_from_json(const json& doc) {
    HttpChatConfig c;
    c.endpoint = doc.at("endpoint").get<std::string>();
    c.model = doc.value("model", c.model);
    c.temperature = doc.value("temperature", c.temperature);
    c.timeout_seconds = doc.value("timeout_seconds", c.timeout_seconds);
    c.max_retries = doc.value("max_retries", c.max_retries);
    c.backoff_ms = doc.value("backoff_ms", c.backoff_ms);
    c.api_key_env = doc.value("api_key_env", c.api_key_env);
    c.model_field = doc.value("model_field", c.model_field);
    c.messages_field = doc.value("messages_field", c.messages_field);
    c.temperature_field = doc.value("temperature_field", c.temperature_field);
    c.content_pointer = doc.value("content_pointer", c.content_pointer);
    c.max_concurrency = doc.value("max_concurrency", c.max_concurrency);
    c.judge_max_concurrency = doc.value("judge_max_concurrency", c.judge_max_concurrency);
    c.extra_body = doc.value("extra_body", json::object());
    return c;
}

HttpChatBackend::HttpChatBackend(HttpChatConfig config)
    : config_(std::move(config)),
      policy_limit_(config_.max_concurrency),
      judge_limit_(config_.judge_max_concurrency) {
    if (config_.temperature < 0) throw std::invalid_argument("temperature must be >= 0");
    if (config_.timeout_seconds <= 0) throw std::invalid_argument("timeout must be > 0");
    detail::split_url(config_.endpoint);
}

json HttpChatBackend::request_body(const std::vector<ChatMessage>& messages) const {
    json body = config_.extra_body.is_object() ? config_.extra_body : json::object();
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    body[config_.model_field] = config_.model;
    body[config_.messages_field] = std::move(msgs);
    body[config_.temperature_field] = config_.temperature;
    return body;
}

std::string HttpChatBackend::decode(const std::string& body) const {
    json parsed;
    try {
        parsed = json::parse(body);
    } catch (const json::exception& e) {
        throw BackendError(BackendError::Kind::Decode, std::string("chat response is not JSON: ") + e.what());
    }
    const json::json_pointer ptr(config_.content_pointer);
    if (!parsed.contains(ptr) || !parsed.at(ptr).is_string()) {
        throw BackendError(BackendError::Kind::Decode, "chat response has no text at " + config_.content_pointer);
    }
    return parsed.at(ptr).get<std::string>();
}

std::string HttpChatBackend::post(const std::vector<ChatMessage>& messages) {
    if (messages.empty()) throw std::invalid_argument("complete() needs at least one message");
    std::map<std::string, std::string> headers;
    if (const auto key = detail::env_or_empty(config_.api_key_env); !key.empty()) {
        headers["Authorization"] = "Bearer " + key;
    }
    const auto response = detail::post_json(config_.endpoint, request_body(messages).dump(), headers,
                                            std::chrono::duration<double>(config_.timeout_seconds),
                                            {config_.max_retries, std::chrono::milliseconds(config_.backoff_ms)});
    return decode(response.body);
}

std::string HttpChatBackend::complete(const std::vector<ChatMessage>& messages, const RequestContext& /*ctx*/) {
    ConcurrencyLimiter::Guard guard(policy_limit_);
    return post(messages);
}

std::string HttpChatBackend::judge(const std::string& prompt, const RequestContext& /*ctx*/) {
    ConcurrencyLimiter::Guard guard(judge_limit_);
    return post({ChatMessage{"user", prompt}});
}

// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<std::string> queue)
    : queue_(std::make_move_iterator(queue.begin()), std::make_move_iterator(queue.end())) {}

ScriptedBackend::ScriptedBackend(std::vector<std::string> queue, std::vector<ScriptedTurn> keyed)
    : queue_(std::make_move_iterator(queue.begin()), std::make_move_iterator(queue.end())), keyed_(std::move(keyed)) {}

void ScriptedBackend::add(ScriptedTurn turn) {
    std::lock_guard lock(mutex_);
    keyed_.push_back(std::move(turn));
}

void ScriptedBackend::enqueue(std::string text) {
    std::lock_guard lock(mutex_);
    queue_.push_back(std::move(text));
}

std::size_t ScriptedBackend::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::string ScriptedBackend::next(const RequestContext& ctx) {
    std::lock_guard lock(mutex_);
    const ScriptedTurn* best = nullptr;
    int best_specificity = -1;
    for (const auto& turn : keyed_) {
        if (turn.record_id && *turn.record_id != ctx.record_id) continue;
        if (turn.attempt && *turn.attempt != ctx.attempt) continue;
        if (turn.round && *turn.round != ctx.round) continue;
        if (turn.purpose && *turn.purpose != ctx.purpose) continue;
        const int specificity = int(turn.record_id.has_value()) + int(turn.attempt.has_value()) +
                                int(turn.round.has_value()) + int(turn.purpose.has_value());
        if (specificity > best_specificity) {
            best = &turn;
            best_specificity = specificity;
        }
    }
    ++calls_;
    if (best) return best->text;
    if (!queue_.empty()) {
        std::string text = std::move(queue_.front());
        queue_.pop_front();
        return text;
    }
    throw BackendError(BackendError::Kind::ExhaustedScript,
                       "no scripted turn for record '" + ctx.record_id + "' attempt " + std::to_string(ctx.attempt) +
                           " round " + std::to_string(ctx.round) + " purpose " + ctx.purpose);
}

std::string ScriptedBackend::complete(const std::vector<ChatMessage>& /*messages*/, const RequestContext& ctx) {
    return next(ctx);
}

std::string ScriptedBackend::judge(const std::string& /*prompt*/, const RequestContext& ctx) {
    return next(ctx);
}

std::unique_ptr<ScriptedBackend> scripted_from_json(const json& doc) {
    std::vector<std::string> queue = doc.value("queue", std::vector<std::string>{});
    std::vector<ScriptedTurn> keyed;
    for (const auto& item : doc.value("turns", json::array())) {
        ScriptedTurn t;
        if (item.contains("record_id")) t.record_id = item.at("record_id").get<std::string>();
        if (item.contains("attempt")) t.attempt = item.at("attempt").get<int>();
        if (item.contains("round")) t.round = item.at("round").get<int>();
        if (item.contains("purpose")) t.purpose = item.at("purpose").get<std::string>();
        t.text = item.at("text").get<std::string>();
        keyed.push_back(std::move(t));
    }
    return std::make_unique<ScriptedBackend>(std::move(queue), std::move(keyed));
}

std::unique_ptr<ScriptedBackend> load_script(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open script file: " + path);
    try {
        return scripted_from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw DataError("malformed script file " + path + ": " + e.what());
    }
}

}  // namespace deepdiver::backends
