#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace deepdiver::backends {

struct ChatMessage {
    std::string role;  ///< "system", "user" or "assistant"
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

/// Who is asking and why. Scripted backends key their replies on it; HTTP
/// backends only use it for logging.
struct RequestContext {
    std::string record_id;
    int attempt = 1;  ///< 1-based repetition (tagging attempt, eval run, rollout index)
    int round = 1;    ///< 1-based agent round
    std::string purpose = "policy";  ///< "policy", "loose", "strict-1".."strict-3", "behavior:<name>"
};

/// A chat-completion style model. Implementations must tolerate concurrent
/// calls from many workers.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;

    /// Returns one full model turn. Throws BackendError.
    virtual std::string complete(const std::vector<ChatMessage>& messages, const RequestContext& ctx) = 0;

    /// Grader and behavior-counting traffic; routed separately so it can be
    /// rate-limited on its own.
    virtual std::string judge(const std::string& prompt, const RequestContext& ctx);
};

/// Counting semaphore with a runtime limit.
class ConcurrencyLimiter {
public:
    explicit ConcurrencyLimiter(int limit);

    void acquire();
    void release();

    class Guard {
    public:
        explicit Guard(ConcurrencyLimiter& limiter) : limiter_(limiter) { limiter_.acquire(); }
        ~Guard() { limiter_.release(); }
        Guard(const Guard&) = delete;
        Guard& operator=(const Guard&) = delete;

    private:
        ConcurrencyLimiter& limiter_;
    };

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int available_;
};

// ---------------------------------------------------------------------------

/// Request/response mapping for an OpenAI-compatible endpoint. The API key is
/// read from the environment variable named by api_key_env, never from files.
struct HttpChatConfig {
    std::string endpoint;  ///< full URL, e.g. http://localhost:8000/v1/chat/completions
    std::string model;
    double temperature = 0.0;
    double timeout_seconds = 60.0;
    int max_retries = 3;
    int backoff_ms = 1000;
    std::string api_key_env;
    std::string model_field = "model";
    std::string messages_field = "messages";
    std::string temperature_field = "temperature";
    std::string content_pointer = "/choices/0/message/content";
    int max_concurrency = 8;
    int judge_max_concurrency = 8;
    nlohmann::json extra_body = nlohmann::json::object();  ///< merged into every request
};

HttpChatConfig http_chat_config_from_json(const nlohmann::json& doc);

class HttpChatBackend final : public ModelBackend {
public:
    explicit HttpChatBackend(HttpChatConfig config);

    std::string complete(const std::vector<ChatMessage>& messages, const RequestContext& ctx) override;
    std::string judge(const std::string& prompt, const RequestContext& ctx) override;

    /// Builds the JSON request body (exposed for tests).
    nlohmann::json request_body(const std::vector<ChatMessage>& messages) const;
    /// Extracts the first choice's text; throws BackendError(Decode).
    std::string decode(const std::string& body) const;

    const HttpChatConfig& config() const noexcept { return config_; }

private:
    std::string post(const std::vector<ChatMessage>& messages);

    HttpChatConfig config_;
    ConcurrencyLimiter policy_limit_;
    ConcurrencyLimiter judge_limit_;
};

// ---------------------------------------------------------------------------

/// One scripted reply. Unset selectors match anything; the most specific
/// matching entry wins, earlier entries break ties.
struct ScriptedTurn {
    std::optional<std::string> record_id;
    std::optional<int> attempt;
    std::optional<int> round;
    std::optional<std::string> purpose;
    std::string text;
};

/// Bit-deterministic replay backend. Keyed turns are never consumed; queued
/// turns are handed out once each, in order, when no keyed turn matches.
class ScriptedBackend final : public ModelBackend {
public:
    ScriptedBackend() = default;
    explicit ScriptedBackend(std::vector<std::string> queue);
    ScriptedBackend(std::vector<std::string> queue, std::vector<ScriptedTurn> keyed);

    void add(ScriptedTurn turn);
    void enqueue(std::string text);

    std::string complete(const std::vector<ChatMessage>& messages, const RequestContext& ctx) override;
    std::string judge(const std::string& prompt, const RequestContext& ctx) override;

    /// Total calls answered so far.
    std::size_t calls() const;

private:
    std::string next(const RequestContext& ctx);

    mutable std::mutex mutex_;
    std::deque<std::string> queue_;
    std::vector<ScriptedTurn> keyed_;
    std::size_t calls_ = 0;
};

/// Script file: {"queue": [...], "turns": [{"record_id", "attempt", "round", "purpose", "text"}]}.
std::unique_ptr<ScriptedBackend> scripted_from_json(const nlohmann::json& doc);
std::unique_ptr<ScriptedBackend> load_script(const std::string& path);

/// Backend driven by a callable; used for fuzzing and the toy policy.
class CallbackBackend final : public ModelBackend {
public:
    using Fn = std::function<std::string(const std::vector<ChatMessage>&, const RequestContext&)>;
    explicit CallbackBackend(Fn fn) : fn_(std::move(fn)) {}

    std::string complete(const std::vector<ChatMessage>& messages, const RequestContext& ctx) override {
        return fn_(messages, ctx);
    }

private:
    Fn fn_;
};

}  // namespace deepdiver::backends
