#include "http.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "deepdiver/common.hpp"

namespace deepdiver::detail {

HttpTarget split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw BackendError(BackendError::Kind::Transport, "not an absolute URL: " + url);
    }
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw BackendError(BackendError::Kind::Transport, "unsupported URL scheme: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    HttpTarget target;
    target.origin = url.substr(0, path_start);
    target.path = path_start == std::string::npos ? "/" : url.substr(path_start);
    return target;
}

namespace {

HttpResponse post_once(const HttpTarget& target, const std::string& body,
                       const httplib::Headers& headers, std::chrono::duration<double> timeout) {
    httplib::Client client(target.origin);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
    const auto sec = static_cast<time_t>(micros.count() / 1'000'000);
    const auto usec = static_cast<time_t>(micros.count() % 1'000'000);
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);

    auto result = client.Post(target.path, headers, body, "application/json");
    if (!result) {
        const auto err = result.error();
        const auto kind = (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
                              ? BackendError::Kind::Timeout
                              : BackendError::Kind::Transport;
        throw BackendError(kind, "POST " + target.origin + target.path + ": " + httplib::to_string(err));
    }
    if (result->status < 200 || result->status >= 300) {
        throw BackendError(BackendError::Kind::HttpStatus,
                           "POST " + target.origin + target.path + " returned HTTP " + std::to_string(result->status),
                           result->status);
    }
    return HttpResponse{result->status, result->body};
}

}  // namespace

HttpResponse post_json(const std::string& url, const std::string& body,
                       const std::map<std::string, std::string>& headers,
                       std::chrono::duration<double> timeout, const RetryPolicy& retry) {
    const HttpTarget target = split_url(url);
    httplib::Headers http_headers(headers.begin(), headers.end());

    for (int attempt = 0;; ++attempt) {
        try {
            return post_once(target, body, http_headers, timeout);
        } catch (const BackendError& e) {
            if (!e.retryable() || attempt >= retry.max_retries) throw;
            const auto delay = retry.backoff * (1LL << attempt);
            spdlog::warn("{} (attempt {}), retrying in {} ms", e.what(), attempt + 1, delay.count());
            std::this_thread::sleep_for(delay);
        }
    }
}

std::string env_or_empty(const std::string& name) {
    if (name.empty()) return {};
    const char* value = std::getenv(name.c_str());
    return value ? std::string(value) : std::string();
}

}  // namespace deepdiver::detail
