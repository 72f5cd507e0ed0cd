#pragma once

// Internal HTTP plumbing shared by the chat and web-search clients.

#include <chrono>
#include <map>
#include <string>

namespace deepdiver::detail {

struct HttpTarget {
    std::string origin;  ///< scheme://host[:port]
    std::string path;    ///< starts with '/'
};

/// Splits an absolute http(s) URL. Throws BackendError(Transport) when the
/// URL is unusable.
HttpTarget split_url(const std::string& url);

struct HttpResponse {
    int status = 0;
    std::string body;
};

struct RetryPolicy {
    int max_retries = 2;
    std::chrono::milliseconds backoff{500};
};

/// POSTs a JSON body. Non-2xx statuses become BackendError(HttpStatus); only
/// timeouts, 5xx and 429 are retried, with backoff doubling per attempt.
HttpResponse post_json(const std::string& url, const std::string& body,
                       const std::map<std::string, std::string>& headers,
                       std::chrono::duration<double> timeout, const RetryPolicy& retry);

/// Reads an environment variable; empty when unset or name is empty.
std::string env_or_empty(const std::string& name);

}  // namespace deepdiver::detail
