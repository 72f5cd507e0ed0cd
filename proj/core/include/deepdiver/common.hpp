#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace deepdiver {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A model turn that does not follow the thinking-tag / tool-call format.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Token boundaries that cross a provenance span.
class SpanAlignmentError : public Error {
public:
    using Error::Error;
};

/// Per-rollout lists whose lengths disagree.
class ShapeMismatch : public Error {
public:
    using Error::Error;
};

/// Malformed input data (records, corpora, scripts, logs).
class DataError : public Error {
public:
    using Error::Error;
};

/// Transport or protocol failure from a model, judge or search backend.
class BackendError : public Error {
public:
    enum class Kind { Timeout, HttpStatus, ExhaustedScript, Decode, Transport };

    BackendError(Kind kind, std::string message, int status = 0)
        : Error(std::move(message)), kind_(kind), status_(status) {}

    Kind kind() const noexcept { return kind_; }
    /// HTTP status code for Kind::HttpStatus, 0 otherwise.
    int status() const noexcept { return status_; }

    /// Timeouts, 5xx and 429 are worth retrying; everything else is final.
    bool retryable() const noexcept {
        return kind_ == Kind::Timeout ||
               (kind_ == Kind::HttpStatus && (status_ >= 500 || status_ == 429));
    }

private:
    Kind kind_;
    int status_;
};

const char* to_string(BackendError::Kind kind);

// ---------------------------------------------------------------------------
// Deterministic randomness
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Mixes any number of integers into one 64-bit seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

/// Seeded generator whose outputs are identical across standard libraries.
/// std::mt19937_64 is fully specified; the distributions are not, so the two
/// helpers here are hand-rolled.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t below(std::size_t n);

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

std::string_view trim(std::string_view text);
std::string ascii_lower(std::string_view text);

/// Truncates to at most max_bytes without splitting a UTF-8 sequence.
std::string utf8_truncate(std::string_view text, std::size_t max_bytes);

/// Replaces every occurrence of `from` with `to`.
std::string replace_all(std::string_view text, std::string_view from, std::string_view to);

// ---------------------------------------------------------------------------
// Concurrency
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions from fn
/// are rethrown on the calling thread after all workers stop (first one wins).
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace deepdiver
