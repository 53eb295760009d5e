#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kgdx {

enum class ErrorCode {
    not_found,
    invalid_argument,
    invalid_state,
    conflict,
    forbidden,
    validation,
    parse,
    gateway,
    io,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a code; transport layers map
// codes to status values (HTTP, exit codes).
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, bool retryable = false)
        : std::runtime_error(message), code_(code), retryable_(retryable) {}

    ErrorCode code() const noexcept { return code_; }
    bool retryable() const noexcept { return retryable_; }

private:
    ErrorCode code_;
    bool retryable_;
};

// Model output that could not be parsed; the raw text is kept for audit.
class ParseError : public Error {
public:
    ParseError(const std::string& message, std::string raw)
        : Error(ErrorCode::parse, message), raw_(std::move(raw)) {}

    const std::string& raw_payload() const noexcept { return raw_; }

private:
    std::string raw_;
};

class ValidationError : public Error {
public:
    ValidationError(const std::string& message, std::vector<std::string> fields)
        : Error(ErrorCode::validation, message), fields_(std::move(fields)) {}

    const std::vector<std::string>& fields() const noexcept { return fields_; }

private:
    std::vector<std::string> fields_;
};

using Timestamp = std::chrono::sys_seconds;

std::string format_rfc3339(Timestamp t);
Timestamp parse_rfc3339(std::string_view text);

class Clock {
public:
    virtual ~Clock() = default;
    virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
public:
    Timestamp now() const override;
};

// Test and replay clock: returns a fixed instant, optionally advancing by
// `step` on every read.
class ManualClock final : public Clock {
public:
    explicit ManualClock(Timestamp start, std::chrono::seconds step = std::chrono::seconds{0})
        : now_(start.time_since_epoch().count()), step_(step.count()) {}

    Timestamp now() const override {
        return Timestamp{std::chrono::seconds{now_.fetch_add(step_)}};
    }
    void set(Timestamp t) { now_ = t.time_since_epoch().count(); }
    void advance(std::chrono::seconds d) { now_ += d.count(); }

private:
    mutable std::atomic<std::int64_t> now_;
    std::int64_t step_;
};

// Lowercase, collapse runs of non-alphanumerics to one space, trim.
std::string normalize_text(std::string_view text);
std::string trim(std::string_view text);
std::vector<std::string> split_lines(std::string_view text);

} // namespace kgdx
