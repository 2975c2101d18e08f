#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ehrnip {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class RoundIndexError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Non-2xx answer from a chat provider (or a scripted stand-in for one).
class ProviderError : public Error {
public:
    ProviderError(int status, std::string body, int attempts = 1)
        : Error("ProviderError(status=" + std::to_string(status) + "): " + body),
          status_(status), body_(std::move(body)), attempts_(attempts) {}

    int status() const noexcept { return status_; }
    const std::string& body() const noexcept { return body_; }
    int attempts() const noexcept { return attempts_; }

    /// 429 and 5xx are worth retrying; everything else is final.
    bool retryable() const noexcept { return status_ == 429 || status_ >= 500; }

private:
    int status_;
    std::string body_;
    int attempts_;
};

class AuthError : public ProviderError {
public:
    AuthError(int status, std::string body) : ProviderError(status, std::move(body)) {}
};

class TimeoutError : public Error {
public:
    using Error::Error;
};

class PatientParseError : public Error {
public:
    PatientParseError(std::string raw, int stage)
        : Error("PatientParseError: no payload found (ladder stage " + std::to_string(stage) + ")"),
          raw_(std::move(raw)), stage_(stage) {}

    const std::string& raw() const noexcept { return raw_; }
    int stage() const noexcept { return stage_; }

private:
    std::string raw_;
    int stage_;
};

class JudgeParseError : public Error {
public:
    JudgeParseError(std::string raw, std::string missing_key)
        : Error("JudgeParseError: missing key '" + missing_key + "'"),
          raw_(std::move(raw)), missing_key_(std::move(missing_key)) {}

    const std::string& raw() const noexcept { return raw_; }
    const std::string& missing_key() const noexcept { return missing_key_; }

private:
    std::string raw_;
    std::string missing_key_;
};

class JobConfigMismatch : public Error {
public:
    using Error::Error;
};

class EmptyEvaluationSet : public Error {
public:
    EmptyEvaluationSet() : Error("EmptyEvaluationSet: no scored evaluations") {}
};

class EmptyCorpus : public Error {
public:
    EmptyCorpus() : Error("EmptyCorpus: no instances to summarize") {}
};

class VocabLoadError : public Error {
public:
    using Error::Error;
};

class SizeMismatch : public Error {
public:
    using Error::Error;
};

/// A JSONL line that does not decode to a valid record.
class SchemaError : public Error {
public:
    SchemaError(std::size_t line, std::string reason)
        : Error("SchemaError(line " + std::to_string(line) + "): " + reason),
          line_(line), reason_(std::move(reason)) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::size_t line_;
    std::string reason_;
};

}  // namespace ehrnip
