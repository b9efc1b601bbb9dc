#pragma once

#include <stdexcept>
#include <string>

namespace errlab {

enum class ErrorKind {
    config,
    capture,
    schema,
    sizing,
    validation,
    conflict,
    transport,
    credential,
    protocol,
    aggregation,
    insufficient_data,
};

const char* to_string(ErrorKind kind);

/// Base of every error raised by the toolkit. The kind drives CLI exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    /// 2 for network-side failures, 1 for everything else.
    int exit_code() const noexcept;

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class CaptureError : public Error {
public:
    CaptureError(const std::string& what, std::string partial_stderr)
        : Error(ErrorKind::capture, what), partial_stderr_(std::move(partial_stderr)) {}

    const std::string& partial_stderr() const noexcept { return partial_stderr_; }

private:
    std::string partial_stderr_;
};

/// Raised when a document is missing a required field; field() names it.
class SchemaError : public Error {
public:
    SchemaError(std::string field, const std::string& what)
        : Error(ErrorKind::schema, what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class SizingError : public Error {
public:
    explicit SizingError(const std::string& what) : Error(ErrorKind::sizing, what) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class ConflictError : public Error {
public:
    explicit ConflictError(const std::string& what) : Error(ErrorKind::conflict, what) {}
};

/// Retry budget exhausted or non-retryable HTTP failure. status() is the last
/// HTTP status seen, 0 when the request never got a response.
class TransportError : public Error {
public:
    TransportError(int status, const std::string& what)
        : Error(ErrorKind::transport, what), status_(status) {}

    int status() const noexcept { return status_; }

private:
    int status_;
};

class CredentialError : public Error {
public:
    explicit CredentialError(const std::string& what) : Error(ErrorKind::credential, what) {}
};

class ProtocolError : public Error {
public:
    explicit ProtocolError(const std::string& what) : Error(ErrorKind::protocol, what) {}
};

class AggregationError : public Error {
public:
    explicit AggregationError(const std::string& what) : Error(ErrorKind::aggregation, what) {}
};

class InsufficientDataError : public Error {
public:
    explicit InsufficientDataError(const std::string& what)
        : Error(ErrorKind::insufficient_data, what) {}
};

}  // namespace errlab
