#pragma once

#include <stdexcept>
#include <string>

namespace osteo {

// Exit-code families surfaced by the CLI.
enum class ErrorCode : int {
    usage = 2,
    data = 3,
    config = 4,
    numeric = 5,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string kind, const std::string& message)
        : std::runtime_error(message), code_(code), kind_(std::move(kind)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& kind() const noexcept { return kind_; }

private:
    ErrorCode code_;
    std::string kind_;
};

/// Tensor shapes that do not fit an operation.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& m) : Error(ErrorCode::config, "dimension", m) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error(ErrorCode::config, "config", m) {}
};

/// Bad input data: malformed manifests, out-of-range grades, undecodable images.
class DataError : public Error {
public:
    explicit DataError(const std::string& m) : Error(ErrorCode::data, "data", m) {}
};

class LookupError : public Error {
public:
    explicit LookupError(const std::string& m) : Error(ErrorCode::data, "lookup", m) {}
};

/// NaN/Inf detected in a forward value or a loss.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& m) : Error(ErrorCode::numeric, "numeric", m) {}
};

class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& m) : Error(ErrorCode::data, "checkpoint", m) {}
};

/// Quadratic weighted kappa with a zero expected-disagreement denominator.
class UndefinedKappaError : public Error {
public:
    explicit UndefinedKappaError(const std::string& m) : Error(ErrorCode::numeric, "undefined-kappa", m) {}
};

}  // namespace osteo
