#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace drike {

// Base error carrying a stable machine-readable kind alongside the message.
// The CLI maps kinds to exit diagnostics; tests match on them.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

// Malformed input file (bad JSON, bad record structure).
struct ParseError : Error {
    explicit ParseError(const std::string& m) : Error("parse", m) {}
};

// Structurally valid input missing or violating a required field.
struct SchemaError : Error {
    explicit SchemaError(const std::string& m) : Error("schema", m) {}
};

// Caller violated an operation precondition.
struct ArgumentError : Error {
    explicit ArgumentError(const std::string& m) : Error("argument", m) {}
};

// Demonstration pool cannot satisfy the requested counts.
struct PoolExhaustedError : Error {
    explicit PoolExhaustedError(const std::string& m) : Error("pool_exhausted", m) {}
};

// Remote call failed after the configured number of retries.
struct TransportError : Error {
    TransportError(const std::string& m, int retries)
        : Error("transport", m + " (retries: " + std::to_string(retries) + ")"),
          retries_(retries) {}

    int retries() const noexcept { return retries_; }

private:
    int retries_;
};

// Key absent from a lookup-backed store.
struct LookupError : Error {
    explicit LookupError(const std::string& m) : Error("lookup", m) {}
};

// Non-finite values where finite arithmetic is required.
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

// Text does not follow the expected prompt layout.
struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error("format", m) {}
};

// Oracle still unreachable once retries are spent.
struct OracleUnavailableError : Error {
    explicit OracleUnavailableError(const std::string& m) : Error("oracle_unavailable", m) {}
};

} // namespace drike
