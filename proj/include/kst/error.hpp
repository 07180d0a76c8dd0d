#pragma once

#include <stdexcept>
#include <string>

namespace kst {

// Error taxonomy used across the library. Every failure carries a stable
// category tag so callers (and the CLI) can report one-line machine-parsable
// errors of the form "error: <category>: <message>".
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& msg)
        : std::runtime_error(msg), category_(std::move(category)) {}

    const std::string& category() const { return category_; }

private:
    std::string category_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("format", msg) {}
};

struct CorruptFileError : Error {
    explicit CorruptFileError(const std::string& msg) : Error("corrupt-file", msg) {}
};

struct SchemaError : Error {
    explicit SchemaError(const std::string& msg) : Error("schema", msg) {}
};

struct EmptyContextError : Error {
    explicit EmptyContextError(const std::string& msg) : Error("empty-context", msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};

} // namespace kst
