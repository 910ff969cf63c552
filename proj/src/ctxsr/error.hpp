#pragma once

#include <stdexcept>
#include <string>

namespace ctxsr {

enum class ErrorKind {
    Dimension,
    Validation,
    Format,
    Io,
    Numeric,
    Exists,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& what) : Error(ErrorKind::Dimension, what) {}
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error(ErrorKind::Format, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

// Raised when a forward pass or loss goes non-finite; `stage` names where.
struct NumericError : Error {
    NumericError(const std::string& stage, const std::string& what)
        : Error(ErrorKind::Numeric, stage + ": " + what), stage(stage) {}
    std::string stage;
};

struct ExistsError : Error {
    explicit ExistsError(const std::string& what) : Error(ErrorKind::Exists, what) {}
};

}  // namespace ctxsr
