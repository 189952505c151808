#pragma once

#include <stdexcept>
#include <string>

namespace comflp {

enum class ErrorKind {
    validation,  // bad input values, violated invariants, malformed files
    evaluator,   // external evaluator failures
    io,          // missing/unreadable/unwritable files
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class EvaluatorError : public Error {
public:
    explicit EvaluatorError(const std::string& what) : Error(ErrorKind::evaluator, what) {}
};

// Process exit codes used by the command-line tool.
inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::validation:
        return 2;
    case ErrorKind::evaluator:
        return 3;
    case ErrorKind::io:
        return 4;
    }
    return 1;
}

}  // namespace comflp
