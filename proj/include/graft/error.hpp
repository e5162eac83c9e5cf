#pragma once

#include <stdexcept>
#include <string>

namespace graft {

// Thrown when tensor operands disagree on dimensions.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a value is outside an operation's domain (log of a
// nonpositive number, softmax over an empty axis, zero-norm normalize).
struct domain_error : std::runtime_error {
    explicit domain_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a caller violates an API contract (backward on a
// non-scalar, unnormalized rows fed to a loss that requires them, ...).
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown by file loaders; carries the offending 1-based line number
// (0 when the error is not tied to a specific line).
struct parse_error : std::runtime_error {
    explicit parse_error(const std::string& msg, int line_no = 0)
        : std::runtime_error(msg), line(line_no) {}
    int line;
};

// Thrown during config validation.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a file cannot be opened or written.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace graft
