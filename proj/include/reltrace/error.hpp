#pragma once

#include <stdexcept>
#include <string>

namespace reltrace {

// Coarse failure categories; the CLI maps them onto exit codes.
enum class ErrorKind {
    Shape,      // tensor extents disagree
    Argument,   // index out of range, bad parameter
    Config,     // invalid configuration
    Data,       // malformed or truncated input file
    Numerical,  // non-finite value or violated invariant
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) {
        fail(kind, what);
    }
}

}  // namespace reltrace
