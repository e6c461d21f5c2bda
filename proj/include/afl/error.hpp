#pragma once

#include <stdexcept>
#include <string>

namespace afl {

enum class ErrorKind {
    invalid_argument,
    shape_mismatch,
    numerical,
    mismatch,      // adapter/base fingerprint or layout mismatch
    truncated,
    bad_version,
    bad_format,
    missing_file,
    io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what)
{
    if (!cond) {
        throw Error(kind, what);
    }
}

}  // namespace afl
