#pragma once

#include <stdexcept>
#include <string>

namespace heatrank {

// Base for all errors raised by this library. The CLI maps these to a
// machine-readable JSON error record and a nonzero exit code.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller violated a documented precondition (bad shape, bad id, empty input).
class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& msg) : Error(msg) {}
};

// Filesystem or format failure. Message always names the offending path.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Training diverged or produced non-finite values.
class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& msg) : Error(msg) {}
};

}  // namespace heatrank
