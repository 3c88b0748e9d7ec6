#pragma once

#include <stdexcept>
#include <string>

namespace patchseg {

// Invalid arguments, malformed configuration, shape mismatches. CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing files, bad magic, truncated payloads. CLI exit code 2.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace patchseg
