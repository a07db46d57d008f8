#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mowe {

using Shape = std::vector<std::size_t>;

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// User or configuration mistake (CLI exit code 1).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated artifact file (CLI exit code 2).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Semantically invalid data, e.g. non-positive channel std (CLI exit code 2).
class DataError : public Error {
public:
    using Error::Error;
};

/// Violated internal contract or invariant (CLI exit code 3).
class InternalError : public Error {
public:
    using Error::Error;
};

/// Tensor dimension contract violation (CLI exit code 3).
class ShapeError : public InternalError {
public:
    using InternalError::InternalError;
};

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace mowe
