#pragma once

#include <stdexcept>
#include <string>

namespace atoken {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration, schedule or argument shape.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw Error(what);
}

inline void require_config(bool cond, const std::string& what) {
    if (!cond) throw ConfigError(what);
}

}  // namespace atoken
