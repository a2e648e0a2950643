#pragma once

#include <stdexcept>
#include <string>

namespace qpalf {

// I/O and file-format failures (missing files, bad magic, short reads).
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed container: wrong magic, unsupported version, unparseable manifest.
class FormatError : public IoError {
public:
    explicit FormatError(const std::string& msg) : IoError(msg) {}
};

// File shorter (or longer) than its own header claims.
class TruncatedError : public IoError {
public:
    explicit TruncatedError(const std::string& msg) : IoError(msg) {}
};

// Stored configuration disagrees with the configuration requested by the caller.
class ConfigMismatchError : public std::runtime_error {
public:
    explicit ConfigMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad run configuration (unknown key, unparseable value, missing entry).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Evaluation cannot proceed (e.g. rate-distortion curves do not overlap).
class EvalError : public std::runtime_error {
public:
    explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset construction produced nothing usable.
class DatasetError : public std::runtime_error {
public:
    explicit DatasetError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace qpalf
