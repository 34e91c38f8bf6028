#pragma once

#include <stdexcept>
#include <string>

namespace uniflow {

/// Base of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller violated an operation's argument contract (counts, ranges, sigma).
class ArgumentError : public Error {
public:
    using Error::Error;
};

class DimensionError : public ArgumentError {
public:
    using ArgumentError::ArgumentError;
};

/// Input data is malformed or violates a value invariant (NaN, non-positive depth).
class DataError : public Error {
public:
    using Error::Error;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// A ray with zero length was produced while building an embedding.
class SingularityError : public DataError {
public:
    SingularityError(const std::string& what, int frame, int x, int y)
        : DataError(what), frame_(frame), x_(x), y_(y) {}

    int frame() const noexcept { return frame_; }
    int x() const noexcept { return x_; }
    int y() const noexcept { return y_; }

private:
    int frame_;
    int x_;
    int y_;
};

/// Controls of a bundle disagree on size or frame count. `control` names the
/// offending one ("camera", "drags", "reference") or is empty for the bundle.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what, std::string control = {})
        : Error(what), control_(std::move(control)) {}

    const std::string& control() const noexcept { return control_; }

private:
    std::string control_;
};

/// JSON document does not match the expected schema; path is a JSON pointer.
class SchemaError : public DataError {
public:
    SchemaError(std::string path, const std::string& message)
        : DataError(path + ": " + message), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

} // namespace uniflow
