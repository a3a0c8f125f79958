#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>

namespace enhanceppg {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a dataset archive cannot be read or lacks a required field.
struct LoadError : Error {
    using Error::Error;
};

/// Bad magic, version or truncated data in one of our own binary files.
struct FormatError : Error {
    using Error::Error;
};

struct ArgumentError : Error {
    using Error::Error;
};

/// Operation invoked on an object in the wrong state (e.g. normalizing twice).
struct StateError : Error {
    using Error::Error;
};

/// Two model configurations that were expected to share an encoder do not.
struct IncompatibleError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct TrainingError : Error {
    using Error::Error;
};

namespace detail {
inline std::function<void(const std::string&)>& warning_sink() {
    static std::function<void(const std::string&)> sink =
        [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return sink;
}
inline std::mutex& warning_mutex() {
    static std::mutex m;
    return m;
}
} // namespace detail

/// Replace the warning sink; returns the previous one so callers can restore it.
inline std::function<void(const std::string&)> set_warning_sink(
    std::function<void(const std::string&)> sink) {
    std::lock_guard lock(detail::warning_mutex());
    auto old = std::move(detail::warning_sink());
    detail::warning_sink() = std::move(sink);
    return old;
}

inline void warn(const std::string& msg) {
    std::lock_guard lock(detail::warning_mutex());
    if (detail::warning_sink()) detail::warning_sink()(msg);
}

} // namespace enhanceppg
