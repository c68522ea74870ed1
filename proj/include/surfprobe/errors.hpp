#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace surfprobe {

// Base of every error the library raises. `kind()` is a stable machine-readable
// tag used by the CLI when reporting failures.
class ProbeError : public std::runtime_error {
public:
    explicit ProbeError(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

class ParseError : public ProbeError {
public:
    ParseError(const std::string& what, std::size_t line)
        : ProbeError(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    const char* kind() const noexcept override { return "parse_error"; }
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public ProbeError {
public:
    using ProbeError::ProbeError;
    const char* kind() const noexcept override { return "validation_error"; }
};

class IoError : public ProbeError {
public:
    using ProbeError::ProbeError;
    const char* kind() const noexcept override { return "io_error"; }
};

class ConfigError : public ProbeError {
public:
    using ProbeError::ProbeError;
    const char* kind() const noexcept override { return "config_error"; }
};

class TrainingError : public ProbeError {
public:
    using ProbeError::ProbeError;
    const char* kind() const noexcept override { return "training_error"; }
};

}  // namespace surfprobe
