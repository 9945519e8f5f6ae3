#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pafm {

/// Shape mismatch, out-of-range argument, or otherwise malformed input.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A time value at which the conditional path degenerates (t at or below the
/// collapse threshold, or t = 0 for the path likelihood).
class DegenerateTime : public std::domain_error {
public:
    explicit DegenerateTime(double t, const std::string& what)
        : std::domain_error(what), t_(t) {}
    double t() const noexcept { return t_; }

private:
    double t_;
};

/// NaN/Inf encountered during a forward pass or integration. `index` is the
/// batch element or integration step at which it was detected.
class NumericFailure : public std::runtime_error {
public:
    NumericFailure(std::size_t index, const std::string& what)
        : std::runtime_error(what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Inconsistent experiment configuration detected before any work starts.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A condition that the preconditions of the caller should have ruled out.
class InternalInvariant : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised by the training loop when a step fails. Carries the step index and a
/// serialized snapshot of the model as it was before the failing step.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(std::size_t step, std::vector<unsigned char> snapshot, const std::string& what)
        : std::runtime_error("step " + std::to_string(step) + ": " + what),
          step_(step),
          snapshot_(std::move(snapshot)) {}
    std::size_t step() const noexcept { return step_; }
    const std::vector<unsigned char>& snapshot() const noexcept { return snapshot_; }

private:
    std::size_t step_;
    std::vector<unsigned char> snapshot_;
};

}  // namespace pafm
