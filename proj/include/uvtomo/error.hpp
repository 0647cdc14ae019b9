#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace uvtomo {

/// Invalid argument value (non-finite input, malformed distribution, empty batch, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Parameter combination that cannot produce a usable object (e.g. an empty basis).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// File missing, truncated or malformed.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Iterative solver failure. Carries the iteration at which it happened and the
/// objective trace recorded up to that point.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, int iteration, std::vector<double> trace = {})
        : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
          iteration_(iteration), trace_(std::move(trace)) {}

    int iteration() const noexcept { return iteration_; }
    const std::vector<double>& trace() const noexcept { return trace_; }

private:
    int iteration_;
    std::vector<double> trace_;
};

}  // namespace uvtomo
