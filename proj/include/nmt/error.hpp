#pragma once

#include <stdexcept>
#include <string>

namespace nmt {

/// Input violates a documented precondition (shape, range, config schema).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Vector lengths do not match the tensor modes they are contracted against.
class DimensionMismatch : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// Power iteration hit a contraction with vanishing norm.
class DegenerateInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical routine (fixed point, root search, eigensolver) did not produce
/// an acceptable answer. `trace` carries whatever diagnostic text the caller
/// may want to log.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, std::string trace = {})
        : std::runtime_error(what), trace_(std::move(trace)) {}

    [[nodiscard]] const std::string& trace() const noexcept { return trace_; }

private:
    std::string trace_;
};

}  // namespace nmt
