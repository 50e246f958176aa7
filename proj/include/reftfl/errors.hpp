#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace reftfl {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand dimensions violate an operation's contract.
struct ShapeError : Error {
    using Error::Error;
};

// Numerically rank-deficient input; carries the offending row index.
struct DegeneracyError : Error {
    DegeneracyError(const std::string& what, std::size_t row_index)
        : Error(what), row(row_index) {}
    std::size_t row;
};

// A non-finite value appeared where a finite one is required.
struct NumericError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// An intervention schedule references a nonexistent layer or position.
struct ScheduleError : Error {
    using Error::Error;
};

// Training produced a non-finite loss; carries the optimizer step index.
struct DivergenceError : Error {
    DivergenceError(const std::string& what, std::size_t step_index)
        : Error(what), step(step_index) {}
    std::size_t step;
};

// An input set violates an operation's preconditions (empty, mismatched, ...).
struct InputError : Error {
    using Error::Error;
};

// Text input could not be parsed; carries the 1-based line number.
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t line_number)
        : Error(what), line(line_number) {}
    std::size_t line;
};

// Synthetic data generation could not satisfy its constraints.
struct GenerationError : Error {
    using Error::Error;
};

}  // namespace reftfl
