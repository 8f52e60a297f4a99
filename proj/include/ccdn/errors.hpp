#pragma once

#include <stdexcept>
#include <string>

namespace ccdn {

/// Dimension mismatch between operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Input is well-shaped but numerically degenerate (zero trace, zero diagonal, N < 2, ...).
struct DegenerateInputError : std::domain_error {
    using std::domain_error::domain_error;
};

/// A NaN or Inf reached a tensor constructor.
struct NonFiniteError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Caller violated an operation contract (non-scalar loss, unsupported stride, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Bad configuration key, value or variant name.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed file (pts, pgm/ppm, checkpoint, manifest).
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace ccdn
