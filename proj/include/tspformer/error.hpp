#pragma once

#include <stdexcept>
#include <string>

namespace tspformer {

/// Invalid sizes, ranges or option combinations supplied by the caller.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Tensor / array shapes that do not line up.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Domain objects that violate their invariants (bad tours, bad masks, ...).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed text or binary input, with position info in the message.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem failures (open/read/write/rename).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace tspformer
