#pragma once

#include <stdexcept>
#include <string>

namespace diffseg {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File or directory level failure (unreadable path, short write, bad PNG).
struct io_error : error {
    using error::error;
};

// On-disk layout does not match the documented format (missing manifest,
// unknown version, malformed JSON).
struct format_error : error {
    using error::error;
};

// A domain invariant is violated (mask out of range, dimension mismatch).
struct validation_error : error {
    using error::error;
};

// Tensor/feature dimensions disagree with what an operation requires.
struct shape_error : error {
    using error::error;
};

// Non-finite values where finite ones are required.
struct numeric_error : error {
    using error::error;
};

// A metric is undefined on the given input (single-class AUC, empty disc).
struct metric_error : error {
    using error::error;
};

}  // namespace diffseg
