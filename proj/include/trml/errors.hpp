#pragma once

#include <stdexcept>
#include <string>

namespace trml {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad option values, out-of-range hyperparameters, malformed config files.
struct config_error : error {
    using error::error;
};

// Malformed dataset/checkpoint files, unknown ids, validation failures.
struct data_error : error {
    using error::error;
};

// Non-finite tensors, zero-norm rows, shape violations inside the math kernel.
struct numeric_error : error {
    using error::error;
};

// Training loss became non-finite or exceeded the divergence bound.
struct divergence_error : error {
    using error::error;
};

}  // namespace trml
