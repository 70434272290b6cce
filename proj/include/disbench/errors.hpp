#pragma once

#include <stdexcept>
#include <string>

namespace disbench {

struct InvalidInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A constant latent subspace has zero self-dcov; the caller is expected to
// skip the dependence penalty for that batch instead of treating it as zero.
struct DegenerateInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UndefinedMetric : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyCell : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyReport : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Configuration errors carry the offending field so the CLI can name it.
struct ConfigError : std::runtime_error {
    std::string field;
    ConfigError(std::string field_, const std::string& msg)
        : std::runtime_error(field_ + ": " + msg), field(std::move(field_)) {}
};

}  // namespace disbench
