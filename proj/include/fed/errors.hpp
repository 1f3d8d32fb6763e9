#pragma once

#include <stdexcept>
#include <string>

namespace fed {

/// Operand shapes do not agree.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Input outside the domain of a math op (log of a non-positive value, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Caller violated an API contract (non-scalar loss, empty set, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// NaN / divergence during training or sampling.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// An upstream artifact is missing.
struct ArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or version-mismatched file.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fed
