#pragma once

#include <stdexcept>
#include <string>

namespace proxmmr {

/// Shape mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed computation graph (unknown node id, non-scalar root, ...).
class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Unrecognised experiment, method or configuration key.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Training diverged (non-finite loss or gradient).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace proxmmr
