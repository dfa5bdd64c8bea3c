#pragma once

#include <stdexcept>
#include <string>

namespace rccr {

// Base for all library errors. CLI maps the subtree onto exit codes:
// configuration/contract problems exit 2, numeric/runtime problems exit 3.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-supplied configuration (specs, hyperparameters, file layout).
class ConfigError : public Error {
public:
    using Error::Error;
};

// API precondition violated by the caller (shapes aside).
class ContractError : public Error {
public:
    using Error::Error;
};

// Tensor shape / extent mismatch; names the operation and offending extents.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Malformed input text (FASTA, TSV, JSON configs).
class ParseError : public Error {
public:
    using Error::Error;
};

// Non-finite values or other numeric failures at runtime.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace rccr
