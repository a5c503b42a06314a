#pragma once

// Error taxonomy shared across the library. The CLI maps these onto
// process exit codes (see pipeline.hpp).

#include <stdexcept>
#include <string>

namespace temgnet {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched tensor/matrix extents, wrong window sizes, etc.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Values outside the mathematical domain of an operation (NaN/Inf input,
// |x| > 1 for mu-law, degenerate all-zero channel, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// A caller broke an API contract (backward on a non-scalar, overlapping
// repetition sets, label out of range, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk artifacts: bad magic, truncation, length mismatch.
class FormatError : public Error {
public:
    using Error::Error;
};

// Bad run configuration: unknown keys, invalid model ids, out-of-range values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A required input file is missing or unreadable.
class MissingInputError : public Error {
public:
    using Error::Error;
};

// Statistical routine was handed too little data (e.g. fewer than five
// nonzero differences for the signed-rank test).
class InsufficientDataError : public DomainError {
public:
    using DomainError::DomainError;
};

// Something that should be impossible happened; indicates a library bug.
class InternalError : public Error {
public:
    using Error::Error;
};

}  // namespace temgnet
