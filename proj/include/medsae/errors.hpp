#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace medsae {

// Base of everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad or missing configuration / input validation. CLI exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed input files (matrix containers, CSVs). CLI exit code 2.
struct FormatError : ConfigError {
    using ConfigError::ConfigError;
};

// Numerical failures at runtime. CLI exit code 3.
struct NumericError : Error {
    using Error::Error;
};

// VLM endpoint failures. CLI exit code 4.
struct EndpointError : Error {
    using Error::Error;
};

// --- file formats ---------------------------------------------------------

struct MalformedHeader : FormatError {
    using FormatError::FormatError;
};

struct ShapeMismatch : FormatError {
    using FormatError::FormatError;
};

struct NonFiniteEntry : FormatError {
    NonFiniteEntry(const std::string& msg, std::size_t flat_index)
        : FormatError(msg), index(flat_index) {}
    std::size_t index;
};

struct IoFailure : Error {
    using Error::Error;
};

struct NonBinaryEntry : FormatError {
    using FormatError::FormatError;
};

struct RaggedRow : FormatError {
    using FormatError::FormatError;
};

struct EmptyHeader : FormatError {
    using FormatError::FormatError;
};

struct DuplicateLabel : FormatError {
    using FormatError::FormatError;
};

// --- numerics -------------------------------------------------------------

struct DegenerateData : NumericError {
    using NumericError::NumericError;
};

struct DimensionMismatch : NumericError {
    using NumericError::NumericError;
};

struct NonFiniteLoss : NumericError {
    NonFiniteLoss(const std::string& msg, std::size_t epoch_, std::size_t batch_)
        : NumericError(msg), epoch(epoch_), batch(batch_) {}
    std::size_t epoch;
    std::size_t batch;
};

struct NoDefinedNeurons : NumericError {
    using NumericError::NumericError;
};

struct IndexOutOfRange : NumericError {
    using NumericError::NumericError;
};

struct InvalidShape : ConfigError {
    using ConfigError::ConfigError;
};

// --- naming / detection ----------------------------------------------------

struct ImageLoadFailure : Error {
    using Error::Error;
};

struct OversizePayload : Error {
    using Error::Error;
};

struct EndpointUnreachable : EndpointError {
    using EndpointError::EndpointError;
};

struct MalformedResponse : EndpointError {
    using EndpointError::EndpointError;
};

struct EmptyConcept : EndpointError {
    using EndpointError::EndpointError;
};

struct InsufficientPositives : NumericError {
    using NumericError::NumericError;
};

struct InsufficientNegatives : NumericError {
    using NumericError::NumericError;
};

struct TooManyUnparseable : EndpointError {
    using EndpointError::EndpointError;
};

} // namespace medsae
