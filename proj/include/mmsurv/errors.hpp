#pragma once

#include <stdexcept>
#include <string>

namespace mmsurv {

// Error taxonomy shared by the library and the CLI. The CLI maps these to
// process exit codes: usage/config -> 1, data/format/version -> 2,
// numeric -> 3.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    using Error::Error;
};

// Violated API precondition (e.g. backward() on a non-scalar).
struct ContractError : Error {
    using Error::Error;
};

// Malformed file payloads (RVOL, checkpoints).
struct FormatError : Error {
    using Error::Error;
};

// Bad cohort content: unknown categories, missing files, impossible values.
struct DataError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Checkpoint does not match the configured architecture.
struct VersionError : Error {
    using Error::Error;
};

// Non-finite loss or other numeric breakdown during training.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace mmsurv
