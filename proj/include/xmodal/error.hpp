// SPDX-License-Identifier: Apache-2.0
//
// Exception taxonomy shared by all stages.

#pragma once

#include <stdexcept>
#include <string>

namespace xmodal {

// Base class; every library error derives from it so callers can catch
// one type at the CLI boundary.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Math domain violations (log of non-positive value, ...).
struct DomainError : Error {
    using Error::Error;
};

// Out-of-range ids and indices.
struct IndexError : Error {
    using Error::Error;
};

// API misuse (non-scalar loss to backward, bad argument combinations).
struct UsageError : Error {
    using Error::Error;
};

// Inputs that make an operation undefined (fully masked softmax slice).
struct DegenerateInputError : Error {
    using Error::Error;
};

// NaN/Inf encountered where finite numbers are required.
struct NumericError : Error {
    using Error::Error;
};

// Config file syntax/content problems; carries a line number when known.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg, int line = 0) : Error(msg), line_no(line) {}
    int line_no;
};

// Malformed binary/text artifact files.
struct FormatError : Error {
    using Error::Error;
};

// Registry misuse (duplicate or missing registrations).
struct RegistryError : Error {
    using Error::Error;
};

}  // namespace xmodal
