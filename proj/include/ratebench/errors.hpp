#pragma once

#include <stdexcept>
#include <string>

namespace ratebench {

// invalid-argument maps onto std::invalid_argument; the other two error kinds
// callers need to distinguish get their own types.

/// An operation was invoked on an object that is not in the required state.
class FailedPrecondition : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A persisted artifact was written by an incompatible format version.
class UnsupportedVersion : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Machine-readable error code used by the CLI error report.
std::string error_code(const std::exception & e);

}  // namespace ratebench
