#pragma once

#include <stdexcept>
#include <string>

namespace patchcast {

// Every error raised by the library derives from Error so callers can map
// failures to exit codes in one place.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Operation called out of order, e.g. backward without a cached forward.
struct StateError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct ParseError : DataError {
    using DataError::DataError;
};

struct UsageError : Error {
    using Error::Error;
};

} // namespace patchcast
