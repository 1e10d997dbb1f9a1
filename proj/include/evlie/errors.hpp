#pragma once

#include <stdexcept>
#include <string>

namespace evlie {

// Error taxonomy, mapped to CLI exit codes:
//   ArgumentError   -> 2  (bad parameters, bad config, empty inputs)
//   ValidationError -> 3  (data fails an invariant; FormatError is a subtype)
//   NumericError    -> 4  (non-finite values, numerical breakdown)
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArgumentError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct FormatError : ValidationError {
    using ValidationError::ValidationError;
};

struct NumericError : Error {
    using Error::Error;
};

} // namespace evlie
