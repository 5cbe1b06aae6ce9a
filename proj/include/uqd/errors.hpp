#ifndef UQD_ERRORS_HPP
#define UQD_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace uqd {

// Error taxonomy shared by the whole library. The CLI maps these onto exit
// codes: everything except IoError is a usage/contract problem (exit 1),
// IoError is a filesystem problem (exit 2).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or axis mismatch.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

// Non-finite values, undefined math (zero-norm cosine, division by zero).
class NumericError : public Error {
public:
    using Error::Error;
};

// Malformed file content (bad magic, truncated payload, bad header field).
class FormatError : public Error {
public:
    using Error::Error;
};

// Inconsistent or incomplete run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// The filesystem refused an operation (missing path, unwritable directory).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace uqd

#endif
