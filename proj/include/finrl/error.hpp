#pragma once

#include <stdexcept>
#include <string>

namespace finrl {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (bad shape, empty dataset, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A remote or mock text backend failed to produce a response.
class BackendError : public Error {
public:
    using Error::Error;
};

/// Malformed file or record.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace finrl
