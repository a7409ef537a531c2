#pragma once

#include <stdexcept>
#include <string>

namespace eitpress {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (bad sizes, out-of-range parameters).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A linear factorization or solve broke down.
class SolverError : public Error {
public:
    using Error::Error;
};

/// An iterative method ran out of iterations or stopped making progress.
class NonConvergence : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) throw InvalidArgument(message);
}

} // namespace detail
} // namespace eitpress
