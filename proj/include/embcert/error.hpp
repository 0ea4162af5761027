#pragma once

#include <stdexcept>
#include <string>

namespace embcert {

/// Data or validation failure: malformed files, invariant violations, impossible fits.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller asked for something that cannot be satisfied by any data, e.g. a
/// measure without the resources it needs.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace embcert
