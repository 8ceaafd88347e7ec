#pragma once

#include <stdexcept>
#include <string>

namespace tripro {

/// Base for every error raised by the library. CLI maps these to nonzero exits.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-contract input data.
class InputError : public Error {
public:
    using Error::Error;
};

/// Inconsistent or unsupported configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Corrupt on-disk artifact (EVRD, manifest, checkpoint).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Unknown key (identity, parameter group, attribute name).
class LookupError : public Error {
public:
    using Error::Error;
};

class ManifestError : public Error {
public:
    using Error::Error;
};

/// A parameter group that should be frozen changed during a stage.
class FreezeViolation : public Error {
public:
    using Error::Error;
};

} // namespace tripro
