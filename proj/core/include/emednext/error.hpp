#pragma once

#include <stdexcept>
#include <string>

namespace emednext {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument values (non-positive spacing, bad thresholds, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Malformed file contents (bad magic bytes, truncated payload).
class FormatError : public Error {
public:
    using Error::Error;
};

// Well-formed input using a feature we do not handle (exotic dtype, >4 dims).
class UnsupportedError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Mismatched tensor/volume shapes between co-operating inputs.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid run configuration (CLI / JSON config level).
class ConfigError : public Error {
public:
    using Error::Error;
};

// A case whose modalities contain no nonzero voxel at all.
class EmptyForegroundError : public Error {
public:
    using Error::Error;
};

}  // namespace emednext
