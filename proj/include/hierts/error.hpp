#pragma once

#include <stdexcept>
#include <string>

namespace hierts {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed tree: cycle, disconnected node, single-child internal node, bad root.
class HierarchyError : public Error {
public:
    using Error::Error;
};

/// Bad user input: unknown node, non-leaf action, dimension mismatch, bad prior.
class InputError : public Error {
public:
    using Error::Error;
};

/// A linear system that should be SPD failed to factor or is too badly conditioned.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Dataset or configuration file failed to parse or validate.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace hierts
