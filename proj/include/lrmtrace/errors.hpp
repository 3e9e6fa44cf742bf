#pragma once

#include <stdexcept>
#include <string>

namespace lrmtrace {

/// Base class for every error the engine reports.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file, record, or step string.
class ParseError : public Error {
public:
    using Error::Error;
};

class InvalidRecord : public Error {
public:
    using Error::Error;
};

/// A reasoning trace that fails arithmetic evaluation or forms a cycle.
class InvalidTrace : public Error {
public:
    using Error::Error;
};

class InsufficientPool : public Error {
public:
    using Error::Error;
};

class NoPath : public Error {
public:
    using Error::Error;
};

class NoRoot : public Error {
public:
    using Error::Error;
};

class NoTraceableOperand : public Error {
public:
    using Error::Error;
};

/// Any failure to obtain projections from an oracle backend.
class OracleUnavailable : public Error {
public:
    using Error::Error;
};

/// Batch oracle miss: the request is not present in the loaded responses.
class UnknownRequest : public OracleUnavailable {
public:
    using OracleUnavailable::OracleUnavailable;
};

class InvalidSubstitution : public Error {
public:
    using Error::Error;
};

} // namespace lrmtrace
