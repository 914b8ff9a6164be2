#pragma once

#include <stdexcept>
#include <string>

namespace rforge {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for an op.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A caller violated an API precondition (non-scalar loss, empty tape, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// A numeric argument is outside the op's domain (e.g. temperature <= 0).
class DomainError : public Error {
public:
    using Error::Error;
};

class VocabularyError : public Error {
public:
    using Error::Error;
};

class LabelError : public Error {
public:
    using Error::Error;
};

/// Every datastore entry was excluded by the query's filter.
class RetrievalExhaustedError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what), m_line(line) {}
    std::size_t line() const noexcept { return m_line; }

private:
    std::size_t m_line;
};

/// Structurally parsed data that fails a semantic check.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Inconsistent generator or training configuration.
class SpecError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage was invoked before its inputs exist.
class PreconditionError : public Error {
public:
    using Error::Error;
};

} // namespace rforge
