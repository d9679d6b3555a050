#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace igm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed expression text. `offset` is the byte offset of the offending token.
class SyntaxError : public Error {
public:
    SyntaxError(const std::string& what, std::size_t offset)
        : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class UnknownVariableError : public Error {
public:
    UnknownVariableError(const std::string& name, std::size_t offset)
        : Error("unknown variable '" + name + "' at offset " + std::to_string(offset)),
          name_(name),
          offset_(offset) {}
    const std::string& name() const noexcept { return name_; }
    std::size_t offset() const noexcept { return offset_; }

private:
    std::string name_;
    std::size_t offset_;
};

/// Invalid chart, metric, manifest or option.
class InputError : public Error {
public:
    using Error::Error;
};

/// Adaptive quadrature ran out of its subdivision budget.
class QuadratureError : public Error {
public:
    QuadratureError(const std::string& what, int subdivisions, double error_estimate)
        : Error(what), subdivisions_(subdivisions), error_estimate_(error_estimate) {}
    int subdivisions() const noexcept { return subdivisions_; }
    double error_estimate() const noexcept { return error_estimate_; }

private:
    int subdivisions_;
    double error_estimate_;
};

/// A numerical precondition of an operator construction failed
/// (non-positive CRF on a node, non-Hermitian matrix, missing boundary closure, ...).
class NumericsError : public Error {
public:
    using Error::Error;
};

}  // namespace igm
