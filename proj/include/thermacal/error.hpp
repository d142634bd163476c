#pragma once

#include <stdexcept>
#include <string>

namespace thermacal {

/// Process exit codes shared by the CLI and the library error types.
enum class ExitCode : int {
    kSuccess = 0,
    kContract = 2,
    kNumerical = 3,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept { return ExitCode::kContract; }
};

/// Violated precondition: wrong shapes, bad configuration, missing inputs.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Input outside the mathematical domain of an operation (NaN, d <= 0, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Requested capture or key is not present.
class LookupError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::kNumerical; }
};

/// Cholesky factorisation hit a non-positive pivot.
class CholeskyError : public NumericalError {
public:
    CholeskyError(const std::string& what, long pivot)
        : NumericalError(what), pivot_(pivot) {}
    long pivot() const noexcept { return pivot_; }

private:
    long pivot_;
};

}  // namespace thermacal
