// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mtml {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// A value that must live on a tape was not recorded on one.
class DetachedError : public Error {
public:
    using Error::Error;
};

/// NaN or infinity where a finite value is required.
class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    explicit ParseError(const std::string& what) : Error(what) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_ = 0;
};

/// Corpus-level consistency violation (duplicate ids, split overlap).
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// A corpus source contained no persona records.
class EmptyCorpusError : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

/// A training loss became non-finite.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t iteration, std::string task_id)
        : Error(what), iteration_(iteration), task_id_(std::move(task_id)) {}

    [[nodiscard]] std::size_t iteration() const noexcept { return iteration_; }
    [[nodiscard]] const std::string& task_id() const noexcept { return task_id_; }

private:
    std::size_t iteration_;
    std::string task_id_;
};

}  // namespace mtml
