#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace clustsens {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes, so keep the hierarchy shallow.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a documented precondition or value domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// CSV header is missing a required column.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& column)
      : Error("missing required column '" + column + "'"), column_(column) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

// A data row failed validation. Rows are 1-based and exclude the header.
class ValidationError : public Error {
 public:
  ValidationError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class SingularDesignError : public Error {
 public:
  using Error::Error;
};

// Optimizer ran out of budget. Carries the best parameter vector seen so the
// caller can inspect where it stalled.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> best = {})
      : Error(what), best_(std::move(best)) {}
  const std::vector<double>& best_iterate() const noexcept { return best_; }

 private:
  std::vector<double> best_;
};

// Complete or quasi-complete separation in a logistic fit.
class SeparationError : public ConvergenceError {
 public:
  using ConvergenceError::ConvergenceError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace clustsens
