#pragma once

#include <stdexcept>
#include <string>

namespace salab {

// Base for everything the library throws on bad input.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// A modelling assumption (coverage, ergodicity, stepsize threshold) fails.
class AssumptionViolation : public Error {
 public:
  using Error::Error;
};

class StepsizeError : public AssumptionViolation {
 public:
  using AssumptionViolation::AssumptionViolation;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& msg, int line = 0, int column = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + msg
                       : msg),
        line_(line),
        column_(column) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace salab
