#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bridgekit {

// Root of every error raised by the library.
class BridgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside its mathematical domain (t outside [0,1], gamma <= 0, ...).
class DomainError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

// Vector/matrix dimensions disagree.
class ShapeError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

// Non-finite or otherwise unusable data (training targets, CSV rows).
class DataError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ConvergenceError : public BridgeError {
 public:
  ConvergenceError(const std::string& what, double violation)
      : BridgeError(what), violation_(violation) {}
  double violation() const { return violation_; }

 private:
  double violation_;
};

class IntegrationError : public BridgeError {
 public:
  IntegrationError(const std::string& what, std::size_t step)
      : BridgeError(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Invalid run configuration; the CLI maps it to exit code 2.
class ConfigError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

}  // namespace bridgekit
