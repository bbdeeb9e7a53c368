#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace fqf {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  ShapeError(std::string op, const std::string& detail)
      : Error(op + ": " + detail), op_(std::move(op)) {}

  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

/// A NaN or Inf was found where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported image file.
class DecodeError : public IoError {
 public:
  using IoError::IoError;
};

class CheckpointError : public Error {
 public:
  enum class Kind { Io, Magic, Checksum, Dtype, Format, Shape, Missing };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Training produced a non-finite loss; the model holds the last good parameters.
class DivergenceError : public Error {
 public:
  DivergenceError(int step, const std::string& what) : Error(what), step_(step) {}

  int step() const noexcept { return step_; }

 private:
  int step_;
};

}  // namespace fqf
