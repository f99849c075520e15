#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vlab {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model/experiment configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input outside an operation's domain (empty list, shape mismatch, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Pearson/Spearman over a constant series. Reports render this as "n/a".
class UndefinedCorrelation : public DomainError {
 public:
  using DomainError::DomainError;
};

// Direction with (near) zero norm before normalisation.
class DegenerateDirection : public DomainError {
 public:
  using DomainError::DomainError;
};

// Malformed file. offset is the byte position where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace vlab
