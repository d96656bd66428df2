#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace phasedeploy {

// Base of every error the library throws. The CLI maps subclasses onto exit
// codes (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid specification, manifest field, or unknown name.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation precondition (bad arity, empty input, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Held-out discipline breach or a locked-set modification.
class ProtocolViolation : public Error {
 public:
  using Error::Error;
};

// Corrupt, truncated, or version-mismatched serialized payload.
class LoadError : public Error {
 public:
  LoadError(std::string field, const std::string& what)
      : Error("load error in '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// A reward expression referenced a feature the transition does not carry, or
// produced a non-finite value.
class EvaluationError : public Error {
 public:
  EvaluationError(std::string feature, const std::string& what)
      : Error(what), feature_(std::move(feature)) {}
  const std::string& feature() const { return feature_; }

 private:
  std::string feature_;
};

class ParseError : public Error {
 public:
  enum class Kind { kLexical, kSyntax, kUnknownIdentifier, kArity, kDepthOverflow };

  ParseError(Kind kind, std::size_t offset, const std::string& what)
      : Error(what + " at offset " + std::to_string(offset)), kind_(kind), offset_(offset) {}
  Kind kind() const { return kind_; }
  std::size_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

}  // namespace phasedeploy
