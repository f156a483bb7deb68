#pragma once

#include <stdexcept>
#include <string>

namespace reasoner {

// Root of every error thrown by the library. Subclasses name the violated
// contract so callers (and the CLI exit-code mapping) can react selectively.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class DegenerateRowError : public Error { using Error::Error; };
class DeterminismError : public Error { using Error::Error; };
class CapacityError : public Error { using Error::Error; };
class VocabularyError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class DivergenceError : public Error { using Error::Error; };
class GenerationError : public Error { using Error::Error; };
class FormatVersionError : public Error { using Error::Error; };

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace reasoner
