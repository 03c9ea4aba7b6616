#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace musicqa {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  // 1-based line number, 0 when the input is not line-oriented.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Ontology
class CycleError : public Error { using Error::Error; };
class DanglingRefError : public Error { using Error::Error; };
class UnknownLabelError : public Error { using Error::Error; };
class NotALeafError : public Error { using Error::Error; };

// Corpus
class DuplicateClipError : public Error { using Error::Error; };

// Rule-based generation
class NoTemplateError : public Error { using Error::Error; };
class PlaceholderError : public Error { using Error::Error; };
class EmptyPoolError : public Error { using Error::Error; };
class InsufficientPoolError : public Error { using Error::Error; };

// LLM / embedding clients
class ServiceError : public Error { using Error::Error; };
class AuthError : public ServiceError { using ServiceError::ServiceError; };
class RateLimitError : public ServiceError { using ServiceError::ServiceError; };
class TransportError : public ServiceError { using ServiceError::ServiceError; };
class TimeoutError : public ServiceError { using ServiceError::ServiceError; };
class EmbedderError : public ServiceError { using ServiceError::ServiceError; };
class NoContextError : public Error { using Error::Error; };

// Assembly
class BadRatioError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

// Evaluation
class UnknownQaIdError : public Error { using Error::Error; };
class DimMismatchError : public Error { using Error::Error; };
class OverlapError : public Error { using Error::Error; };

}  // namespace musicqa
