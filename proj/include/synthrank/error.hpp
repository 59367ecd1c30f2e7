#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace synthrank {

/// Coarse error categories. These map one-to-one onto the C API status codes.
enum class ErrorCode {
  kInvalidArgument = 1,
  kParse = 2,
  kDuplicateId = 3,
  kIo = 4,
  kNotFound = 5,
  kState = 6,
  kTransport = 7,
  kNumeric = 8,
  kConfig = 9,
  kStage = 10,
  kBusy = 11,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Malformed input record. `line` is 1-based; 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(ErrorCode::kParse, source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DuplicateIdError : public Error {
 public:
  explicit DuplicateIdError(const std::string& id)
      : Error(ErrorCode::kDuplicateId, "duplicate id \"" + id + "\""), id_(id) {}

  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

/// Failure talking to a generation endpoint. Callers may retry.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error(ErrorCode::kTransport, what) {}
};

/// Pipeline stage failure; `stage` names what needs to be rerun.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : Error(ErrorCode::kStage, "stage '" + stage + "': " + what), stage_(stage) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace synthrank
