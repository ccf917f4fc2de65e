#pragma once

#include <stdexcept>
#include <string>

namespace fracdet {

/// Base class for every error raised by the library. Carries a short
/// machine-readable kind next to the human message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Caller passed a value outside the operation's domain.
class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message) : Error("invalid_argument", message) {}
};

/// Raw head output does not match the anchors x channels contract.
class LayoutError : public Error {
 public:
  LayoutError(std::size_t expected, std::size_t actual)
      : Error("layout_mismatch", "raw prediction layout mismatch: expected " + std::to_string(expected) +
                                     " elements, got " + std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

/// Text input (label file, manifest, prediction file) failed to parse.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line = 0)
      : Error("parse_error", line ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class MissingFileError : public Error {
 public:
  explicit MissingFileError(const std::string& path) : Error("missing_file", "file not found: " + path) {}
};

class MalformedModelError : public Error {
 public:
  explicit MalformedModelError(const std::string& message) : Error("malformed_model", message) {}
};

class ShapeMismatchError : public Error {
 public:
  explicit ShapeMismatchError(const std::string& message) : Error("shape_mismatch", message) {}
};

class ImageDecodeError : public Error {
 public:
  explicit ImageDecodeError(const std::string& message) : Error("undecodable_image", message) {}
};

/// Failure inside one stage of the predict pipeline; `stage()` names it.
class ExecutionError : public Error {
 public:
  ExecutionError(std::string stage, const std::string& message)
      : Error("execution_failure", stage + ": " + message), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace fracdet
