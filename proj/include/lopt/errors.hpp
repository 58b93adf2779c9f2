#pragma once

#include <stdexcept>
#include <string>

namespace lopt {

// Machine-readable error categories; the CLI maps them to exit codes.
enum class ErrorCategory { Config, Data, Checkpoint, Shape, Runtime };

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Data: return "data";
    case ErrorCategory::Checkpoint: return "checkpoint";
    case ErrorCategory::Shape: return "shape";
    case ErrorCategory::Runtime: return "runtime";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, std::string code, const std::string& msg)
      : std::runtime_error(msg), category_(cat), code_(std::move(code)) {}
  ErrorCategory category() const { return category_; }
  // Short stable identifier, e.g. "bad_magic", "count_mismatch".
  const std::string& code() const { return code_; }

 private:
  ErrorCategory category_;
  std::string code_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg)
      : Error(ErrorCategory::Shape, "shape_mismatch", msg) {}
};

}  // namespace lopt
