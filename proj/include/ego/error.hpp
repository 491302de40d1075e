#pragma once

#include <stdexcept>
#include <string>

namespace ego {

// Every failure the library reports falls into one of these buckets. The CLI
// maps them onto its stable exit codes, so changing a kind is a contract
// change.
enum class ErrorKind {
  kParse,            // malformed input text (bad JSON, truncated binary)
  kSchema,           // well-formed input with missing/mistyped fields
  kInvalidInput,     // argument outside its documented domain
  kValidation,       // data violates a structural invariant
  kShape,            // matrix/vector dimension mismatch
  kConfig,           // unusable run configuration
  kLookup,           // identifier not found in an index
  kNumeric,          // non-finite value where a finite one is required
  kUndefinedMetric,  // metric has no defined value on this input
  kIo,               // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace ego
