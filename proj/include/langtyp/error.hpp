#pragma once

#include <stdexcept>
#include <string>

namespace langtyp {

// Input or contract violations the caller can fix (bad file, bad argument,
// missing upstream artifact). The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : ValidationError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Failures that occur while computing (diverged training, I/O failure).
// The CLI maps these to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace langtyp
