#pragma once

#include <stdexcept>
#include <string>

namespace adaptok {

// Raised for invalid user input: malformed files, bad arguments, violated
// preconditions. The CLI maps it to exit status 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input file problem tied to a (1-based) line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace adaptok
