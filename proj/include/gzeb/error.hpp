#pragma once

#include <stdexcept>
#include <string>

namespace gzeb {

enum class ErrorKind {
  config,     // invalid configuration or arguments
  usage,      // precondition violated by the caller
  data,       // inconsistent data content
  format,     // malformed file
  coverage,   // missing (user, stimulus) observation
  numerical,  // NaN/Inf or failed gradient check
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::format, what + " (at byte offset " + std::to_string(offset) + ")"),
        detail_(what),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::size_t offset_;
};

class CoverageError : public Error {
 public:
  CoverageError(const std::string& user, const std::string& stimulus)
      : Error(ErrorKind::coverage,
              "missing saliency map for user '" + user + "' on stimulus '" + stimulus + "'"),
        user_(user),
        stimulus_(stimulus) {}
  const std::string& user() const noexcept { return user_; }
  const std::string& stimulus() const noexcept { return stimulus_; }

 private:
  std::string user_;
  std::string stimulus_;
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

/// Process exit code for an error kind: 2 config/usage, 3 data/format, 4 numerical.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::usage:
      return 2;
    case ErrorKind::data:
    case ErrorKind::format:
    case ErrorKind::coverage:
      return 3;
    case ErrorKind::numerical:
      return 4;
  }
  return 1;
}

}  // namespace gzeb
