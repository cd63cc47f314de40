#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace affmem {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

/// Structural problem in a memory tree (dangling links, missing embeddings).
class StructureError : public Error {
 public:
  explicit StructureError(const std::string& what,
                          std::vector<std::string> details = {})
      : Error(what), details_(std::move(details)) {}
  const std::vector<std::string>& details() const { return details_; }

 private:
  std::vector<std::string> details_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DecompositionError : public Error {
 public:
  using Error::Error;
};

class EmptyCandidateSet : public Error {
 public:
  using Error::Error;
};

enum class ProviderErrorKind {
  EmptyInput,
  MissingPrecomputed,
  UnsupportedOperation,
  ParseFailure,
  ScoreRange,
  Timeout,
  Transport,
  Auth,
  RateLimit,
};

const char* to_string(ProviderErrorKind kind);

class ProviderError : public Error {
 public:
  ProviderError(ProviderErrorKind kind, const std::string& what,
                std::string raw_payload = {})
      : Error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        raw_payload_(std::move(raw_payload)) {}

  ProviderErrorKind kind() const { return kind_; }
  /// Model output that failed to parse, if any.
  const std::string& raw_payload() const { return raw_payload_; }

 private:
  ProviderErrorKind kind_;
  std::string raw_payload_;
};

/// Build aborted; lists the image refs whose view construction failed.
class BuildError : public Error {
 public:
  BuildError(const std::string& code, const std::string& what,
             std::vector<std::string> failed_views = {})
      : Error(code + ": " + what),
        code_(code),
        failed_views_(std::move(failed_views)) {}

  const std::string& code() const { return code_; }
  const std::vector<std::string>& failed_views() const { return failed_views_; }

 private:
  std::string code_;
  std::vector<std::string> failed_views_;
};

}  // namespace affmem
