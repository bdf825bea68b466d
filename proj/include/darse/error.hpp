#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace darse {

/// Broad failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
  invalid_input,
  invalid_rank,
  degenerate_input,
  numeric_failure,
  infeasible,
  cap_exceeded,
  evaluator_failure,
  parse_error,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::invalid_rank: return "invalid-rank";
    case ErrorKind::degenerate_input: return "degenerate-input";
    case ErrorKind::numeric_failure: return "numeric-failure";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::cap_exceeded: return "cap-exceeded";
    case ErrorKind::evaluator_failure: return "evaluator-failure";
    case ErrorKind::parse_error: return "parse-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what)
      : Error(ErrorKind::invalid_input, what) {}
};

class InvalidRank : public Error {
 public:
  explicit InvalidRank(const std::string& what)
      : Error(ErrorKind::invalid_rank, what) {}
};

class DegenerateInput : public Error {
 public:
  explicit DegenerateInput(const std::string& what)
      : Error(ErrorKind::degenerate_input, what) {}
};

class NumericFailure : public Error {
 public:
  explicit NumericFailure(const std::string& what)
      : Error(ErrorKind::numeric_failure, what) {}
};

/// The minimal achievable parameter weight exceeds the budget.
class Infeasible : public Error {
 public:
  Infeasible(const std::string& what, long long minimal_weight)
      : Error(ErrorKind::infeasible, what), minimal_weight_(minimal_weight) {}

  long long minimal_weight() const noexcept { return minimal_weight_; }

 private:
  long long minimal_weight_;
};

class CapExceeded : public Error {
 public:
  CapExceeded(const std::string& what, double requested)
      : Error(ErrorKind::cap_exceeded, what), requested_(requested) {}

  /// Size of the refused enumeration (may exceed the integer range).
  double requested() const noexcept { return requested_; }

 private:
  double requested_;
};

/// An objective evaluator threw or returned a non-finite metric. Carries the
/// rank vector that was being evaluated.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, std::vector<int> ranks,
                  ErrorKind cause = ErrorKind::evaluator_failure)
      : Error(ErrorKind::evaluator_failure, what),
        ranks_(std::move(ranks)),
        cause_(cause) {}

  const std::vector<int>& ranks() const noexcept { return ranks_; }
  ErrorKind cause() const noexcept { return cause_; }

 private:
  std::vector<int> ranks_;
  ErrorKind cause_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(ErrorKind::parse_error, what), line_(line) {}

  /// 1-based line number, 0 when not applicable.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace darse
