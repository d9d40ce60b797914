#pragma once

#include <stdexcept>
#include <string>

namespace safegen {

// Precondition violated by an argument (bad dimension, zero norm, out of range).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A configuration or document failed validation. Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Registry or world document could not be loaded. `subject()` names the
// offending label or field when there is one.
class LoadError : public ValidationError {
 public:
  LoadError(const std::string& what, std::string subject = {})
      : ValidationError(what), subject_(std::move(subject)) {}

  const std::string& subject() const noexcept { return subject_; }

 private:
  std::string subject_;
};

// The LLM response did not resemble any of the candidate labels.
class NoMatchError : public std::runtime_error {
 public:
  NoMatchError(const std::string& what, double best_score)
      : std::runtime_error(what), best_score_(best_score) {}

  double best_score() const noexcept { return best_score_; }

 private:
  double best_score_;
};

// The text-completion backend failed after exhausting its retry budget.
class TransportError : public std::runtime_error {
 public:
  TransportError(const std::string& what, int attempts)
      : std::runtime_error(what), attempts_(attempts) {}

  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

}  // namespace safegen
