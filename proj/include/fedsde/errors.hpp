#pragma once

#include <stdexcept>
#include <string>

namespace fedsde {

/// Precondition or configuration violation.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NotPsdError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class SingularMatrixError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sample set too small or with zero spread for the requested statistic.
class DegenerateSampleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A simulation produced a non-finite state. `where` is the round index or
/// continuous time at which it happened.
class NumericalAbort : public std::runtime_error {
 public:
  NumericalAbort(const std::string& what, double where)
      : std::runtime_error(what), where_(where) {}
  double where() const noexcept { return where_; }

 private:
  double where_;
};

}  // namespace fedsde
