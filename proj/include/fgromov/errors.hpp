#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgromov {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A ball or product set would exceed its configured element cap.
class ResourceLimitError : public Error {
 public:
  ResourceLimitError(const std::string& what, std::size_t cap)
      : Error(what), cap_(cap) {}
  std::size_t cap() const { return cap_; }

 private:
  std::size_t cap_;
};

/// An exact integer operation left the 64-bit range of a backend.
class ArithmeticOverflow : public Error {
 public:
  using Error::Error;
};

/// Elements or generating sets that do not belong to the backend.
class BackendMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidGeneratingSet : public Error {
 public:
  using Error::Error;
};

/// A pigeonhole or saturation search ran out of its radius budget.
/// Carries the growth data seen so far so callers can report it.
class BudgetExhausted : public Error {
 public:
  BudgetExhausted(const std::string& what, std::vector<std::size_t> sizes)
      : Error(what), sizes_(std::move(sizes)) {}
  const std::vector<std::size_t>& sizes() const { return sizes_; }

 private:
  std::vector<std::size_t> sizes_;
};

/// No admissible scale in a determinant-ratio search; carries the profile.
class ScaleSearchFailure : public Error {
 public:
  ScaleSearchFailure(const std::string& what, std::vector<double> profile)
      : Error(what), profile_(std::move(profile)) {}
  const std::vector<double>& profile() const { return profile_; }

 private:
  std::vector<double> profile_;
};

/// A certificate's defining inclusion failed exhaustive verification.
class CertificateFailure : public Error {
 public:
  using Error::Error;
};

/// Numerical degeneracy: negative Gram determinants, vanishing projections,
/// rank-deficient samples.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// A convolution or translation left the enumerated working ball.
class SupportEscape : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Violated precondition of an exact algorithm (e.g. unipotent input to a
/// growth witness search).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Should be unreachable if the underlying theorem holds; reported loudly.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace fgromov
