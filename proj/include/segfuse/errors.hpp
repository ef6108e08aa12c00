#pragma once

#include <stdexcept>
#include <string>

namespace segfuse {

/// Base of every error raised by the engine. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions disagree, or a region falls outside its frame.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A file or encoded value does not follow its byte/text layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a domain contract (unknown label,
/// missing object id, missing ground truth, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A value outside the admissible range of a parameter.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Row normalization was asked to divide by a zero row sum.
class DegenerateAttentionError : public Error {
 public:
  using Error::Error;
};

}  // namespace segfuse
