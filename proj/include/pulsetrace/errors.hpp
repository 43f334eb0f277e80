#ifndef PULSETRACE_ERRORS_HPP
#define PULSETRACE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pulsetrace {

// Shape or extent disagreement between tensors and an op's contract.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed or truncated on-disk data (.usq sequences, checkpoints).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

class BadMagicError : public FormatError {
 public:
  explicit BadMagicError(const std::string& what) : FormatError(what) {}
};

class UnsupportedVersionError : public FormatError {
 public:
  explicit UnsupportedVersionError(const std::string& what)
      : FormatError(what) {}
};

class TruncatedError : public FormatError {
 public:
  explicit TruncatedError(const std::string& what) : FormatError(what) {}
};

// Bad user-facing configuration (config file keys, CLI values).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite values where the numeric contract forbids them.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Period detection found fewer than two peaks; the cyclic penalty must be
// disabled for the sequence rather than silently zeroed.
class NoPeaksError : public std::runtime_error {
 public:
  explicit NoPeaksError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pulsetrace

#endif  // PULSETRACE_ERRORS_HPP
