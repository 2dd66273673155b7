// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace segdistill {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates an operation's precondition (non-finite, out of range, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// A file or directory on disk does not follow the expected layout.
class FormatError : public Error {
 public:
  enum class Kind {
    kBadMagic,
    kUnsupportedVersion,
    kTruncated,
    kChecksumMismatch,
    kMalformed,
    kMissingMask,
    kUnknownClass,
    kManifestMismatch,
    kIo,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace segdistill
