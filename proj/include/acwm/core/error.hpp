// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace acwm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or argument shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value outside the domain an operation accepts.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf or blow-up detected during a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Failure reading or writing a file.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace acwm
