// Copyright 2026 The FAC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace fac {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed an invalid argument or configuration value.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// An internal precondition or invariant was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Tensor or feature-map shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A file does not follow its declared layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File contents are well-formed but semantically unusable (empty, NaN, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ScorerError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values surfaced during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace fac
