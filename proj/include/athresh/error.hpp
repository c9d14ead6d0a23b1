/*
 * Copyright 2026 The athresh Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace athresh {

/// Base class of every error thrown by the library. The CLI maps the
/// categories below onto exit codes (validation/config -> 1, the rest -> 2).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor/mask shapes. Messages name both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input outside the mathematical domain of an operation (log of a
/// non-positive value, division by zero).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Structurally invalid configuration (channels not divisible by heads,
/// unknown mode string, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API contract violation (non-scalar loss passed to backward, unsorted
/// detections, empty tape).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input that is syntactically fine but semantically empty or collapsed
/// (all-zero dice operands, zero-length normalization axis, empty bbox).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Scene synthesis could not place an instance within the retry budget.
class PlacementError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied value caught before any work starts.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Filesystem / serialization failure; message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace athresh
