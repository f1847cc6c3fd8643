// Copyright (c) 2026 The wdlab Authors. All Rights Reserved.
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

#include <cstdint>
#include <stdexcept>
#include <string>

namespace wdlab {

/// Shape or structure mismatch (non-square, dimension chain broken, ...).
struct StructuralError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Zero norm, single-example BN batch and similar degenerate inputs.
struct DegenerateError : DomainError {
  using DomainError::DomainError;
};

/// Step configuration that cannot be stable (e.g. eta*beta >= 1).
struct InstabilityError : DomainError {
  using DomainError::DomainError;
};

/// Requested dense object exceeds the configured parameter cap.
struct CapacityError : std::length_error {
  using std::length_error::length_error;
};

/// Precondition of an identity is violated (e.g. biases present).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Non-finite or singular intermediate result.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the byte offset where decoding failed.
struct FormatError : std::runtime_error {
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset(offset) {}
  std::uint64_t offset;
};

}  // namespace wdlab
