// Copyright 2026 The fqbmru Authors.
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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fqbmru {

/// Shape or dimension disagreement between operands.
struct dimension_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an operation does not hold.
struct precondition_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced where finite values are required.
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed file contents. `offset` is the byte offset where decoding failed.
struct format_error : std::runtime_error {
  format_error(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset(offset) {}
  std::size_t offset;
};

/// A trained network cannot be mapped onto the circuit.
struct compile_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fqbmru
