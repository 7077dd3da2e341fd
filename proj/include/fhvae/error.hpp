// Copyright (c) 2026 The contrastive-fhvae Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace fhvae {

// Error categories map one-to-one onto CLI exit codes (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad flags or an unknown command.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Missing files, malformed containers, violated preconditions on inputs.
class DataError : public Error {
 public:
  using Error::Error;
};

// Inconsistent tensor shapes while building or running a tape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, failed numeric invariants.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw DataError(message);
}

}  // namespace fhvae
