// Copyright 2026 The DAVI Authors.
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

namespace davi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: out-of-range values, malformed files, schema violations.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Two grids that must share a shape do not.
class ShapeMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// An artifact produced by an earlier pipeline stage is missing.
class UpstreamMissing : public Error {
 public:
  using Error::Error;
};

/// A segmentation backend failed. Transport failures are retriable.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool retriable)
      : Error(what), retriable_(retriable) {}
  bool retriable() const noexcept { return retriable_; }

 private:
  bool retriable_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace davi
