// Copyright 2026 The xdistill Authors.
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

namespace xdistill {

// Bad or inconsistent configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A pipeline stage was invoked before the artifacts it consumes exist.
// The message names the missing file. CLI exit code 3.
class MissingPrerequisite : public std::runtime_error {
 public:
  explicit MissingPrerequisite(const std::string& what)
      : std::runtime_error(what) {}
};

// NaN/Inf reached network parameters or gradients. CLI exit code 4.
class NumericFault : public std::runtime_error {
 public:
  explicit NumericFault(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace xdistill
