// Copyright 2026 The voxtopo Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace voxtopo {

// Invalid-argument errors use std::invalid_argument directly. The types below
// cover the remaining failure classes so callers (and the CLI) can tell them
// apart.

/// Malformed .vgrid / .v2vw stream. The message names the offending field.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed mesh text/binary; carries a line number or byte offset.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long location)
      : std::runtime_error(what), location_(location) {}
  long location() const noexcept { return location_; }

 private:
  long location_;
};

/// Well-formed input that cannot be processed (empty mesh, degenerate bbox,
/// grid dims the network cannot take, ...).
class InvalidInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent training / pipeline configuration, detected before work starts.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint architecture manifest does not match the requested model.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Network extraction could not proceed (e.g. a channel has nothing above tau).
class ExtractionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf produced by a layer or a loss.
class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace voxtopo
