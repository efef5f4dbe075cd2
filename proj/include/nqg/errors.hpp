// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace nqg {

// Error taxonomy shared across the library. Callers that want to distinguish
// failure classes catch the specific type; everything derives from
// std::runtime_error so a catch-all at the CLI boundary prints one line.

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateInputError : std::runtime_error {
  explicit DegenerateInputError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

struct UnsupportedError : std::runtime_error {
  explicit UnsupportedError(const std::string& what) : std::runtime_error(what) {}
};

// Parse failures carry enough context (file path or line number) to point at
// the offending input.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nqg
