// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace echoreg {

/// Invalid configuration value; `key` is the JSON path of the offending entry
/// (empty when the violation spans several keys).
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(key.empty() ? message : key + ": " + message),
        key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Malformed binary or text artifact; `offset` is the byte position where
/// the problem was detected.
class FormatError : public std::runtime_error {
 public:
  FormatError(std::uint64_t offset, const std::string& message)
      : std::runtime_error(message + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace echoreg
