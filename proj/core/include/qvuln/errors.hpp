#pragma once

#include <stdexcept>
#include <string>

namespace qvuln {

/// Configuration/usage problem (missing API key, bad flag value). The CLI
/// maps this to exit code 2; data problems map to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace qvuln
