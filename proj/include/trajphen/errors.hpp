#pragma once

#include <stdexcept>
#include <string>

namespace trajphen {

// Pipeline error taxonomy; the CLI maps these onto exit codes.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A subject crossed stage boundaries (or another invariant that must abort).
struct GuardViolation : std::runtime_error {
  explicit GuardViolation(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingArtifact : std::runtime_error {
  explicit MissingArtifact(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace trajphen
