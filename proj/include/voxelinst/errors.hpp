#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace voxelinst {

// Raw payload or sidecar does not describe a valid volume.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A required input file or directory does not exist.
class MissingFileError : public std::runtime_error {
 public:
  explicit MissingFileError(const std::string& path)
      : std::runtime_error("missing file '" + path + "'"), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class MissingSidecarError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Synthetic packing failed; placed() is the number of instances that fit.
class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& what, std::size_t placed)
      : std::runtime_error(what), placed_(placed) {}
  std::size_t placed() const { return placed_; }

 private:
  std::size_t placed_;
};

// Caller violated an operation precondition (shape mismatch, bad config).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Config validation failure; path() is a JSON pointer to the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace voxelinst
