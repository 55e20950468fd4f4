#pragma once

#include <stdexcept>
#include <string>

namespace cxrgen {

// Error hierarchy shared by all modules. `kind()` is a stable machine-readable
// tag; the CLI serializes it into error records.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct CodecError : Error {
  explicit CodecError(const std::string& m) : Error("codec", m) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};
struct IngestionError : Error {
  explicit IngestionError(const std::string& m) : Error("ingestion", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct StateError : Error {
  explicit StateError(const std::string& m) : Error("state", m) {}
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& m, long long step)
      : Error("training_diverged", m), step_(step) {}
  long long step() const noexcept { return step_; }

 private:
  long long step_;
};

}  // namespace cxrgen
