#pragma once

#include <stdexcept>
#include <string>

namespace pipealloc {

// Thrown for out-of-range levels, non-positive shares, empty grids and the
// like. Derives from std::invalid_argument so callers can catch either.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No feasible allocation was found. `dominant()` names the constraint that
// was violated most often across the search.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, std::string dominant)
      : std::runtime_error(what), dominant_(std::move(dominant)) {}
  const std::string& dominant() const { return dominant_; }

 private:
  std::string dominant_;
};

class PlacementError : public std::runtime_error {
 public:
  PlacementError(const std::string& what, std::string dimension)
      : std::runtime_error(what), dimension_(std::move(dimension)) {}
  const std::string& dimension() const { return dimension_; }

 private:
  std::string dimension_;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An input file written by an earlier command is absent or was produced
// under a different configuration hash.
class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pipealloc
