#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace prunesearch {

/// Malformed network, config file, or search-space definition.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Proposal cannot be encoded as a graph (all layers skipped, or a skip
/// disconnects the network).
class EncodeError : public std::runtime_error {
public:
  explicit EncodeError(const std::string& what) : std::runtime_error(what) {}
};

/// Gaussian-process fit failed after jitter escalation.
class FitError : public std::runtime_error {
public:
  explicit FitError(const std::string& what) : std::runtime_error(what) {}
};

/// Latency-model calibration is underdetermined.
class CalibrationError : public std::runtime_error {
public:
  CalibrationError(const std::string& what, std::vector<std::string> missing)
      : std::runtime_error(what), missing_schemes(std::move(missing)) {}
  std::vector<std::string> missing_schemes;
};

/// An evaluator could not score a proposal. Carries the index of the failing
/// proposal within the batch so the search layer can persist and abort.
class EvaluationError : public std::runtime_error {
public:
  EvaluationError(const std::string& what, std::size_t index)
      : std::runtime_error(what), proposal_index(index) {}
  std::size_t proposal_index;
};

/// State file is corrupt or does not match the loaded configuration.
class StateError : public std::runtime_error {
public:
  explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace prunesearch
