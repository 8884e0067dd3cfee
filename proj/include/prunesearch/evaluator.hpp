#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunesearch/errors.hpp"
#include "prunesearch/log.hpp"
#include "prunesearch/network.hpp"

namespace prunesearch {

// ---------------------------------------------------------------------------
// Reward
// ---------------------------------------------------------------------------

struct RewardConfig {
  double alpha = 0.1;            // penalty weight, mAP points per ms
  double latency_budget_ms = 0;  // T, > 0

  void validate_or_throw() const {
    if (alpha < 0.0) throw ConfigError("reward alpha must be >= 0");
    if (latency_budget_ms <= 0.0) throw ConfigError("latency_budget_ms must be > 0");
  }
};

/// r = V - alpha * max(0, t - T). High when the model is accurate and meets
/// the latency budget; the penalty is linear past the budget.
inline double reward(double accuracy, double latency_ms, const RewardConfig& cfg) {
  return accuracy - cfg.alpha * std::max(0.0, latency_ms - cfg.latency_budget_ms);
}

struct EvaluationResult {
  double accuracy = 0.0;
  double latency_ms = 0.0;
  double reward = 0.0;
};

// ---------------------------------------------------------------------------
// Latency model
// ---------------------------------------------------------------------------

/// Linear MAC-proportional latency with per-scheme compiler-efficiency
/// multipliers and a fixed per-layer launch overhead. A simulation stand-in
/// for on-device measurement, calibrated against published numbers.
struct LatencyModel {
  double device_throughput = 1e11;  // effective MAC/s for dense execution
  std::map<std::string, double> scheme_factors = {
      {"none", 1.0}, {"filter", 2.2}, {"block", 2.7}, {"pattern", 3.1}};
  double per_layer_overhead_ms = 0.0;

  double factor(const std::string& scheme) const {
    auto it = scheme_factors.find(scheme);
    if (it == scheme_factors.end()) throw ConfigError("no latency factor for scheme: " + scheme);
    return it->second;
  }

  /// Expected of measured hardware: filter is the fastest scheme at equal
  /// MACs, pattern the slowest. Fitted models may deviate with unusual data.
  bool ordering_ok() const {
    return factor("filter") <= factor("block") && factor("block") <= factor("pattern");
  }

  json to_json() const {
    json f = json::object();
    for (const auto& [k, v] : scheme_factors) f[k] = v;
    return json{{"device_throughput", device_throughput},
                {"scheme_factors", f},
                {"per_layer_overhead_ms", per_layer_overhead_ms}};
  }

  static LatencyModel from_json(const json& j) {
    LatencyModel m;
    m.device_throughput = j.at("device_throughput").get<double>();
    m.per_layer_overhead_ms = j.value("per_layer_overhead_ms", 0.0);
    if (j.contains("scheme_factors")) {
      m.scheme_factors.clear();
      for (auto it = j.at("scheme_factors").begin(); it != j.at("scheme_factors").end(); ++it) {
        m.scheme_factors[it.key()] = it.value().get<double>();
      }
    }
    if (m.device_throughput <= 0.0) throw ConfigError("device_throughput must be > 0");
    return m;
  }
};

/// Sum over non-skipped layers of macs/rate * factor(scheme) / throughput,
/// in ms, plus the per-layer overhead. Skipped layers contribute nothing.
inline double simulate_latency(const PruningProposal& proposal, const LatencyModel& model) {
  double total = 0.0;
  for (const auto& layer : proposal.network->layers) {
    const LayerAssignment& a = proposal.assignments.at(layer.id);
    if (a.rate.is_skip()) continue;
    double macs = static_cast<double>(layer.macs) / a.rate.factor();
    total += macs * model.factor(to_string(a.scheme)) / model.device_throughput * 1000.0 +
             model.per_layer_overhead_ms;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Latency-model calibration
// ---------------------------------------------------------------------------

struct LatencyMeasurement {
  double macs = 0.0;
  std::string scheme;  // "dense"/"none", "filter", "pattern", "block", or a free label
  double latency_ms = 0.0;
  std::string name;
};

struct CalibrationRow {
  std::string name;
  std::string scheme;
  double macs = 0.0;
  double measured_ms = 0.0;
  double predicted_ms = 0.0;
  double relative_error = 0.0;
};

struct CalibrationResult {
  LatencyModel model;
  std::vector<CalibrationRow> rows;
  std::vector<std::string> defaulted_schemes;  // standard schemes with no data
};

/// Staged relative least squares: throughput from the dense rows, then one
/// factor per scheme label present in the data. Whole-network measurements
/// carry no layer counts, so the per-layer overhead is not identifiable here
/// and stays 0. Standard schemes without data receive interpolated defaults.
inline CalibrationResult calibrate_latency_model(
    const std::vector<LatencyMeasurement>& measurements) {
  std::map<std::string, std::vector<const LatencyMeasurement*>> by_scheme;
  for (const auto& m : measurements) {
    std::string label = m.scheme == "dense" ? "none" : m.scheme;
    if (m.macs <= 0.0 || m.latency_ms <= 0.0) {
      throw ConfigError("calibration rows need positive macs and latency");
    }
    by_scheme[label].push_back(&m);
  }
  if (!by_scheme.count("none")) {
    throw CalibrationError("calibration needs at least one dense measurement", {"none"});
  }

  // pred = macs * x * f_scheme with x in ms/MAC and f_none = 1; each stage
  // minimizes the squared relative error sum((pred/t - 1)^2) in closed form.
  double sa = 0.0, saa = 0.0;
  for (const auto* m : by_scheme.at("none")) {
    double a = m->macs / m->latency_ms;
    sa += a;
    saa += a * a;
  }
  const double x = sa / saa;

  CalibrationResult result;
  result.model.device_throughput = 1000.0 / x;
  result.model.per_layer_overhead_ms = 0.0;
  result.model.scheme_factors.clear();
  result.model.scheme_factors["none"] = 1.0;

  for (const auto& [label, rows] : by_scheme) {
    if (label == "none") continue;
    double sq = 0.0, sqq = 0.0;
    for (const auto* m : rows) {
      double q = x * m->macs / m->latency_ms;
      sq += q;
      sqq += q * q;
    }
    double f = sq / sqq;
    if (f < 1.0) {
      log_warn("fitted latency factor for '" + label + "' is " + std::to_string(f) +
               " (< 1, faster per MAC than dense)");
    }
    result.model.scheme_factors[label] = f;
  }

  // Fill the standard schemes that had no measurements.
  auto& factors = result.model.scheme_factors;
  const bool have_f = factors.count("filter"), have_p = factors.count("pattern"),
             have_b = factors.count("block");
  if (!have_b && have_f && have_p) {
    factors["block"] = 0.5 * (factors["filter"] + factors["pattern"]);
    result.defaulted_schemes.push_back("block");
  }
  const std::map<std::string, double> fallback{{"filter", 2.2}, {"block", 2.7}, {"pattern", 3.1}};
  for (const auto& [label, v] : fallback) {
    if (!factors.count(label)) {
      factors[label] = v;
      result.defaulted_schemes.push_back(label);
    }
  }
  if (!result.model.ordering_ok()) {
    log_warn("fitted scheme factors violate the filter <= block <= pattern ordering");
  }

  for (const auto& m : measurements) {
    std::string label = m.scheme == "dense" ? "none" : m.scheme;
    CalibrationRow row;
    row.name = m.name;
    row.scheme = label;
    row.macs = m.macs;
    row.measured_ms = m.latency_ms;
    row.predicted_ms = m.macs * x * factors.at(label);
    row.relative_error = row.predicted_ms / m.latency_ms - 1.0;
    result.rows.push_back(row);
  }
  return result;
}

inline std::vector<LatencyMeasurement> measurements_from_json(const json& j) {
  std::vector<LatencyMeasurement> out;
  if (!j.is_object() || !j.contains("measurements")) {
    throw ConfigError("measurement document must contain a 'measurements' array");
  }
  for (const json& mj : j.at("measurements")) {
    LatencyMeasurement m;
    m.macs = mj.at("macs").get<double>();
    m.scheme = mj.at("scheme").get<std::string>();
    m.latency_ms = mj.at("latency_ms").get<double>();
    m.name = mj.value("name", std::string());
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic accuracy surface
// ---------------------------------------------------------------------------

/// Deterministic stand-in for prune-and-retrain: an additive accuracy
/// surface with per-layer sensitivities, per-(scheme, rate) penalties, and a
/// per-layer skip penalty, clamped to [0, 100].
struct SyntheticBenchmark {
  double base_accuracy = 0.0;
  std::map<std::string, double> sensitivity;              // layer id -> weight
  std::map<std::string, std::map<int, double>> penalties; // scheme -> rate tenths -> penalty
  std::map<std::string, double> skip_penalty;             // layer id -> penalty

  double penalty(Scheme scheme, const Rate& rate) const {
    if (rate.is_one()) return 0.0;
    auto sit = penalties.find(to_string(scheme));
    if (sit == penalties.end()) {
      throw ConfigError(std::string("benchmark has no penalty table for scheme ") +
                        to_string(scheme));
    }
    auto rit = sit->second.find(rate.tenths());
    if (rit == sit->second.end()) {
      throw ConfigError("benchmark has no penalty for rate " + rate.str() + " under scheme " +
                        to_string(scheme));
    }
    return rit->second;
  }

  json to_json() const {
    json pj = json::object();
    for (const auto& [scheme, table] : penalties) {
      json tj = json::object();
      for (const auto& [tenths, v] : table) tj[Rate::from_tenths(tenths).str()] = v;
      pj[scheme] = tj;
    }
    return json{{"base_accuracy", base_accuracy},
                {"sensitivity", sensitivity},
                {"penalties", pj},
                {"skip_penalty", skip_penalty}};
  }

  static SyntheticBenchmark from_json(const json& j) {
    SyntheticBenchmark b;
    b.base_accuracy = j.at("base_accuracy").get<double>();
    for (auto it = j.at("sensitivity").begin(); it != j.at("sensitivity").end(); ++it) {
      b.sensitivity[it.key()] = it.value().get<double>();
    }
    for (auto it = j.at("penalties").begin(); it != j.at("penalties").end(); ++it) {
      auto& table = b.penalties[it.key()];
      for (auto rit = it.value().begin(); rit != it.value().end(); ++rit) {
        double v = 0.0;
        try {
          std::size_t pos = 0;
          v = std::stod(rit.key(), &pos);
          if (pos != rit.key().size()) throw std::invalid_argument(rit.key());
        } catch (const std::exception&) {
          throw ConfigError("bad rate key in penalty table: " + rit.key());
        }
        auto r = Rate::parse(json(v));
        if (!r || r->is_skip()) throw ConfigError("bad rate key in penalty table: " + rit.key());
        table[r->tenths()] = rit.value().get<double>();
      }
    }
    if (j.contains("skip_penalty")) {
      for (auto it = j.at("skip_penalty").begin(); it != j.at("skip_penalty").end(); ++it) {
        b.skip_penalty[it.key()] = it.value().get<double>();
      }
    }
    return b;
  }
};

inline double simulated_accuracy(const PruningProposal& proposal,
                                 const SyntheticBenchmark& benchmark) {
  double acc = benchmark.base_accuracy;
  for (const auto& layer : proposal.network->layers) {
    const LayerAssignment& a = proposal.assignments.at(layer.id);
    if (a.rate.is_skip()) {
      auto it = benchmark.skip_penalty.find(layer.id);
      if (it == benchmark.skip_penalty.end()) {
        throw ConfigError("benchmark has no skip_penalty for layer '" + layer.id + "'");
      }
      acc -= it->second;
      continue;
    }
    auto sit = benchmark.sensitivity.find(layer.id);
    if (sit == benchmark.sensitivity.end()) {
      throw ConfigError("benchmark has no sensitivity for layer '" + layer.id + "'");
    }
    acc -= sit->second * benchmark.penalty(a.scheme, a.rate);
  }
  return std::clamp(acc, 0.0, 100.0);
}

// ---------------------------------------------------------------------------
// Evaluators
// ---------------------------------------------------------------------------

/// A proposal scorer: returns (accuracy, latency_ms). Implementations throw
/// EvaluationError on failure; rewards are attached by evaluate_batch.
class Evaluator {
public:
  virtual ~Evaluator() = default;
  virtual std::pair<double, double> evaluate(const PruningProposal& proposal) = 0;
  virtual std::string kind() const = 0;
};

class SimulatedEvaluator final : public Evaluator {
public:
  SimulatedEvaluator(SyntheticBenchmark benchmark, LatencyModel latency)
      : benchmark_(std::move(benchmark)), latency_(std::move(latency)) {}

  std::pair<double, double> evaluate(const PruningProposal& proposal) override {
    return {simulated_accuracy(proposal, benchmark_), simulate_latency(proposal, latency_)};
  }
  std::string kind() const override { return "simulated"; }

  const SyntheticBenchmark& benchmark() const { return benchmark_; }
  const LatencyModel& latency_model() const { return latency_; }

private:
  SyntheticBenchmark benchmark_;
  LatencyModel latency_;
};

/// Recorded-measurement table keyed by the canonical proposal serialization.
class LookupEvaluator final : public Evaluator {
public:
  struct Entry {
    double accuracy = 0.0;
    double latency_ms = 0.0;
    std::string name;
  };

  explicit LookupEvaluator(std::map<std::string, Entry> table) : table_(std::move(table)) {}

  static LookupEvaluator from_json(const json& j, std::shared_ptr<const NetworkSpec> net) {
    if (!j.is_object() || !j.contains("entries")) {
      throw ConfigError("lookup table document must contain an 'entries' array");
    }
    std::map<std::string, Entry> table;
    for (const json& ej : j.at("entries")) {
      PruningProposal p = PruningProposal::from_json(ej.at("proposal"), net);
      auto violations = validate(p);
      if (!violations.empty()) {
        throw ConfigError("lookup entry '" + ej.value("name", std::string()) +
                          "' has an invalid proposal: " + violations.front().layer_id + ": " +
                          violations.front().reason);
      }
      Entry e;
      e.accuracy = ej.at("accuracy").get<double>();
      e.latency_ms = ej.at("latency_ms").get<double>();
      e.name = ej.value("name", std::string());
      table[p.canonical_key()] = e;
    }
    return LookupEvaluator(std::move(table));
  }

  std::pair<double, double> evaluate(const PruningProposal& proposal) override {
    auto it = table_.find(proposal.canonical_key());
    if (it == table_.end()) {
      throw EvaluationError("proposal not present in the lookup table", 0);
    }
    return {it->second.accuracy, it->second.latency_ms};
  }
  std::string kind() const override { return "lookup"; }

  const std::map<std::string, Entry>& table() const { return table_; }

  /// The fixture name of a proposal, when recorded.
  std::string name_of(const PruningProposal& proposal) const {
    auto it = table_.find(proposal.canonical_key());
    return it == table_.end() ? std::string() : it->second.name;
  }

private:
  std::map<std::string, Entry> table_;
};

/// Scores proposals in order and attaches Eq.-style rewards. Any failure is
/// rethrown as EvaluationError carrying the offending proposal index.
inline std::vector<EvaluationResult> evaluate_batch(Evaluator& evaluator,
                                                    const std::vector<PruningProposal>& proposals,
                                                    const RewardConfig& reward_cfg) {
  std::vector<EvaluationResult> results;
  results.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    try {
      auto [acc, lat] = evaluator.evaluate(proposals[i]);
      results.push_back({acc, lat, reward(acc, lat, reward_cfg)});
    } catch (const EvaluationError& e) {
      throw EvaluationError(e.what(), i);
    } catch (const std::exception& e) {
      throw EvaluationError(e.what(), i);
    }
  }
  return results;
}

}  // namespace prunesearch
