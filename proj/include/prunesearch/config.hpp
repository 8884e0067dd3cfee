#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunesearch/controller.hpp"
#include "prunesearch/errors.hpp"
#include "prunesearch/evaluator.hpp"
#include "prunesearch/external_evaluator.hpp"
#include "prunesearch/network.hpp"
#include "prunesearch/wl_kernel.hpp"

namespace prunesearch {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read file: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("invalid JSON in file: " + path.string());
  return j;
}

/// Evaluator selection with all referenced content resolved inline, so a
/// state file fully describes how to rebuild its evaluator.
///   simulated: payload {"benchmark": {...}, "latency_model": {...}}
///   lookup:    payload {"table": {...}}
///   external:  payload {"command": [...], "timeout_s": N}
struct EvaluatorSpec {
  std::string kind;
  json payload;
};

/// A fully resolved search configuration: the network document and evaluator
/// fixtures are embedded, which makes the fingerprint cover everything the
/// run depends on.
struct ResolvedConfig {
  json network_json;
  RewardConfig reward;
  KernelConfig kernel;
  double noise_variance = 1e-6;
  ControllerConfig controller;
  int batch_size = 8;
  int max_evaluations = 0;
  int init_random_evaluations = 0;  // 0: auto, 2 * batch_size
  std::uint64_t seed = 0;
  double xi = 0.01;  // EI exploration margin, standardized units
  EvaluatorSpec evaluator;

  int effective_init_random() const {
    return init_random_evaluations > 0 ? init_random_evaluations : 2 * batch_size;
  }

  void validate_or_throw() const {
    reward.validate_or_throw();
    if (kernel.h < 0) throw ConfigError("kernel h must be >= 0");
    if (kernel.signal_variance <= 0.0) throw ConfigError("signal_variance must be > 0");
    if (noise_variance < 0.0) throw ConfigError("noise_variance must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (controller.pool_size < 1) throw ConfigError("pool_size must be >= 1");
    if (controller.random_fraction < 0.0 || controller.random_fraction > 1.0) {
      throw ConfigError("random_fraction must be in [0, 1]");
    }
    if (effective_init_random() < 1) throw ConfigError("init_random_evaluations must be >= 1");
    if (max_evaluations < effective_init_random()) {
      throw ConfigError("max_evaluations must be >= init_random_evaluations");
    }
    if (xi < 0.0) throw ConfigError("xi must be >= 0");
  }

  json to_json() const {
    return json{{"network", network_json},
                {"reward", {{"alpha", reward.alpha}, {"latency_budget_ms", reward.latency_budget_ms}}},
                {"kernel",
                 {{"h", kernel.h},
                  {"normalize", kernel.normalize},
                  {"signal_variance", kernel.signal_variance},
                  {"noise_variance", noise_variance}}},
                {"controller",
                 {{"pool_size", controller.pool_size},
                  {"random_fraction", controller.random_fraction},
                  {"per_node_replace_scale", controller.per_node_replace_scale}}},
                {"search",
                 {{"batch_size", batch_size},
                  {"max_evaluations", max_evaluations},
                  {"init_random_evaluations", init_random_evaluations},
                  {"seed", seed},
                  {"xi", xi}}},
                {"evaluator", {{"kind", evaluator.kind}, {"payload", evaluator.payload}}}};
  }

  static ResolvedConfig from_json(const json& j) {
    ResolvedConfig c;
    c.network_json = j.at("network");
    const json& rj = j.at("reward");
    c.reward.alpha = rj.at("alpha").get<double>();
    c.reward.latency_budget_ms = rj.at("latency_budget_ms").get<double>();
    const json& kj = j.at("kernel");
    c.kernel.h = kj.value("h", 2);
    c.kernel.normalize = kj.value("normalize", true);
    c.kernel.signal_variance = kj.value("signal_variance", 1.0);
    c.noise_variance = kj.value("noise_variance", 1e-6);
    const json& cj = j.at("controller");
    c.controller.pool_size = cj.value("pool_size", 200);
    c.controller.random_fraction = cj.value("random_fraction", 0.1);
    c.controller.per_node_replace_scale = cj.value("per_node_replace_scale", 0.0);
    const json& sj = j.at("search");
    c.batch_size = sj.value("batch_size", 8);
    c.max_evaluations = sj.at("max_evaluations").get<int>();
    c.init_random_evaluations = sj.value("init_random_evaluations", 0);
    c.seed = sj.value("seed", std::uint64_t{0});
    c.xi = sj.value("xi", 0.01);
    c.evaluator.kind = j.at("evaluator").at("kind").get<std::string>();
    c.evaluator.payload = j.at("evaluator").at("payload");
    c.validate_or_throw();
    return c;
  }

  /// Content hash over the canonical serialization (nlohmann objects are
  /// key-sorted, so the dump is deterministic).
  std::string fingerprint() const { return hex64(fnv1a64(to_json().dump())); }

  std::shared_ptr<const NetworkSpec> network() const {
    auto net = std::make_shared<NetworkSpec>(network_from_json(network_json));
    return net;
  }
};

inline std::unique_ptr<Evaluator> make_evaluator(const EvaluatorSpec& spec,
                                                 std::shared_ptr<const NetworkSpec> network) {
  if (spec.kind == "simulated") {
    return std::make_unique<SimulatedEvaluator>(
        SyntheticBenchmark::from_json(spec.payload.at("benchmark")),
        LatencyModel::from_json(spec.payload.at("latency_model")));
  }
  if (spec.kind == "lookup") {
    return std::make_unique<LookupEvaluator>(
        LookupEvaluator::from_json(spec.payload.at("table"), std::move(network)));
  }
  if (spec.kind == "external") {
    std::vector<std::string> command;
    for (const json& c : spec.payload.at("command")) command.push_back(c.get<std::string>());
    return std::make_unique<ExternalEvaluator>(std::move(command),
                                               spec.payload.value("timeout_s", 3600.0));
  }
  throw ConfigError("unknown evaluator kind: " + spec.kind);
}

/// Loads a user-facing config file. File references (network, benchmark,
/// latency model, lookup table) are resolved relative to the config file's
/// directory and embedded. PRUNESEARCH_SEED overrides the seed.
inline ResolvedConfig load_run_config(const std::filesystem::path& config_path) {
  json j = read_json_file(config_path);
  const auto base = config_path.parent_path();
  auto resolve = [&](const json& v) -> json {
    if (v.is_string()) return read_json_file(base / v.get<std::string>());
    return v;  // already inline
  };

  json resolved = j;
  if (!j.contains("network")) throw ConfigError("config is missing 'network'");
  resolved["network"] = resolve(j.at("network"));

  if (!j.contains("evaluator") || !j.at("evaluator").contains("kind")) {
    throw ConfigError("config is missing 'evaluator.kind'");
  }
  json ev = j.at("evaluator");
  const std::string kind = ev.at("kind").get<std::string>();
  json payload = json::object();
  if (kind == "simulated") {
    payload["benchmark"] = resolve(ev.at("benchmark"));
    payload["latency_model"] = resolve(ev.at("latency_model"));
  } else if (kind == "lookup") {
    payload["table"] = resolve(ev.at("table"));
  } else if (kind == "external") {
    payload["command"] = ev.at("command");
    if (ev.contains("timeout_s")) payload["timeout_s"] = ev.at("timeout_s");
  } else {
    throw ConfigError("unknown evaluator kind: " + kind);
  }
  resolved["evaluator"] = json{{"kind", kind}, {"payload", payload}};

  if (!resolved.contains("kernel")) resolved["kernel"] = json::object();
  if (!resolved.contains("controller")) resolved["controller"] = json::object();

  if (const char* seed_env = std::getenv("PRUNESEARCH_SEED")) {
    resolved["search"]["seed"] = static_cast<std::uint64_t>(std::stoull(seed_env));
  }
  return ResolvedConfig::from_json(resolved);
}

}  // namespace prunesearch
