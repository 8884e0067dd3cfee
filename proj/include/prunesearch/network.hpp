#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunesearch/errors.hpp"
#include "prunesearch/rng.hpp"

namespace prunesearch {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Schemes and rates
// ---------------------------------------------------------------------------

enum class Scheme { none, filter, pattern, block };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::none: return "none";
    case Scheme::filter: return "filter";
    case Scheme::pattern: return "pattern";
    case Scheme::block: return "block";
  }
  return "none";
}

inline std::optional<Scheme> scheme_from_string(const std::string& s) {
  if (s == "none") return Scheme::none;
  if (s == "filter") return Scheme::filter;
  if (s == "pattern") return Scheme::pattern;
  if (s == "block") return Scheme::block;
  return std::nullopt;
}

/// A pruning rate: either "skip" (bypass the layer) or an exact decimal
/// compression factor. Stored in tenths so 2.5 is represented and compared
/// exactly.
class Rate {
public:
  static Rate skip() { return Rate(kSkip); }

  static Rate from_tenths(int tenths) {
    if (tenths < 10) throw ConfigError("rate must be >= 1");
    return Rate(tenths);
  }

  static std::optional<Rate> parse(const json& j) {
    if (j.is_string()) {
      if (j.get<std::string>() == "skip") return skip();
      return std::nullopt;
    }
    if (j.is_number()) {
      double v = j.get<double>();
      double tenths = v * 10.0;
      long long t = std::llround(tenths);
      if (t < 10 || std::abs(tenths - static_cast<double>(t)) > 1e-9) return std::nullopt;
      return Rate(static_cast<int>(t));
    }
    return std::nullopt;
  }

  bool is_skip() const { return tenths_ == kSkip; }
  bool is_one() const { return tenths_ == 10; }

  /// Numeric compression factor; invalid for skip.
  double factor() const { return static_cast<double>(tenths_) / 10.0; }
  int tenths() const { return tenths_; }

  std::string str() const {
    if (is_skip()) return "skip";
    if (tenths_ % 10 == 0) return std::to_string(tenths_ / 10);
    return std::to_string(tenths_ / 10) + "." + std::to_string(tenths_ % 10);
  }

  /// JSON form: numeric rates as numbers (whole rates as integers), skip as
  /// the string literal "skip".
  json to_json() const {
    if (is_skip()) return json("skip");
    if (tenths_ % 10 == 0) return json(tenths_ / 10);
    return json(static_cast<double>(tenths_) / 10.0);
  }

  friend bool operator==(const Rate& a, const Rate& b) = default;
  friend auto operator<=>(const Rate& a, const Rate& b) = default;

private:
  static constexpr int kSkip = -1;
  explicit Rate(int tenths) : tenths_(tenths) {}
  int tenths_;
};

/// The rate universe from which per-layer allowed_rates are drawn.
inline const std::vector<Rate>& rate_universe() {
  static const std::vector<Rate> u = {
      Rate::from_tenths(10), Rate::from_tenths(20), Rate::from_tenths(25),
      Rate::from_tenths(30), Rate::from_tenths(50), Rate::from_tenths(70),
      Rate::from_tenths(100), Rate::skip()};
  return u;
}

// ---------------------------------------------------------------------------
// Layers and networks
// ---------------------------------------------------------------------------

struct LayerSpec {
  std::string id;
  std::string layer_type;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
  bool skippable = false;
  std::vector<Scheme> allowed_schemes;  // non-empty subset of {filter, pattern, block}
  std::vector<Rate> allowed_rates;      // non-empty subset of the rate universe

  bool rate_allowed(const Rate& r) const {
    return std::find(allowed_rates.begin(), allowed_rates.end(), r) != allowed_rates.end();
  }
  bool scheme_allowed(Scheme s) const {
    return std::find(allowed_schemes.begin(), allowed_schemes.end(), s) != allowed_schemes.end();
  }
};

/// Ordered description of a network's prunable layers plus connectivity.
/// Edges default to a chain in layer order. The graph must be connected and
/// acyclic; this is checked by validate_or_throw() on load.
struct NetworkSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  std::vector<std::pair<std::string, std::string>> edges;

  const LayerSpec& layer(const std::string& id) const {
    for (const auto& l : layers) {
      if (l.id == id) return l;
    }
    throw ConfigError("unknown layer id: " + id);
  }

  int layer_index(const std::string& id) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].id == id) return static_cast<int>(i);
    }
    return -1;
  }

  /// Edges with the default chain applied when none are given.
  std::vector<std::pair<std::string, std::string>> effective_edges() const {
    if (!edges.empty() || layers.size() < 2) return edges;
    std::vector<std::pair<std::string, std::string>> chain;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
      chain.emplace_back(layers[i].id, layers[i + 1].id);
    }
    return chain;
  }

  std::uint64_t total_macs() const {
    std::uint64_t t = 0;
    for (const auto& l : layers) t += l.macs;
    return t;
  }
  std::uint64_t total_params() const {
    std::uint64_t t = 0;
    for (const auto& l : layers) t += l.params;
    return t;
  }

  void validate_or_throw() const;
};

// ---------------------------------------------------------------------------
// Assignments and proposals
// ---------------------------------------------------------------------------

/// Per-layer (scheme, rate) choice. Canonical form: scheme is "none" exactly
/// when the rate is 1x or skip, so semantically identical assignments have a
/// single representation.
struct LayerAssignment {
  Scheme scheme = Scheme::none;
  Rate rate = Rate::from_tenths(10);

  static LayerAssignment unpruned() { return {Scheme::none, Rate::from_tenths(10)}; }
  static LayerAssignment skipped() { return {Scheme::none, Rate::skip()}; }

  bool canonical() const {
    const bool trivial_rate = rate.is_skip() || rate.is_one();
    return trivial_rate == (scheme == Scheme::none);
  }

  friend bool operator==(const LayerAssignment& a, const LayerAssignment& b) = default;
  friend auto operator<=>(const LayerAssignment& a, const LayerAssignment& b) = default;
};

/// All (scheme, rate) pairs a layer admits, in a fixed deterministic order:
/// (none,1) first if rate 1 is allowed, then schemes x numeric rates, then
/// (none,skip) last.
inline std::vector<LayerAssignment> valid_options(const LayerSpec& layer) {
  std::vector<LayerAssignment> opts;
  if (layer.rate_allowed(Rate::from_tenths(10))) opts.push_back(LayerAssignment::unpruned());
  static const Scheme kSchemeOrder[] = {Scheme::filter, Scheme::pattern, Scheme::block};
  for (Scheme s : kSchemeOrder) {
    if (!layer.scheme_allowed(s)) continue;
    for (const Rate& r : layer.allowed_rates) {
      if (r.is_skip() || r.is_one()) continue;
      opts.push_back({s, r});
    }
  }
  if (layer.skippable && layer.rate_allowed(Rate::skip())) {
    opts.push_back(LayerAssignment::skipped());
  }
  return opts;
}

/// A complete per-layer assignment for one network; the search point.
/// Value semantics: proposals with identical assignments compare equal.
struct PruningProposal {
  std::shared_ptr<const NetworkSpec> network;
  std::map<std::string, LayerAssignment> assignments;

  bool is_skipped(const std::string& layer_id) const {
    auto it = assignments.find(layer_id);
    return it != assignments.end() && it->second.rate.is_skip();
  }

  friend bool operator==(const PruningProposal& a, const PruningProposal& b) {
    return a.assignments == b.assignments;
  }

  json to_json() const {
    json j = json::object();
    for (const auto& [id, a] : assignments) {
      j[id] = json{{"scheme", to_string(a.scheme)}, {"rate", a.rate.to_json()}};
    }
    return j;
  }

  /// Deterministic string key; used for dedup and as the lookup-table key.
  std::string canonical_key() const { return to_json().dump(); }

  static PruningProposal from_json(const json& j, std::shared_ptr<const NetworkSpec> net) {
    if (!j.is_object()) throw ConfigError("proposal must be a JSON object");
    PruningProposal p;
    p.network = std::move(net);
    for (auto it = j.begin(); it != j.end(); ++it) {
      const json& entry = it.value();
      if (!entry.is_object() || !entry.contains("scheme") || !entry.contains("rate")) {
        throw ConfigError("proposal entry for layer '" + it.key() +
                          "' must be {scheme, rate}");
      }
      auto scheme = scheme_from_string(entry.at("scheme").get<std::string>());
      if (!scheme) throw ConfigError("unknown scheme in proposal for layer '" + it.key() + "'");
      auto rate = Rate::parse(entry.at("rate"));
      if (!rate) throw ConfigError("unknown rate in proposal for layer '" + it.key() + "'");
      p.assignments[it.key()] = LayerAssignment{*scheme, *rate};
    }
    return p;
  }
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct Violation {
  std::string layer_id;
  std::string reason;
};

/// Checks every proposal invariant. Violations are data, not failures: an
/// empty result means the proposal is valid.
inline std::vector<Violation> validate(const PruningProposal& proposal) {
  std::vector<Violation> out;
  if (!proposal.network) {
    out.push_back({"", "proposal has no network"});
    return out;
  }
  const NetworkSpec& net = *proposal.network;
  for (const auto& layer : net.layers) {
    auto it = proposal.assignments.find(layer.id);
    if (it == proposal.assignments.end()) {
      out.push_back({layer.id, "layer has no assignment"});
      continue;
    }
    const LayerAssignment& a = it->second;
    if (!a.canonical()) {
      if (a.scheme == Scheme::none) {
        out.push_back({layer.id, "scheme required for pruned layer"});
      } else {
        out.push_back({layer.id, "scheme must be none for rate 1x/skip"});
      }
    }
    if (a.rate.is_skip()) {
      if (!layer.skippable) out.push_back({layer.id, "layer is not skippable"});
      if (!layer.rate_allowed(Rate::skip())) {
        out.push_back({layer.id, "rate skip not in allowed_rates"});
      }
      continue;
    }
    if (!layer.rate_allowed(a.rate)) {
      out.push_back({layer.id, "rate " + a.rate.str() + " not in allowed_rates"});
    }
    if (a.scheme != Scheme::none && !layer.scheme_allowed(a.scheme)) {
      out.push_back({layer.id,
                     std::string("scheme ") + to_string(a.scheme) + " not in allowed_schemes"});
    }
  }
  for (const auto& [id, a] : proposal.assignments) {
    if (net.layer_index(id) < 0) out.push_back({id, "assignment for unknown layer"});
  }
  return out;
}

/// Uniform draw over each layer's valid option set. Deterministic under a
/// fixed seed; throws ConfigError on a layer with no valid options.
inline PruningProposal random_proposal(std::shared_ptr<const NetworkSpec> network, Rng& rng) {
  PruningProposal p;
  p.network = network;
  for (const auto& layer : network->layers) {
    auto opts = valid_options(layer);
    if (opts.empty()) {
      throw ConfigError("layer '" + layer.id + "' has an empty valid option set");
    }
    p.assignments[layer.id] = opts[rng.next_below(opts.size())];
  }
  return p;
}

// ---------------------------------------------------------------------------
// Graph encoding
// ---------------------------------------------------------------------------

/// Labeled graph of the non-skipped layers. Skipped layers are contracted:
/// their predecessors connect directly to their successors, so a bypassed
/// layer contributes no structure.
struct ProposalGraph {
  struct Node {
    std::string label;     // layer_type|scheme|rate
    std::string layer_id;  // source layer; used for gradient attribution
  };
  std::vector<Node> nodes;
  std::vector<std::pair<int, int>> edges;  // sorted, deduplicated

  bool empty() const { return nodes.empty(); }

  /// Byte-deterministic serialization; equal proposals produce identical
  /// strings.
  std::string canonical_string() const {
    std::string s;
    for (const auto& n : nodes) {
      s += n.label;
      s += ';';
    }
    s += '|';
    for (const auto& [a, b] : edges) {
      s += std::to_string(a);
      s += '-';
      s += std::to_string(b);
      s += ';';
    }
    return s;
  }

  friend bool operator==(const ProposalGraph& a, const ProposalGraph& b) {
    if (a.edges != b.edges || a.nodes.size() != b.nodes.size()) return false;
    for (std::size_t i = 0; i < a.nodes.size(); ++i) {
      if (a.nodes[i].label != b.nodes[i].label) return false;
    }
    return true;
  }
};

inline ProposalGraph encode_graph(const PruningProposal& proposal) {
  const NetworkSpec& net = *proposal.network;
  const std::size_t n = net.layers.size();

  std::vector<bool> skipped(n, false);
  for (std::size_t i = 0; i < n; ++i) skipped[i] = proposal.is_skipped(net.layers[i].id);

  std::vector<std::set<int>> succ(n), pred(n);
  for (const auto& [from, to] : net.effective_edges()) {
    int a = net.layer_index(from);
    int b = net.layer_index(to);
    succ[a].insert(b);
    pred[b].insert(a);
  }

  // Contract skipped nodes in layer order: bridge every predecessor to every
  // successor, then detach the node.
  for (std::size_t i = 0; i < n; ++i) {
    if (!skipped[i]) continue;
    int v = static_cast<int>(i);
    for (int p : pred[v]) {
      for (int q : succ[v]) {
        succ[p].insert(q);
        pred[q].insert(p);
      }
    }
    for (int p : pred[v]) succ[p].erase(v);
    for (int q : succ[v]) pred[q].erase(v);
    pred[v].clear();
    succ[v].clear();
  }

  ProposalGraph g;
  std::vector<int> new_index(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (skipped[i]) continue;
    const LayerSpec& layer = net.layers[i];
    const LayerAssignment& a = proposal.assignments.at(layer.id);
    new_index[i] = static_cast<int>(g.nodes.size());
    g.nodes.push_back({layer.layer_type + "|" + to_string(a.scheme) + "|" + a.rate.str(),
                       layer.id});
  }
  if (g.nodes.empty()) throw EncodeError("all layers skipped; proposal encodes to an empty graph");

  std::set<std::pair<int, int>> edge_set;
  for (std::size_t i = 0; i < n; ++i) {
    if (skipped[i]) continue;
    for (int q : succ[i]) {
      edge_set.emplace(new_index[i], new_index[q]);
    }
  }
  g.edges.assign(edge_set.begin(), edge_set.end());

  // Connectivity check (undirected): a skip must not split the network.
  if (g.nodes.size() > 1) {
    std::vector<std::vector<int>> adj(g.nodes.size());
    for (const auto& [a, b] : g.edges) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    std::vector<bool> seen(g.nodes.size(), false);
    std::vector<int> stack{0};
    seen[0] = true;
    std::size_t visited = 1;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int w : adj[v]) {
        if (!seen[w]) {
          seen[w] = true;
          ++visited;
          stack.push_back(w);
        }
      }
    }
    if (visited != g.nodes.size()) {
      throw EncodeError("skip contraction disconnects the network");
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Proposal statistics
// ---------------------------------------------------------------------------

struct ProposalStats {
  double remaining_params = 0.0;
  double remaining_macs = 0.0;
};

/// Uniform 1/r compression model: a skipped layer contributes nothing, a
/// layer pruned at rate r keeps params/r and macs/r.
inline ProposalStats proposal_stats(const PruningProposal& proposal) {
  ProposalStats s;
  for (const auto& layer : proposal.network->layers) {
    const LayerAssignment& a = proposal.assignments.at(layer.id);
    if (a.rate.is_skip()) continue;
    s.remaining_params += static_cast<double>(layer.params) / a.rate.factor();
    s.remaining_macs += static_cast<double>(layer.macs) / a.rate.factor();
  }
  return s;
}

// ---------------------------------------------------------------------------
// Network JSON
// ---------------------------------------------------------------------------

inline void NetworkSpec::validate_or_throw() const {
  if (layers.empty()) throw ConfigError("network '" + name + "' has no layers");
  std::set<std::string> ids;
  for (const auto& l : layers) {
    if (!ids.insert(l.id).second) throw ConfigError("duplicate layer id: " + l.id);
    if (l.allowed_schemes.empty()) {
      throw ConfigError("layer '" + l.id + "': allowed_schemes must be non-empty");
    }
    for (Scheme s : l.allowed_schemes) {
      if (s == Scheme::none) {
        throw ConfigError("layer '" + l.id + "': 'none' is implicit, not an allowed scheme");
      }
    }
    if (l.allowed_rates.empty()) {
      throw ConfigError("layer '" + l.id + "': allowed_rates must be non-empty");
    }
    if (l.rate_allowed(Rate::skip()) && !l.skippable) {
      throw ConfigError("layer '" + l.id + "': rate skip requires skippable=true");
    }
  }
  const auto eff = effective_edges();
  for (const auto& [a, b] : eff) {
    if (layer_index(a) < 0) throw ConfigError("edge endpoint names unknown layer: " + a);
    if (layer_index(b) < 0) throw ConfigError("edge endpoint names unknown layer: " + b);
  }
  const std::size_t n = layers.size();
  // Acyclicity via Kahn's algorithm.
  std::vector<int> indeg(n, 0);
  std::vector<std::vector<int>> succ(n);
  for (const auto& [a, b] : eff) {
    succ[layer_index(a)].push_back(layer_index(b));
    ++indeg[layer_index(b)];
  }
  std::vector<int> queue;
  for (std::size_t i = 0; i < n; ++i) {
    if (indeg[i] == 0) queue.push_back(static_cast<int>(i));
  }
  std::size_t processed = 0;
  while (!queue.empty()) {
    int v = queue.back();
    queue.pop_back();
    ++processed;
    for (int w : succ[v]) {
      if (--indeg[w] == 0) queue.push_back(w);
    }
  }
  if (processed != n) throw ConfigError("network '" + name + "' contains a cycle");
  // Connectivity (undirected).
  if (n > 1) {
    std::vector<std::vector<int>> adj(n);
    for (const auto& [a, b] : eff) {
      adj[layer_index(a)].push_back(layer_index(b));
      adj[layer_index(b)].push_back(layer_index(a));
    }
    std::vector<bool> seen(n, false);
    std::vector<int> stack{0};
    seen[0] = true;
    std::size_t visited = 1;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int w : adj[v]) {
        if (!seen[w]) {
          seen[w] = true;
          ++visited;
          stack.push_back(w);
        }
      }
    }
    if (visited != n) throw ConfigError("network '" + name + "' is not connected");
  }
}

inline json to_json(const NetworkSpec& net) {
  json layers = json::array();
  for (const auto& l : net.layers) {
    json schemes = json::array();
    for (Scheme s : l.allowed_schemes) schemes.push_back(to_string(s));
    json rates = json::array();
    for (const Rate& r : l.allowed_rates) rates.push_back(r.to_json());
    layers.push_back(json{{"id", l.id},
                          {"layer_type", l.layer_type},
                          {"macs", l.macs},
                          {"params", l.params},
                          {"skippable", l.skippable},
                          {"allowed_schemes", schemes},
                          {"allowed_rates", rates}});
  }
  json j{{"name", net.name}, {"layers", layers}};
  if (!net.edges.empty()) {
    json edges = json::array();
    for (const auto& [a, b] : net.edges) edges.push_back(json::array({a, b}));
    j["edges"] = edges;
  }
  return j;
}

inline NetworkSpec network_from_json(const json& j) {
  if (!j.is_object() || !j.contains("name") || !j.contains("layers")) {
    throw ConfigError("network document must contain 'name' and 'layers'");
  }
  NetworkSpec net;
  net.name = j.at("name").get<std::string>();
  for (const json& lj : j.at("layers")) {
    LayerSpec l;
    l.id = lj.at("id").get<std::string>();
    l.layer_type = lj.at("layer_type").get<std::string>();
    l.macs = lj.value("macs", std::uint64_t{0});
    l.params = lj.value("params", std::uint64_t{0});
    l.skippable = lj.value("skippable", false);
    for (const json& sj : lj.at("allowed_schemes")) {
      auto s = scheme_from_string(sj.get<std::string>());
      if (!s) throw ConfigError("layer '" + l.id + "': unknown scheme " + sj.dump());
      l.allowed_schemes.push_back(*s);
    }
    for (const json& rj : lj.at("allowed_rates")) {
      auto r = Rate::parse(rj);
      if (!r) throw ConfigError("layer '" + l.id + "': unknown rate " + rj.dump());
      const auto& universe = rate_universe();
      if (std::find(universe.begin(), universe.end(), *r) == universe.end()) {
        throw ConfigError("layer '" + l.id + "': rate " + r->str() + " outside the rate list");
      }
      l.allowed_rates.push_back(*r);
    }
    net.layers.push_back(std::move(l));
  }
  if (j.contains("edges")) {
    for (const json& ej : j.at("edges")) {
      net.edges.emplace_back(ej.at(0).get<std::string>(), ej.at(1).get<std::string>());
    }
  }
  net.validate_or_throw();
  return net;
}

}  // namespace prunesearch
