#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "prunesearch/errors.hpp"
#include "prunesearch/gp.hpp"
#include "prunesearch/log.hpp"
#include "prunesearch/network.hpp"
#include "prunesearch/rng.hpp"

namespace prunesearch {

/// Normalized per-layer distribution guiding mutation; covers the
/// non-skipped layers of the reference proposal.
struct ReplacementProbabilities {
  std::map<std::string, double> probs;
};

struct ControllerConfig {
  int pool_size = 200;
  double random_fraction = 0.1;
  /// Scale c for per-node Bernoulli replacement, replace with min(1, c*p).
  /// 0 means auto: c = node count, giving ~1 expected replacement per
  /// mutation regardless of depth.
  double per_node_replace_scale = 0.0;
};

inline double logistic(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// Sigmoid of the negated gradients, normalized to a distribution: nodes
/// whose presence hurts the predicted reward get high replacement
/// probability.
inline ReplacementProbabilities replacement_probabilities(const NodeGradients& gradients) {
  if (gradients.by_layer.empty()) {
    throw ConfigError("replacement_probabilities requires at least one node gradient");
  }
  ReplacementProbabilities out;
  double total = 0.0;
  for (const auto& [layer, g] : gradients.by_layer) {
    double p = logistic(-g);
    out.probs[layer] = p;
    total += p;
  }
  for (auto& [layer, p] : out.probs) p /= total;
  return out;
}

namespace detail {

/// The two layers of the reference proposal with the lowest replacement
/// probabilities (ties broken by network layer order); their assignments are
/// the donor values for replacements.
inline std::vector<std::string> donor_layers(const ReplacementProbabilities& probs,
                                             const NetworkSpec& net) {
  std::vector<std::string> ids;
  for (const auto& layer : net.layers) {
    if (probs.probs.count(layer.id)) ids.push_back(layer.id);
  }
  std::stable_sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
    return probs.probs.at(a) < probs.probs.at(b);
  });
  if (ids.size() > 2) ids.resize(2);
  return ids;
}

inline bool option_valid_for(const LayerSpec& layer, const LayerAssignment& a) {
  auto opts = valid_options(layer);
  return std::find(opts.begin(), opts.end(), a) != opts.end();
}

}  // namespace detail

/// One guided mutation of `best`. Each node is replaced independently with
/// probability min(1, c*p); a replaced node takes the assignment of one of
/// the two most-kept layers when valid for it, otherwise a uniform draw from
/// its own option set. If no node got replaced, one node sampled from the
/// distribution is force-replaced so the result is not a guaranteed
/// duplicate of `best`.
inline PruningProposal mutate(const PruningProposal& best, const ReplacementProbabilities& probs,
                              const ControllerConfig& cfg, Rng& rng) {
  const NetworkSpec& net = *best.network;
  PruningProposal out = best;

  std::vector<std::string> node_ids;
  std::vector<double> node_probs;
  for (const auto& layer : net.layers) {
    auto it = probs.probs.find(layer.id);
    if (it == probs.probs.end()) continue;  // skipped in best: not a node
    node_ids.push_back(layer.id);
    node_probs.push_back(it->second);
  }
  if (node_ids.empty()) throw ConfigError("mutate requires a non-empty probability map");

  const double c = cfg.per_node_replace_scale > 0.0 ? cfg.per_node_replace_scale
                                                    : static_cast<double>(node_ids.size());
  const auto donors = detail::donor_layers(probs, net);

  auto replace_node = [&](const std::string& layer_id) {
    const LayerSpec& layer = net.layer(layer_id);
    std::vector<LayerAssignment> candidates;
    for (const auto& donor_id : donors) {
      LayerAssignment donor = best.assignments.at(donor_id);
      if (detail::option_valid_for(layer, donor)) candidates.push_back(donor);
    }
    if (candidates.empty()) {
      candidates = valid_options(layer);
    }
    out.assignments[layer_id] = candidates[rng.next_below(candidates.size())];
  };

  bool any_replaced = false;
  for (std::size_t i = 0; i < node_ids.size(); ++i) {
    double p = std::min(1.0, c * node_probs[i]);
    if (rng.bernoulli(p)) {
      replace_node(node_ids[i]);
      any_replaced = true;
    }
  }
  if (!any_replaced) {
    replace_node(node_ids[rng.pick_weighted(node_probs)]);
  }
  return out;
}

/// Candidate pool for one search iteration: ceil(random_fraction*pool_size)
/// random proposals plus guided mutations of `best`, deduplicated against
/// each other and against `best`. Without probabilities (first iteration)
/// the whole pool is random. Slots that still collide after 10 re-draws are
/// admitted with a warning.
inline std::vector<PruningProposal> generate_pool(
    const PruningProposal& best, const std::optional<ReplacementProbabilities>& probs,
    std::shared_ptr<const NetworkSpec> network, const ControllerConfig& cfg, Rng& rng) {
  if (cfg.pool_size < 1) throw ConfigError("pool_size must be >= 1");
  const int n_random_target =
      probs ? static_cast<int>(std::ceil(cfg.random_fraction * cfg.pool_size)) : cfg.pool_size;

  std::vector<PruningProposal> pool;
  std::set<std::string> seen;
  seen.insert(best.canonical_key());

  auto draw_one = [&](bool random_slot) {
    for (int attempt = 0; attempt < 10; ++attempt) {
      PruningProposal p =
          random_slot ? random_proposal(network, rng) : mutate(best, *probs, cfg, rng);
      try {
        encode_graph(p);  // rejects all-skip / disconnecting proposals
      } catch (const EncodeError&) {
        continue;
      }
      const bool fresh = seen.insert(p.canonical_key()).second;
      if (!fresh && attempt < 9) continue;
      if (!fresh) log_warn("pool slot admitted a duplicate proposal after 10 draws");
      pool.push_back(std::move(p));
      return;
    }
    log_warn("pool slot dropped: no encodable proposal in 10 draws");
  };

  for (int i = 0; i < cfg.pool_size; ++i) {
    draw_one(i < n_random_target);
  }
  return pool;
}

}  // namespace prunesearch
