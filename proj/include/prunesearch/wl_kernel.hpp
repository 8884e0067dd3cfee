#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prunesearch/errors.hpp"
#include "prunesearch/network.hpp"

namespace prunesearch {

// ---------------------------------------------------------------------------
// Weisfeiler-Lehman subtree features
// ---------------------------------------------------------------------------

/// Sparse count vector of WL subtree labels, summed over refinement
/// iterations 0..h. Keys are canonical strings "<iteration>:<label>", where
/// the label is the full uncompressed relabeling string, so feature maps are
/// comparable across runs and serializable.
struct WlFeatureMap {
  std::map<std::string, double> counts;
  int h = 0;

  /// key_per_node[i][t] is the feature key node i generated at iteration t.
  /// Needed to attribute predictive-mean gradients back to layers.
  std::vector<std::vector<std::string>> keys_per_node;

  double dot(const WlFeatureMap& other) const {
    // Iterate the smaller map against the larger.
    const auto& a = counts.size() <= other.counts.size() ? counts : other.counts;
    const auto& b = counts.size() <= other.counts.size() ? other.counts : counts;
    double acc = 0.0;
    for (const auto& [k, v] : a) {
      auto it = b.find(k);
      if (it != b.end()) acc += v * it->second;
    }
    return acc;
  }

  double self_dot() const {
    double acc = 0.0;
    for (const auto& [k, v] : counts) acc += v * v;
    return acc;
  }

  json to_json() const {
    json j{{"h", h}, {"counts", json::object()}};
    for (const auto& [k, v] : counts) j["counts"][k] = v;
    return j;
  }
};

struct KernelConfig {
  int h = 2;                     // WL refinement iterations
  bool normalize = true;         // cosine-normalize raw dot products
  double signal_variance = 1.0;  // scale hyperparameter, > 0
};

/// Standard WL relabeling: each node's next label is its current label plus
/// the sorted multiset of neighbor labels. Counts are accumulated for all
/// labels across iterations 0..h. Neighbors are taken in the undirected
/// sense.
inline WlFeatureMap wl_features(const ProposalGraph& g, int h) {
  WlFeatureMap fm;
  fm.h = h;
  const std::size_t n = g.nodes.size();
  fm.keys_per_node.resize(n);

  std::vector<std::vector<int>> adj(n);
  for (const auto& [a, b] : g.edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }

  std::vector<std::string> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = g.nodes[i].label;

  for (int iter = 0; iter <= h; ++iter) {
    if (iter > 0) {
      std::vector<std::string> next(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::string> neigh;
        neigh.reserve(adj[i].size());
        for (int w : adj[i]) neigh.push_back(labels[w]);
        std::sort(neigh.begin(), neigh.end());
        std::string s = labels[i];
        s += '(';
        for (std::size_t k = 0; k < neigh.size(); ++k) {
          if (k > 0) s += ',';
          s += neigh[k];
        }
        s += ')';
        next[i] = std::move(s);
      }
      labels = std::move(next);
    }
    const std::string prefix = std::to_string(iter) + ":";
    for (std::size_t i = 0; i < n; ++i) {
      std::string key = prefix + labels[i];
      fm.counts[key] += 1.0;
      fm.keys_per_node[i].push_back(std::move(key));
    }
  }
  return fm;
}

// ---------------------------------------------------------------------------
// Kernel values
// ---------------------------------------------------------------------------

/// Kernel on precomputed feature maps. Raw value is the dot product of
/// counts; normalization divides by sqrt(self1 * self2); the result is
/// scaled by signal_variance.
inline double kernel_from_features(const WlFeatureMap& f1, const WlFeatureMap& f2,
                                   const KernelConfig& cfg) {
  double raw = f1.dot(f2);
  if (cfg.normalize) {
    raw /= std::sqrt(f1.self_dot() * f2.self_dot());
  }
  return cfg.signal_variance * raw;
}

inline double kernel(const ProposalGraph& g1, const ProposalGraph& g2, const KernelConfig& cfg) {
  if (g1.empty() || g2.empty()) throw EncodeError("kernel requires non-empty graphs");
  return kernel_from_features(wl_features(g1, cfg.h), wl_features(g2, cfg.h), cfg);
}

/// Symmetric Gram matrix; each pair is computed exactly once.
inline Eigen::MatrixXd gram_matrix(const std::vector<ProposalGraph>& graphs,
                                   const KernelConfig& cfg) {
  const std::size_t n = graphs.size();
  std::vector<WlFeatureMap> features;
  features.reserve(n);
  for (const auto& g : graphs) {
    if (g.empty()) throw EncodeError("gram_matrix requires non-empty graphs");
    features.push_back(wl_features(g, cfg.h));
  }
  Eigen::MatrixXd K(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double v = kernel_from_features(features[i], features[j], cfg);
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

}  // namespace prunesearch
