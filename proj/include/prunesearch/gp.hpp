#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "prunesearch/errors.hpp"
#include "prunesearch/log.hpp"
#include "prunesearch/network.hpp"
#include "prunesearch/wl_kernel.hpp"

namespace prunesearch {

inline double std_normal_pdf(double z) {
  static const double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

struct Observation {
  PruningProposal proposal;
  double accuracy = 0.0;    // mAP, percentage points
  double latency_ms = 0.0;
  double reward = 0.0;
};

// ---------------------------------------------------------------------------
// Surrogate model
// ---------------------------------------------------------------------------

/// Fitted GP state over WL-encoded proposals. Rewards are standardized to
/// zero mean / unit variance before solving; weights satisfy
/// (K + sigma^2 I) w = y_std to relative residual <= 1e-8.
struct SurrogateModel {
  KernelConfig kernel_cfg;
  double noise_variance = 1e-6;  // effective jitter used by the solve
  std::vector<ProposalGraph> train_graphs;
  std::vector<WlFeatureMap> train_features;
  Eigen::VectorXd train_rewards_standardized;
  double reward_mean = 0.0;
  double reward_std = 1.0;
  Eigen::VectorXd weights;
  Eigen::LLT<Eigen::MatrixXd> factor;  // of K + sigma^2 I

  std::size_t size() const { return train_graphs.size(); }
};

namespace detail {

inline WlFeatureMap query_features(const SurrogateModel& model, const PruningProposal& proposal) {
  return wl_features(encode_graph(proposal), model.kernel_cfg.h);
}

inline Eigen::VectorXd kernel_vector(const SurrogateModel& model, const WlFeatureMap& f) {
  Eigen::VectorXd k(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    k(i) = kernel_from_features(f, model.train_features[i], model.kernel_cfg);
  }
  return k;
}

/// Standardized predictive mean and variance.
inline std::pair<double, double> predict_standardized(const SurrogateModel& model,
                                                      const WlFeatureMap& f) {
  Eigen::VectorXd k_star = kernel_vector(model, f);
  double mu = k_star.dot(model.weights);
  double k_self = kernel_from_features(f, f, model.kernel_cfg);
  Eigen::VectorXd v = model.factor.solve(k_star);
  double var = k_self - k_star.dot(v);
  if (var < 0.0) {
    if (var < -1e-8) {
      log_warn("predictive variance " + std::to_string(var) + " clamped to 0");
    }
    var = 0.0;
  }
  return {mu, var};
}

}  // namespace detail

/// Fits the GP. `noise` is the observation jitter sigma^2; on factorization
/// failure (or a residual above 1e-8) the jitter escalates through
/// 1e-6 -> 1e-4 -> 1e-2 before giving up.
inline SurrogateModel fit(const std::vector<Observation>& observations, const KernelConfig& cfg,
                          double noise = 1e-6) {
  if (observations.empty()) throw FitError("fit requires at least one observation");
  if (cfg.signal_variance <= 0.0) throw FitError("signal_variance must be positive");
  if (noise < 0.0) throw FitError("noise must be non-negative");

  SurrogateModel model;
  model.kernel_cfg = cfg;
  model.train_graphs.reserve(observations.size());
  model.train_features.reserve(observations.size());
  for (const auto& obs : observations) {
    model.train_graphs.push_back(encode_graph(obs.proposal));
    model.train_features.push_back(wl_features(model.train_graphs.back(), cfg.h));
  }

  const std::size_t n = observations.size();
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) y(i) = observations[i].reward;
  model.reward_mean = y.mean();
  double var = (y.array() - model.reward_mean).square().sum() / static_cast<double>(n);
  model.reward_std = var > 1e-24 ? std::sqrt(var) : 1.0;
  model.train_rewards_standardized =
      (y.array() - model.reward_mean) / model.reward_std;

  Eigen::MatrixXd K(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double v = kernel_from_features(model.train_features[i], model.train_features[j], cfg);
      K(i, j) = v;
      K(j, i) = v;
    }
  }

  std::vector<double> ladder{noise};
  for (double j : {1e-6, 1e-4, 1e-2}) {
    if (j > noise) ladder.push_back(j);
  }
  const Eigen::VectorXd& ys = model.train_rewards_standardized;
  for (double sigma2 : ladder) {
    Eigen::MatrixXd A = K;
    A.diagonal().array() += sigma2;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) continue;
    Eigen::VectorXd w = llt.solve(ys);
    double residual = (A * w - ys).norm() / std::max(ys.norm(), 1e-12);
    if (residual > 1e-8) continue;
    if (sigma2 != noise) {
      log_warn("GP jitter escalated to " + std::to_string(sigma2));
    }
    model.noise_variance = sigma2;
    model.weights = std::move(w);
    model.factor = std::move(llt);
    return model;
  }
  throw FitError("GP factorization failed after jitter escalation");
}

/// De-standardized predictive mean and variance at a proposal.
inline std::pair<double, double> predict(const SurrogateModel& model,
                                         const PruningProposal& proposal) {
  auto [mu, var] = detail::predict_standardized(model, detail::query_features(model, proposal));
  return {mu * model.reward_std + model.reward_mean, var * model.reward_std * model.reward_std};
}

/// Closed-form EI for a maximization problem.
inline double ei_value(double mean, double sigma, double best, double xi) {
  double improve = mean - best - xi;
  if (sigma < 1e-12) return std::max(0.0, improve);
  double z = improve / sigma;
  double ei = improve * std_normal_cdf(z) + sigma * std_normal_pdf(z);
  return std::max(0.0, ei);
}

/// Expected Improvement over `best_reward`. Both best_reward and xi are in
/// reward units; the computation happens in standardized space, which makes
/// the EI ranking invariant under affine reward transformations.
inline double expected_improvement(const SurrogateModel& model, const PruningProposal& proposal,
                                   double best_reward, double xi = 0.0) {
  auto [mu, var] = detail::predict_standardized(model, detail::query_features(model, proposal));
  double best_std = (best_reward - model.reward_mean) / model.reward_std;
  double xi_std = xi / model.reward_std;
  return ei_value(mu, std::sqrt(var), best_std, xi_std);
}

// ---------------------------------------------------------------------------
// Predictive-mean gradients
// ---------------------------------------------------------------------------

/// Gradients of the de-standardized predictive mean. by_feature holds
/// d(mean)/d(phi_j) for every WL feature of the queried proposal, treating
/// counts as real-valued; by_layer sums each node's own generated features
/// across iterations 0..h. Positive values mean the node helps the reward.
struct NodeGradients {
  std::map<std::string, double> by_layer;
  std::map<std::string, double> by_feature;
};

/// Predictive mean evaluated on an arbitrary real-valued feature vector.
/// This is the scalar function the gradients differentiate; tests use it for
/// finite-difference checks.
inline double predict_mean_from_features(const SurrogateModel& model,
                                         const std::map<std::string, double>& counts) {
  const KernelConfig& cfg = model.kernel_cfg;
  double self = 0.0;
  for (const auto& [k, v] : counts) self += v * v;
  double mu = 0.0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& ti = model.train_features[i].counts;
    double dot = 0.0;
    for (const auto& [k, v] : counts) {
      auto it = ti.find(k);
      if (it != ti.end()) dot += v * it->second;
    }
    double kv = dot;
    if (cfg.normalize) kv /= std::sqrt(self * model.train_features[i].self_dot());
    mu += model.weights(i) * cfg.signal_variance * kv;
  }
  return mu * model.reward_std + model.reward_mean;
}

inline NodeGradients mean_gradient(const SurrogateModel& model, const PruningProposal& proposal) {
  const KernelConfig& cfg = model.kernel_cfg;
  ProposalGraph g = encode_graph(proposal);
  WlFeatureMap f = wl_features(g, cfg.h);

  NodeGradients grads;
  const double self = f.self_dot();
  const double norm = std::sqrt(self);

  // Per-training-point constants for the normalized chain rule.
  std::vector<double> dots(model.size()), norms(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    dots[i] = f.dot(model.train_features[i]);
    norms[i] = std::sqrt(model.train_features[i].self_dot());
  }

  for (const auto& [key, count] : f.counts) {
    double g_j = 0.0;
    for (std::size_t i = 0; i < model.size(); ++i) {
      const auto& ti = model.train_features[i].counts;
      auto it = ti.find(key);
      double phi_i = it != ti.end() ? it->second : 0.0;
      double dk;
      if (cfg.normalize) {
        dk = phi_i / (norm * norms[i]) - dots[i] * count / (norm * norm * norm * norms[i]);
      } else {
        dk = phi_i;
      }
      g_j += model.weights(i) * cfg.signal_variance * dk;
    }
    grads.by_feature[key] = g_j * model.reward_std;
  }

  for (std::size_t node = 0; node < g.nodes.size(); ++node) {
    double acc = 0.0;
    for (const auto& key : f.keys_per_node[node]) acc += grads.by_feature.at(key);
    grads.by_layer[g.nodes[node].layer_id] = acc;
  }
  return grads;
}

}  // namespace prunesearch
