// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "protoncd/linalg.hpp"
#include "protoncd/proto_head.hpp"

namespace protoncd {

inline constexpr double kCrossEntropyEps = 1e-12;

// Candidate set in the contrastive denominators. AnchorViews pools the other
// in-batch view-a features plus the anchor's own view-b feature; InBatchOnly
// uses the other view-a features alone.
enum class ContrastiveDenominator { AnchorViews, InBatchOnly };
enum class ScoreReduction { Max, Mean };

struct LossWeights {
  double lambda_sup = 0.5;
  double lambda_entropy = 1.0;
  double lambda_sep = 0.1;
  double label_blend = 0.5;  // weight of the one-hot label in labeled teacher targets
  ContrastiveDenominator denominator = ContrastiveDenominator::AnchorViews;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// w = max(0.5 - s, 0); returns w * e_normal + (1 - w) * q.
Vector refine_pseudo_label(std::span<const double> q, double s, int normal_index);

/// Image-level score of a pooled anomaly vector (0 when empty).
double anomaly_score(std::span<const double> pooled, ScoreReduction reduction);

/// Value plus gradients with respect to the view-a and view-b inputs.
struct TermResult {
  double value = 0.0;
  std::vector<Vector> grad_a;
  std::vector<Vector> grad_b;
  int clamped = 0;         // cross-entropy entries hit by the epsilon clamp
  int empty_positive = 0;  // anchors without positives (supervised contrastive)
};

/// Cross-entropy -sum_k q_k log p_k with p clamped below by kCrossEntropyEps.
double cross_entropy(std::span<const double> q, std::span<const double> p, int* clamped = nullptr);

/// (1/2B) sum_i [CE(q_i, p_i) + CE(q~_i, p~_i)], gradients w.r.t. p.
TermResult loss_dapl(const std::vector<Vector>& q_a, const std::vector<Vector>& q_b,
                     const std::vector<Vector>& p_a, const std::vector<Vector>& p_b);
/// (1/2B) sum_i [CE(y_i, p_i) + CE(y_i, p~_i)], gradients w.r.t. p.
TermResult loss_sup(const std::vector<std::optional<int>>& labels, const std::vector<Vector>& p_a,
                    const std::vector<Vector>& p_b);
/// Self-supervised InfoNCE over unit features, gradients w.r.t. h and h'.
TermResult loss_con_u(const std::vector<Vector>& h_a, const std::vector<Vector>& h_b, double tau_c,
                      ContrastiveDenominator denominator = ContrastiveDenominator::AnchorViews);
/// Supervised contrastive loss; positives are the other view-a features with
/// the same label. Anchors without positives contribute 0 and are counted.
TermResult loss_con_l(const std::vector<Vector>& h_a, const std::vector<Vector>& h_b,
                      const std::vector<int>& labels, double tau_c,
                      ContrastiveDenominator denominator = ContrastiveDenominator::AnchorViews);
/// -H(mean of all 2B posteriors), gradients w.r.t. each posterior.
TermResult loss_entropy(const std::vector<Vector>& p_a, const std::vector<Vector>& p_b);

struct SepResult {
  double value = 0.0;
  Matrix grad;  // K x d, w.r.t. mu
};
SepResult loss_sep(const Matrix& mu, double tau_sep);

/// Gradient of softmax(l / T) pulled back from the probabilities to l.
Vector softmax_backward(std::span<const double> p, std::span<const double> dp, double temperature);

/// Student-side inputs of the objective: unit features for both views, the
/// (already corrected and sharpened) teacher targets, and the training labels
/// in model index space (absent for unlabeled samples).
struct BatchViews {
  std::vector<Vector> z_a, z_b, h_a, h_b;
  std::vector<Vector> target_a, target_b;
  std::vector<std::optional<int>> labels;

  std::size_t size() const { return z_a.size(); }
};

struct LossBreakdown {
  double dapl = 0.0;
  double sup = 0.0;
  double con_u = 0.0;
  double con_l = 0.0;
  double entropy = 0.0;
  double sep = 0.0;
  double total = 0.0;
  int clamped = 0;
  int empty_positive = 0;
};

struct LossGradients {
  std::vector<Vector> dz_a, dz_b, dh_a, dh_b;
  Matrix dmu;
};

/// (1-ls)(dapl + con_u) + ls(sup + con_l) + le*entropy + lsep*sep, with
/// gradients w.r.t. the student features and prototypes when `grads` is set.
/// The supervised terms run over the labeled subset and vanish when it is empty.
LossBreakdown total_loss(const BatchViews& batch, const PrototypeSet& protos,
                         const LossWeights& weights, const Temperatures& temps,
                         LossGradients* grads = nullptr);

}  // namespace protoncd
