// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protoncd/config.hpp"
#include "protoncd/data.hpp"
#include "protoncd/proto_head.hpp"
#include "protoncd/trainer.hpp"

namespace protoncd {

inline constexpr double kCenterEpsilon = 1e-3;

struct Assignment {
  std::vector<int> row_to_col;  // -1 for rows left unassigned (more rows than columns)
  double cost = 0.0;
};

/// Minimum-cost assignment of min(n, m) pairs. Among optimal assignments the
/// lexicographically smallest list of (row, col) pairs is returned.
Assignment hungarian(const Matrix& cost);

struct ClusterEval {
  double nmi = 0.0;
  double ari = 0.0;
  double f1 = 0.0;
  std::vector<std::pair<int, int>> assignment;  // (cluster id, class id)
};

ClusterEval cluster_eval(std::span<const int> truth, std::span<const int> pred);

/// Accuracy on `subset` (indices into truth/pred) after the Hungarian
/// cluster-to-class matching computed over all of truth/pred.
double matched_accuracy(std::span<const int> truth, std::span<const int> pred,
                        std::span<const std::size_t> subset);

/// Student predictions on un-augmented samples.
struct Predictions {
  std::vector<std::size_t> indices;  // dataset indices
  std::vector<Vector> z;
  std::vector<Vector> logits;
  std::vector<int> label;  // arg max of the posterior
};
Predictions predict(const Model& model, const Dataset& dataset, const std::vector<std::size_t>& indices,
                    const RegionGuidanceParams& rg, ExecMode mode = ExecMode::Parallel);

/// Fraction of labeled samples whose posterior arg max equals their label.
double acc_score(const Model& model, const Dataset& dataset, const RegionGuidanceParams& rg,
                 ExecMode mode = ExecMode::Parallel);

struct ClassCenters {
  std::vector<std::optional<Vector>> labeled;    // per base class, unit norm
  std::vector<std::optional<Vector>> unlabeled;  // empty when no sample is assigned
};
ClassCenters class_centers(const Model& model, const Dataset& dataset, const RegionGuidanceParams& rg,
                           ExecMode mode = ExecMode::Parallel);
/// prod_k max(<c^l_k, c^u_k>, eps); missing centers contribute eps.
double centr_score(const ClassCenters& centers);

struct CandidateResult {
  int k_new_candidate = 0;
  double acc_score = 0.0;
  double centr_score = 0.0;
  double proto_score = 0.0;
  std::string checkpoint_ref;
  bool failed = false;
  std::string error;
};

struct EstimateResult {
  std::vector<CandidateResult> candidates;
  int chosen_k_new = -1;
  std::vector<Checkpoint> checkpoints;  // aligned with candidates (failed ones hold the last good state)
};

struct EstimateOptions {
  // Scores within this relative gap of the best count as ties, which resolve
  // toward the smaller candidate.
  double tie_tolerance = 0.0;
  bool keep_checkpoints = false;
};

/// Trains one budget-mode model per candidate (seed derived from the master
/// seed and the candidate) and picks the arg max of acc * centr.
EstimateResult estimate_k_new(const Dataset& dataset, CandidateRange candidates, const TrainConfig& config,
                              const EstimateOptions& options = {});
std::string candidates_csv(const std::vector<CandidateResult>& rows);

/// Higher means more in-distribution for every method.
double ood_score(std::span<const double> logits, OodMethod method, double temperature);
double auroc(std::span<const double> scores, const std::vector<bool>& is_id);
/// FPR at the first threshold (sweeping from high to low) whose TPR reaches
/// `tpr_level`; the threshold is returned through `threshold`.
double fpr_at_tpr(std::span<const double> scores, const std::vector<bool>& is_id, double tpr_level = 0.95,
                  double* threshold = nullptr);

struct OodResult {
  OodMethod method = OodMethod::Msp;
  std::vector<std::string> ids;
  Vector scores;
  std::vector<bool> is_id;
  double auroc = 0.0;
  double fpr95 = 0.0;
  double threshold = 0.0;
  double temperature = 0.0;
};

/// Scores every sample: ID (labeled + unlabeled splits) positive, split=ood
/// negative. `temperature` is the softmax/energy temperature.
OodResult evaluate_ood(const Model& model, const Dataset& dataset, OodMethod method, double temperature,
                       const RegionGuidanceParams& rg, std::optional<double> threshold = {},
                       ExecMode mode = ExecMode::Parallel);

struct DiscoveryMetrics {
  ClusterEval cluster;        // over the unlabeled split, ground truth vs predicted
  double all_accuracy = 0.0;  // matched accuracy over the unlabeled split
  double novel_accuracy = 0.0;
  double base_accuracy = 0.0;
  std::size_t evaluated = 0;
};

/// Clustering metrics on the unlabeled split, which must carry ground truth.
DiscoveryMetrics evaluate_discovery(const Model& model, const Dataset& dataset, const RegionGuidanceParams& rg,
                                    ExecMode mode = ExecMode::Parallel);

}  // namespace protoncd
