// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "protoncd/error.hpp"
#include "protoncd/kernels.hpp"
#include "protoncd/numerics.hpp"

namespace protoncd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Classic O(n^2 m) potentials method for n <= m; returns row -> col.
std::vector<int> hungarian_core(const Matrix& a) {
  const std::size_t n = a.rows();
  const std::size_t m = a.cols();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  }
  return row_to_col;
}

// Optimal value over the sub-grid rows x cols with min(|rows|, |cols|) pairs.
double optimal_value(const Matrix& cost, const std::vector<int>& rows, const std::vector<int>& cols) {
  if (rows.empty() || cols.empty()) return 0.0;
  const bool flip = rows.size() > cols.size();
  const auto& r = flip ? cols : rows;
  const auto& c = flip ? rows : cols;
  Matrix sub(r.size(), c.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) sub(i, j) = flip ? cost(c[j], r[i]) : cost(r[i], c[j]);
  }
  const std::vector<int> asg = hungarian_core(sub);
  double total = 0.0;
  for (std::size_t i = 0; i < asg.size(); ++i) total += sub(i, asg[i]);
  return total;
}

struct Contingency {
  std::vector<int> classes;   // sorted distinct truth ids
  std::vector<int> clusters;  // sorted distinct predicted ids
  Matrix counts;              // classes x clusters
  std::size_t n = 0;
};

Contingency contingency(std::span<const int> truth, std::span<const int> pred) {
  require(truth.size() == pred.size() && !truth.empty(), ErrorKind::InvalidArgument,
          "labels and predictions must have equal non-zero length");
  Contingency c;
  c.classes.assign(truth.begin(), truth.end());
  c.clusters.assign(pred.begin(), pred.end());
  for (auto* v : {&c.classes, &c.clusters}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  c.counts = Matrix(c.classes.size(), c.clusters.size());
  auto pos = [](const std::vector<int>& v, int x) {
    return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), x) - v.begin());
  };
  for (std::size_t i = 0; i < truth.size(); ++i) c.counts(pos(c.classes, truth[i]), pos(c.clusters, pred[i])) += 1.0;
  c.n = truth.size();
  return c;
}

bool identical_partitions(const Contingency& c) {
  if (c.classes.size() != c.clusters.size()) return false;
  for (std::size_t i = 0; i < c.counts.rows(); ++i) {
    int nonzero = 0;
    for (double x : c.counts.row(i)) nonzero += x > 0.0;
    if (nonzero != 1) return false;
  }
  return true;
}

double choose2(double x) { return 0.5 * x * (x - 1.0); }

// Hungarian on negated counts: cluster index -> class index (or -1).
std::vector<int> match_clusters(const Contingency& c) {
  Matrix neg(c.clusters.size(), c.classes.size());
  for (std::size_t k = 0; k < c.clusters.size(); ++k) {
    for (std::size_t i = 0; i < c.classes.size(); ++i) neg(k, i) = -c.counts(i, k);
  }
  return hungarian(neg).row_to_col;
}

}  // namespace

Assignment hungarian(const Matrix& cost) {
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  for (double x : cost.flat()) require(std::isfinite(x), ErrorKind::InvalidArgument, "non-finite assignment cost");
  Assignment out;
  out.row_to_col.assign(n, -1);
  if (n == 0 || m == 0) return out;

  std::vector<int> rows(n), cols(m);
  std::iota(rows.begin(), rows.end(), 0);
  std::iota(cols.begin(), cols.end(), 0);
  const double opt = optimal_value(cost, rows, cols);
  const double tol = 1e-9 * (1.0 + std::abs(opt));

  // Fix rows in order, each to the smallest column (then "unassigned") that
  // still admits an optimal completion.
  double fixed = 0.0;
  std::vector<int> free_rows = rows;
  std::vector<int> free_cols = cols;
  for (std::size_t i = 0; i < n; ++i) {
    free_rows.erase(free_rows.begin());
    bool placed = false;
    for (std::size_t cj = 0; cj < free_cols.size() && !placed; ++cj) {
      const int j = free_cols[cj];
      std::vector<int> rest = free_cols;
      rest.erase(rest.begin() + static_cast<long>(cj));
      if (free_rows.size() < rest.size() && n > m) continue;
      const double total = fixed + cost(i, j) + optimal_value(cost, free_rows, rest);
      if (total <= opt + tol) {
        out.row_to_col[i] = j;
        fixed += cost(i, j);
        free_cols = std::move(rest);
        placed = true;
      }
    }
    if (!placed) {
      require(n > m && free_rows.size() >= free_cols.size(), ErrorKind::NumericalFailure,
              "assignment refinement lost optimality");
    }
  }
  out.cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.row_to_col[i] >= 0) out.cost += cost(i, out.row_to_col[i]);
  }
  return out;
}

ClusterEval cluster_eval(std::span<const int> truth, std::span<const int> pred) {
  const Contingency c = contingency(truth, pred);
  const double n = static_cast<double>(c.n);
  ClusterEval out;

  Vector a(c.classes.size(), 0.0), b(c.clusters.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      a[i] += c.counts(i, k);
      b[k] += c.counts(i, k);
    }
  }
  double mi = 0.0, hu = 0.0, hv = 0.0;
  for (double x : a) hu -= x / n * std::log(x / n);
  for (double x : b) hv -= x / n * std::log(x / n);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      const double nij = c.counts(i, k);
      if (nij > 0.0) mi += nij / n * std::log(nij * n / (a[i] * b[k]));
    }
  }
  const bool same = identical_partitions(c);
  if (hu + hv <= 0.0) {
    out.nmi = same ? 1.0 : 0.0;
  } else {
    out.nmi = std::clamp(2.0 * mi / (hu + hv), 0.0, 1.0);
  }

  double index = 0.0, sa = 0.0, sb = 0.0;
  for (double x : c.counts.flat()) index += choose2(x);
  for (double x : a) sa += choose2(x);
  for (double x : b) sb += choose2(x);
  const double pairs = choose2(n);
  const double expected = pairs > 0.0 ? sa * sb / pairs : 0.0;
  const double denom = 0.5 * (sa + sb) - expected;
  out.ari = denom == 0.0 ? (same ? 1.0 : 0.0) : (index - expected) / denom;

  const std::vector<int> match = match_clusters(c);
  double f1 = 0.0;
  for (std::size_t k = 0; k < match.size(); ++k) {
    if (match[k] < 0) continue;
    const std::size_t i = static_cast<std::size_t>(match[k]);
    out.assignment.emplace_back(c.clusters[k], c.classes[i]);
    const double tp = c.counts(i, k);
    if (tp > 0.0) f1 += 2.0 * tp / (a[i] + b[k]);
  }
  out.f1 = f1 / static_cast<double>(c.classes.size());
  return out;
}

double matched_accuracy(std::span<const int> truth, std::span<const int> pred,
                        std::span<const std::size_t> subset) {
  require(!subset.empty(), ErrorKind::InvalidArgument, "matched accuracy of an empty subset");
  const Contingency c = contingency(truth, pred);
  const std::vector<int> match = match_clusters(c);
  std::map<int, int> mapping;
  for (std::size_t k = 0; k < match.size(); ++k) {
    if (match[k] >= 0) mapping[c.clusters[k]] = c.classes[match[k]];
  }
  std::size_t hit = 0;
  for (std::size_t i : subset) {
    require(i < truth.size(), ErrorKind::InvalidArgument, "subset index out of range");
    auto it = mapping.find(pred[i]);
    hit += it != mapping.end() && it->second == truth[i];
  }
  return static_cast<double>(hit) / static_cast<double>(subset.size());
}

Predictions predict(const Model& model, const Dataset& dataset, const std::vector<std::size_t>& indices,
                    const RegionGuidanceParams& rg, ExecMode mode) {
  std::vector<EncodeJob> jobs(indices.size());
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const Sample& s = dataset.samples.at(indices[n]);
    jobs[n].patches = &s.patches;
    jobs[n].anomaly = pooled_scores(s, dataset.layout);
  }
  const auto outs = encode_batch(jobs, model.encoder, rg, nullptr, mode);
  Predictions p;
  p.indices = indices;
  for (const EncodeOutput& o : outs) {
    Vector l = logits(o.z, model.protos);
    p.label.push_back(static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin()));
    p.logits.push_back(std::move(l));
    p.z.push_back(o.z);
  }
  return p;
}

double acc_score(const Model& model, const Dataset& dataset, const RegionGuidanceParams& rg, ExecMode mode) {
  const auto idx = dataset.indices_of(Split::Labeled);
  require(!idx.empty(), ErrorKind::InvalidArgument, "acc_score needs labeled samples");
  const Predictions p = predict(model, dataset, idx, rg, mode);
  std::size_t hit = 0;
  for (std::size_t n = 0; n < idx.size(); ++n) {
    hit += p.label[n] == model_label(dataset, *dataset.training_label(idx[n]), model.protos.k_new);
  }
  return static_cast<double>(hit) / static_cast<double>(idx.size());
}

ClassCenters class_centers(const Model& model, const Dataset& dataset, const RegionGuidanceParams& rg,
                           ExecMode mode) {
  const int kb = model.protos.k_base;
  const std::size_t d = model.protos.mu.cols();
  std::vector<Vector> lsum(kb, Vector(d, 0.0)), usum(kb, Vector(d, 0.0));
  std::vector<int> lcount(kb, 0), ucount(kb, 0);

  const auto lab = dataset.indices_of(Split::Labeled);
  const Predictions pl = predict(model, dataset, lab, rg, mode);
  for (std::size_t n = 0; n < lab.size(); ++n) {
    const int y = model_label(dataset, *dataset.training_label(lab[n]), model.protos.k_new);
    if (y < kb) {
      axpy(1.0, pl.z[n], lsum[y]);
      ++lcount[y];
    }
  }
  const auto unl = dataset.indices_of(Split::Unlabeled);
  const Predictions pu = predict(model, dataset, unl, rg, mode);
  for (std::size_t n = 0; n < unl.size(); ++n) {
    const int y = pu.label[n];
    if (y < kb) {
      axpy(1.0, pu.z[n], usum[y]);
      ++ucount[y];
    }
  }
  ClassCenters c;
  auto center = [](const Vector& sum, int count) -> std::optional<Vector> {
    if (count == 0 || norm2(sum) == 0.0) return std::nullopt;
    return numerics::normalize_unit(sum);
  };
  for (int k = 0; k < kb; ++k) {
    c.labeled.push_back(center(lsum[k], lcount[k]));
    c.unlabeled.push_back(center(usum[k], ucount[k]));
  }
  return c;
}

double centr_score(const ClassCenters& centers) {
  require(centers.labeled.size() == centers.unlabeled.size(), ErrorKind::InvalidArgument,
          "center lists must be paired");
  double prod = 1.0;
  for (std::size_t k = 0; k < centers.labeled.size(); ++k) {
    const auto& l = centers.labeled[k];
    const auto& u = centers.unlabeled[k];
    prod *= (l && u) ? std::max(dot(*l, *u), kCenterEpsilon) : kCenterEpsilon;
  }
  return prod;
}

EstimateResult estimate_k_new(const Dataset& dataset, CandidateRange range, const TrainConfig& config,
                              const EstimateOptions& options) {
  require(range.first >= 0 && range.first <= range.last, ErrorKind::InvalidArgument,
          "empty candidate range");
  require(options.tie_tolerance >= 0.0, ErrorKind::InvalidArgument, "tie tolerance must be >= 0");
  EstimateResult result;
  for (int k = range.first; k <= range.last; ++k) {
    TrainConfig cfg = config;
    cfg.budget_mode = true;
    cfg.seed = derive_seed(config.seed, static_cast<std::uint64_t>(k));
    CandidateResult row;
    row.k_new_candidate = k;
    row.checkpoint_ref = "candidate_" + std::to_string(k);
    try {
      TrainResult tr = train(dataset, cfg, k);
      if (tr.aborted) fail(ErrorKind::NumericalFailure, tr.abort_reason);
      const Model& m = tr.checkpoint.state.student;
      row.acc_score = acc_score(m, dataset, cfg.rg, cfg.exec);
      row.centr_score = centr_score(class_centers(m, dataset, cfg.rg, cfg.exec));
      row.proto_score = row.acc_score * row.centr_score;
      if (options.keep_checkpoints) result.checkpoints.push_back(std::move(tr.checkpoint));
    } catch (const Error& e) {
      row.failed = true;
      row.error = e.what();
      std::cerr << "warning: candidate k_new=" << k << " skipped: " << e.what() << "\n";
      if (options.keep_checkpoints) result.checkpoints.emplace_back();
    }
    result.candidates.push_back(std::move(row));
  }
  double best = -1.0;
  for (const CandidateResult& r : result.candidates) {
    if (!r.failed) best = std::max(best, r.proto_score);
  }
  for (const CandidateResult& r : result.candidates) {
    if (!r.failed && r.proto_score >= best - options.tie_tolerance * std::abs(best)) {
      result.chosen_k_new = r.k_new_candidate;
      break;
    }
  }
  require(result.chosen_k_new >= 0, ErrorKind::NumericalFailure, "every candidate failed to train");
  return result;
}

std::string candidates_csv(const std::vector<CandidateResult>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "k_new,acc_score,centr_score,proto_score,failed\n";
  for (const CandidateResult& r : rows) {
    out << r.k_new_candidate << ',' << r.acc_score << ',' << r.centr_score << ',' << r.proto_score << ','
        << (r.failed ? 1 : 0) << '\n';
  }
  return out.str();
}

double ood_score(std::span<const double> logits, OodMethod method, double temperature) {
  require(!logits.empty(), ErrorKind::InvalidArgument, "ood_score of empty logits");
  require(temperature > 0.0, ErrorKind::InvalidArgument, "OOD temperature must be positive");
  switch (method) {
    case OodMethod::Msp: {
      const Vector p = numerics::softmax(logits, temperature);
      return *std::max_element(p.begin(), p.end());
    }
    case OodMethod::Mls:
      return *std::max_element(logits.begin(), logits.end());
    case OodMethod::Energy: {
      Vector scaled(logits.begin(), logits.end());
      for (double& x : scaled) x /= temperature;
      return temperature * numerics::log_sum_exp(scaled);
    }
  }
  fail(ErrorKind::InvalidArgument, "unknown OOD method");
}

double auroc(std::span<const double> scores, const std::vector<bool>& is_id) {
  require(scores.size() == is_id.size(), ErrorKind::InvalidArgument, "scores and flags differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (is_id[order[t]]) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorKind::InvalidArgument, "AUROC needs both ID and OOD samples");
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double fpr_at_tpr(std::span<const double> scores, const std::vector<bool>& is_id, double tpr_level,
                  double* threshold) {
  require(scores.size() == is_id.size(), ErrorKind::InvalidArgument, "scores and flags differ in length");
  require(tpr_level > 0.0 && tpr_level <= 1.0, ErrorKind::InvalidArgument, "TPR level must be in (0,1]");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto n_pos = static_cast<std::size_t>(std::count(is_id.begin(), is_id.end(), true));
  const std::size_t n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorKind::InvalidArgument, "FPR95 needs both ID and OOD samples");
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    // samples tied at a threshold enter together
    while (j < n && scores[order[j]] == scores[order[i]]) {
      is_id[order[j]] ? ++tp : ++fp;
      ++j;
    }
    if (static_cast<double>(tp) >= tpr_level * static_cast<double>(n_pos)) {
      if (threshold) *threshold = scores[order[i]];
      return static_cast<double>(fp) / static_cast<double>(n_neg);
    }
    i = j;
  }
  fail(ErrorKind::NumericalFailure, "TPR level never reached");
}

OodResult evaluate_ood(const Model& model, const Dataset& dataset, OodMethod method, double temperature,
                       const RegionGuidanceParams& rg, std::optional<double> threshold, ExecMode mode) {
  std::vector<std::size_t> idx(dataset.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Predictions p = predict(model, dataset, idx, rg, mode);
  OodResult r;
  r.method = method;
  r.temperature = temperature;
  for (std::size_t n = 0; n < idx.size(); ++n) {
    r.ids.push_back(dataset.samples[n].id);
    r.scores.push_back(ood_score(p.logits[n], method, temperature));
    r.is_id.push_back(dataset.samples[n].split != Split::Ood);
  }
  r.auroc = auroc(r.scores, r.is_id);
  r.fpr95 = fpr_at_tpr(r.scores, r.is_id, 0.95, &r.threshold);
  if (threshold) r.threshold = *threshold;
  return r;
}

DiscoveryMetrics evaluate_discovery(const Model& model, const Dataset& dataset, const RegionGuidanceParams& rg,
                                    ExecMode mode) {
  const auto unl = dataset.indices_of(Split::Unlabeled);
  require(!unl.empty(), ErrorKind::InvalidArgument, "no unlabeled samples to evaluate");
  const Predictions p = predict(model, dataset, unl, rg, mode);
  std::vector<int> truth;
  std::vector<std::size_t> novel, base;
  for (std::size_t n = 0; n < unl.size(); ++n) {
    const Sample& s = dataset.samples[unl[n]];
    require(s.label.has_value(), ErrorKind::InvalidArgument,
            "evaluation needs ground truth on unlabeled sample " + s.id);
    truth.push_back(*s.label);
    if (*s.label == dataset.normal_label) continue;
    (*s.label < dataset.k_base ? base : novel).push_back(n);
  }
  DiscoveryMetrics m;
  m.evaluated = unl.size();
  m.cluster = cluster_eval(truth, p.label);
  std::vector<std::size_t> all(unl.size());
  std::iota(all.begin(), all.end(), 0);
  m.all_accuracy = matched_accuracy(truth, p.label, all);
  m.novel_accuracy = novel.empty() ? 0.0 : matched_accuracy(truth, p.label, novel);
  m.base_accuracy = base.empty() ? 0.0 : matched_accuracy(truth, p.label, base);
  return m;
}

}  // namespace protoncd
