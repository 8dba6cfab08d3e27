// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "protoncd/error.hpp"
#include "protoncd/numerics.hpp"

namespace protoncd {

namespace {

std::vector<Vector> zeros_like(const std::vector<Vector>& v) {
  std::vector<Vector> out;
  out.reserve(v.size());
  for (const Vector& x : v) out.emplace_back(x.size(), 0.0);
  return out;
}

void require_paired(const std::vector<Vector>& a, const std::vector<Vector>& b, const char* what) {
  require(a.size() == b.size(), ErrorKind::InvalidArgument,
          std::string(what) + ": view-a and view-b batch sizes differ");
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i].size() == b[i].size() && a[i].size() == a[0].size(), ErrorKind::InvalidArgument,
            std::string(what) + ": inconsistent vector sizes");
  }
}

// CE gradient w.r.t. p, with the same clamp as the value.
void cross_entropy_grad(std::span<const double> q, std::span<const double> p, double scale,
                        std::span<double> dp) {
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] == 0.0) continue;
    dp[k] -= scale * q[k] / std::max(p[k], kCrossEntropyEps);
  }
}

struct Candidate {
  const Vector* v;
  Vector* grad;
};

// Shared InfoNCE core: anchor h with positives (mean of their log-ratio) and
// a candidate set in the denominator. Returns the anchor's loss and
// accumulates scaled gradients.
double info_nce_anchor(const Vector& h, Vector& dh, const std::vector<Candidate>& positives,
                       const std::vector<Candidate>& candidates, double tau, double scale) {
  Vector sims(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) sims[c] = dot(h, *candidates[c].v) / tau;
  const double lse = numerics::log_sum_exp(sims);
  double pos = 0.0;
  const double inv_pos = 1.0 / static_cast<double>(positives.size());
  for (const Candidate& p : positives) {
    pos += dot(h, *p.v) / tau;
    axpy(-scale * inv_pos / tau, *p.v, dh);
    axpy(-scale * inv_pos / tau, h, *p.grad);
  }
  pos *= inv_pos;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double w = std::exp(sims[c] - lse);
    axpy(scale * w / tau, *candidates[c].v, dh);
    axpy(scale * w / tau, h, *candidates[c].grad);
  }
  return lse - pos;
}

}  // namespace

void LossWeights::validate() const {
  require(lambda_sup >= 0.0 && lambda_sup <= 1.0, ErrorKind::InvalidArgument,
          "lambda_sup must lie in [0,1]");
  require(lambda_entropy >= 0.0 && lambda_sep >= 0.0, ErrorKind::InvalidArgument,
          "loss weights must be non-negative");
  require(label_blend >= 0.0 && label_blend <= 1.0, ErrorKind::InvalidArgument,
          "label_blend must lie in [0,1]");
}

Vector refine_pseudo_label(std::span<const double> q, double s, int normal_index) {
  numerics::validate_simplex(q);
  require(s >= 0.0 && s <= 1.0, ErrorKind::InvalidArgument, "anomaly score outside [0,1]");
  require(normal_index >= 0 && static_cast<std::size_t>(normal_index) < q.size(),
          ErrorKind::InvalidArgument, "normal index out of range");
  const double w = std::max(0.5 - s, 0.0);
  Vector out(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) out[k] = (1.0 - w) * q[k];
  out[normal_index] += w;
  return out;
}

double anomaly_score(std::span<const double> pooled, ScoreReduction reduction) {
  if (pooled.empty()) return 0.0;
  if (reduction == ScoreReduction::Max) return *std::max_element(pooled.begin(), pooled.end());
  double s = 0.0;
  for (double x : pooled) s += x;
  return s / static_cast<double>(pooled.size());
}

double cross_entropy(std::span<const double> q, std::span<const double> p, int* clamped) {
  require(q.size() == p.size(), ErrorKind::InvalidArgument, "cross_entropy size mismatch");
  double l = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] == 0.0) continue;
    if (p[k] < kCrossEntropyEps && clamped) ++*clamped;
    l -= q[k] * std::log(std::max(p[k], kCrossEntropyEps));
  }
  return l;
}

TermResult loss_dapl(const std::vector<Vector>& q_a, const std::vector<Vector>& q_b,
                     const std::vector<Vector>& p_a, const std::vector<Vector>& p_b) {
  require_paired(p_a, p_b, "loss_dapl");
  require_paired(q_a, q_b, "loss_dapl");
  require(q_a.size() == p_a.size() && !p_a.empty(), ErrorKind::InvalidArgument,
          "loss_dapl: empty batch or target/prediction mismatch");
  TermResult r;
  r.grad_a = zeros_like(p_a);
  r.grad_b = zeros_like(p_b);
  const double scale = 1.0 / (2.0 * static_cast<double>(p_a.size()));
  for (std::size_t i = 0; i < p_a.size(); ++i) {
    r.value += cross_entropy(q_a[i], p_a[i], &r.clamped) + cross_entropy(q_b[i], p_b[i], &r.clamped);
    cross_entropy_grad(q_a[i], p_a[i], scale, r.grad_a[i]);
    cross_entropy_grad(q_b[i], p_b[i], scale, r.grad_b[i]);
  }
  r.value *= scale;
  return r;
}

TermResult loss_sup(const std::vector<std::optional<int>>& labels, const std::vector<Vector>& p_a,
                    const std::vector<Vector>& p_b) {
  require_paired(p_a, p_b, "loss_sup");
  require(labels.size() == p_a.size() && !p_a.empty(), ErrorKind::InvalidArgument,
          "loss_sup: empty batch or label count mismatch");
  TermResult r;
  r.grad_a = zeros_like(p_a);
  r.grad_b = zeros_like(p_b);
  const double scale = 1.0 / (2.0 * static_cast<double>(p_a.size()));
  const std::size_t k = p_a[0].size();
  for (std::size_t i = 0; i < p_a.size(); ++i) {
    if (!labels[i]) fail(ErrorKind::InvalidArgument, "loss_sup: sample " + std::to_string(i) + " has no label");
    const int y = *labels[i];
    require(y >= 0 && static_cast<std::size_t>(y) < k, ErrorKind::InvalidArgument,
            "loss_sup: label out of range");
    Vector onehot(k, 0.0);
    onehot[y] = 1.0;
    r.value += cross_entropy(onehot, p_a[i], &r.clamped) + cross_entropy(onehot, p_b[i], &r.clamped);
    cross_entropy_grad(onehot, p_a[i], scale, r.grad_a[i]);
    cross_entropy_grad(onehot, p_b[i], scale, r.grad_b[i]);
  }
  r.value *= scale;
  return r;
}

TermResult loss_con_u(const std::vector<Vector>& h_a, const std::vector<Vector>& h_b, double tau_c,
                      ContrastiveDenominator denominator) {
  require_paired(h_a, h_b, "loss_con_u");
  require(h_a.size() >= 2, ErrorKind::InvalidArgument,
          "loss_con_u needs at least two samples for a non-empty denominator");
  require(tau_c > 0.0, ErrorKind::InvalidArgument, "tau_c must be positive");
  const std::size_t b = h_a.size();
  TermResult r;
  r.grad_a = zeros_like(h_a);
  r.grad_b = zeros_like(h_b);
  const double scale = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<Candidate> cands;
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i) cands.push_back({&h_a[j], &r.grad_a[j]});
    }
    if (denominator == ContrastiveDenominator::AnchorViews) cands.push_back({&h_b[i], &r.grad_b[i]});
    r.value += info_nce_anchor(h_a[i], r.grad_a[i], {{&h_b[i], &r.grad_b[i]}}, cands, tau_c, scale);
  }
  r.value *= scale;
  return r;
}

TermResult loss_con_l(const std::vector<Vector>& h_a, const std::vector<Vector>& h_b,
                      const std::vector<int>& labels, double tau_c,
                      ContrastiveDenominator denominator) {
  require_paired(h_a, h_b, "loss_con_l");
  require(labels.size() == h_a.size() && !h_a.empty(), ErrorKind::InvalidArgument,
          "loss_con_l: empty batch or label count mismatch");
  require(tau_c > 0.0, ErrorKind::InvalidArgument, "tau_c must be positive");
  const std::size_t b = h_a.size();
  TermResult r;
  r.grad_a = zeros_like(h_a);
  r.grad_b = zeros_like(h_b);
  const double scale = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<Candidate> positives;
    std::vector<Candidate> cands;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      cands.push_back({&h_a[j], &r.grad_a[j]});
      if (labels[j] == labels[i]) positives.push_back({&h_a[j], &r.grad_a[j]});
    }
    if (positives.empty()) {
      ++r.empty_positive;
      continue;
    }
    if (denominator == ContrastiveDenominator::AnchorViews) cands.push_back({&h_b[i], &r.grad_b[i]});
    r.value += info_nce_anchor(h_a[i], r.grad_a[i], positives, cands, tau_c, scale);
  }
  r.value *= scale;
  return r;
}

TermResult loss_entropy(const std::vector<Vector>& p_a, const std::vector<Vector>& p_b) {
  require_paired(p_a, p_b, "loss_entropy");
  require(!p_a.empty(), ErrorKind::InvalidArgument, "loss_entropy of an empty batch");
  const std::size_t k = p_a[0].size();
  const double scale = 1.0 / (2.0 * static_cast<double>(p_a.size()));
  Vector mean(k, 0.0);
  for (std::size_t i = 0; i < p_a.size(); ++i) {
    for (std::size_t c = 0; c < k; ++c) mean[c] += p_a[i][c] + p_b[i][c];
  }
  for (double& x : mean) x *= scale;
  TermResult r;
  Vector g(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (mean[c] > 0.0) r.value += mean[c] * std::log(mean[c]);
    g[c] = scale * (std::log(std::max(mean[c], kCrossEntropyEps)) + 1.0);
  }
  r.grad_a.assign(p_a.size(), g);
  r.grad_b.assign(p_b.size(), g);
  return r;
}

SepResult loss_sep(const Matrix& mu, double tau_sep) {
  const std::size_t k = mu.rows();
  require(k >= 2, ErrorKind::InvalidArgument, "loss_sep needs at least two prototypes");
  require(tau_sep > 0.0, ErrorKind::InvalidArgument, "tau_sep must be positive");
  SepResult r;
  r.grad = Matrix(k, mu.cols());
  const double scale = 1.0 / static_cast<double>(k);
  const double log_others = std::log(static_cast<double>(k - 1));
  Vector sims(k - 1);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0, n = 0; j < k; ++j) {
      if (j != i) sims[n++] = dot(mu.row(i), mu.row(j)) / tau_sep;
    }
    const double lse = numerics::log_sum_exp(sims);
    r.value += lse - log_others;
    for (std::size_t j = 0, n = 0; j < k; ++j) {
      if (j == i) continue;
      const double w = std::exp(sims[n++] - lse) * scale / tau_sep;
      axpy(w, mu.row(j), r.grad.row(i));
      axpy(w, mu.row(i), r.grad.row(j));
    }
  }
  r.value *= scale;
  return r;
}

Vector softmax_backward(std::span<const double> p, std::span<const double> dp, double temperature) {
  require(p.size() == dp.size(), ErrorKind::InvalidArgument, "softmax_backward size mismatch");
  const double inner = dot(p, dp);
  Vector out(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = p[k] * (dp[k] - inner) / temperature;
  return out;
}

LossBreakdown total_loss(const BatchViews& batch, const PrototypeSet& protos,
                         const LossWeights& weights, const Temperatures& temps,
                         LossGradients* grads) {
  weights.validate();
  temps.validate();
  const std::size_t b = batch.size();
  require(b >= 2, ErrorKind::InvalidArgument, "total_loss needs a batch of at least two");
  require(batch.z_b.size() == b && batch.h_a.size() == b && batch.h_b.size() == b &&
              batch.target_a.size() == b && batch.target_b.size() == b && batch.labels.size() == b,
          ErrorKind::InvalidArgument, "batch fields have inconsistent sizes");

  std::vector<Vector> la(b), lb(b), pa(b), pb(b), ea(b), eb(b);
  for (std::size_t i = 0; i < b; ++i) {
    la[i] = logits(batch.z_a[i], protos);
    lb[i] = logits(batch.z_b[i], protos);
    pa[i] = numerics::softmax(la[i], temps.tau_stu);
    pb[i] = numerics::softmax(lb[i], temps.tau_stu);
    ea[i] = numerics::softmax(la[i], temps.tau_base);
    eb[i] = numerics::softmax(lb[i], temps.tau_base);
  }

  std::vector<std::size_t> lab;
  for (std::size_t i = 0; i < b; ++i) {
    if (batch.labels[i]) lab.push_back(i);
  }

  const double ls = weights.lambda_sup;
  LossBreakdown out;
  const TermResult dapl = loss_dapl(batch.target_a, batch.target_b, pa, pb);
  const TermResult con_u = loss_con_u(batch.h_a, batch.h_b, temps.tau_c, weights.denominator);
  const TermResult ent = loss_entropy(ea, eb);
  const SepResult sep = loss_sep(protos.mu, temps.tau_sep);
  TermResult sup, con_l;
  if (!lab.empty()) {
    std::vector<Vector> spa, spb, sha, shb;
    std::vector<std::optional<int>> sl;
    std::vector<int> il;
    for (std::size_t i : lab) {
      spa.push_back(pa[i]);
      spb.push_back(pb[i]);
      sha.push_back(batch.h_a[i]);
      shb.push_back(batch.h_b[i]);
      sl.push_back(batch.labels[i]);
      il.push_back(*batch.labels[i]);
    }
    sup = loss_sup(sl, spa, spb);
    con_l = loss_con_l(sha, shb, il, temps.tau_c, weights.denominator);
  }
  out.dapl = dapl.value;
  out.con_u = con_u.value;
  out.sup = sup.value;
  out.con_l = con_l.value;
  out.entropy = ent.value;
  out.sep = sep.value;
  out.clamped = dapl.clamped + sup.clamped;
  out.empty_positive = con_l.empty_positive;
  out.total = (1.0 - ls) * (out.dapl + out.con_u) + ls * (out.sup + out.con_l) +
              weights.lambda_entropy * out.entropy + weights.lambda_sep * out.sep;
  require(std::isfinite(out.total), ErrorKind::NumericalFailure, "total loss is not finite");
  if (!grads) return out;

  const std::size_t k = protos.mu.rows();
  const std::size_t d = protos.mu.cols();
  grads->dz_a.assign(b, Vector(d, 0.0));
  grads->dz_b.assign(b, Vector(d, 0.0));
  grads->dh_a.assign(b, Vector(batch.h_a[0].size(), 0.0));
  grads->dh_b.assign(b, Vector(batch.h_b[0].size(), 0.0));
  grads->dmu = Matrix(k, d);
  for (std::size_t i = 0; i < b; ++i) {
    axpy(1.0 - ls, con_u.grad_a[i], grads->dh_a[i]);
    axpy(1.0 - ls, con_u.grad_b[i], grads->dh_b[i]);
  }
  for (std::size_t n = 0; n < lab.size(); ++n) {
    axpy(ls, con_l.grad_a[n], grads->dh_a[lab[n]]);
    axpy(ls, con_l.grad_b[n], grads->dh_b[lab[n]]);
  }

  auto pull_back = [&](const Vector& z, const Vector& p, const Vector& e, Vector dp,
                       const Vector& de, Vector& dz) {
    Vector dl = softmax_backward(p, dp, temps.tau_stu);
    const Vector dle = softmax_backward(e, de, temps.tau_base);
    axpy(weights.lambda_entropy, dle, dl);
    for (std::size_t c = 0; c < k; ++c) {
      axpy(dl[c], protos.mu.row(c), dz);
      axpy(dl[c], z, grads->dmu.row(c));
    }
  };
  std::vector<Vector> dpa(b, Vector(k, 0.0)), dpb(b, Vector(k, 0.0));
  for (std::size_t i = 0; i < b; ++i) {
    axpy(1.0 - ls, dapl.grad_a[i], dpa[i]);
    axpy(1.0 - ls, dapl.grad_b[i], dpb[i]);
  }
  for (std::size_t n = 0; n < lab.size(); ++n) {
    axpy(ls, sup.grad_a[n], dpa[lab[n]]);
    axpy(ls, sup.grad_b[n], dpb[lab[n]]);
  }
  for (std::size_t i = 0; i < b; ++i) {
    pull_back(batch.z_a[i], pa[i], ea[i], dpa[i], ent.grad_a[i], grads->dz_a[i]);
    pull_back(batch.z_b[i], pb[i], eb[i], dpb[i], ent.grad_b[i], grads->dz_b[i]);
  }
  axpy(weights.lambda_sep, sep.grad.flat(), grads->dmu.flat());
  return out;
}

}  // namespace protoncd
