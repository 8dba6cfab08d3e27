// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

// End-to-end acceptance gate. Prints one PASS/FAIL line per criterion on
// stdout (details go to stderr) and exits non-zero if any criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "../cluster_oracles.hpp"
#include "protoncd/discovery.hpp"
#include "protoncd/kernels.hpp"
#include "protoncd/numerics.hpp"
#include "protoncd/report.hpp"

namespace protoncd {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << x;
  return s.str();
}

// ---------- shared fixtures ----------

constexpr int kSeeds = 10;

Dataset benchmark_dataset(std::uint64_t seed, int ood_classes = 0) {
  VmfMixtureOptions o;
  o.k_classes = 5;
  o.k_base = 3;
  o.d_in = 16;
  o.kappa = 20.0;
  o.n_per_class = 200;
  o.with_normal = true;
  o.ood_classes = ood_classes;
  o.seed = seed;
  return synth_vmf_mixture(o);
}

TrainConfig benchmark_config(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.epochs = 40;
  c.temps.tau_base = 0.1;
  c.ema_momentum = 0.9;
  return c;
}

Vector flatten(const EncoderParams& p) {
  Vector out;
  for (const Matrix* m : p.tensors()) out.insert(out.end(), m->flat().begin(), m->flat().end());
  return out;
}

void unflatten(std::span<const double> x, EncoderParams& p) {
  std::size_t at = 0;
  for (Matrix* m : p.tensors()) {
    std::copy(x.begin() + at, x.begin() + at + m->size(), m->flat().begin());
    at += m->size();
  }
}

// ---------- 1. gradient fidelity ----------

struct GradBatch {
  std::vector<Matrix> patches;
  std::vector<Vector> scores;
  std::vector<Vector> target_a, target_b;
  std::vector<std::optional<int>> labels;
  std::vector<EncodeJob> jobs;  // view a of every sample, then view b
};

GradBatch make_grad_batch(std::uint64_t seed, int d_in, int k, int b) {
  Rng rng(seed);
  GradBatch g;
  const int patches = 3;
  for (int v = 0; v < 2 * b; ++v) {
    Matrix m(patches, d_in);
    for (double& x : m.flat()) x = rng.normal();
    g.patches.push_back(std::move(m));
    Vector s(patches);
    for (double& x : s) x = rng.uniform();  // covers all three guidance branches
    g.scores.push_back(std::move(s));
  }
  for (int i = 0; i < b; ++i) {
    for (auto* t : {&g.target_a, &g.target_b}) {
      Vector logit(k);
      for (double& x : logit) x = 2.0 * rng.normal();
      t->push_back(numerics::softmax(logit, 1.0));
    }
    // two labeled samples sharing a class, the rest unlabeled
    g.labels.push_back(i < 2 ? std::optional<int>(0) : std::nullopt);
  }
  for (int v = 0; v < 2 * b; ++v) g.jobs.push_back({&g.patches[v], g.scores[v]});
  return g;
}

BatchViews to_views(const GradBatch& g, const std::vector<EncodeOutput>& out) {
  const std::size_t b = g.target_a.size();
  BatchViews v;
  for (std::size_t i = 0; i < b; ++i) {
    v.z_a.push_back(out[i].z);
    v.h_a.push_back(out[i].h);
    v.z_b.push_back(out[b + i].z);
    v.h_b.push_back(out[b + i].h);
  }
  v.target_a = g.target_a;
  v.target_b = g.target_b;
  v.labels = g.labels;
  return v;
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  EncoderConfig ec;
  ec.d_in = 6;
  ec.d_model = 32;
  ec.heads = 4;
  ec.layers = 2;
  ec.d_ff = 64;
  ec.d_proj = 16;
  const LossWeights weights;
  const Temperatures temps;
  const RegionGuidanceParams rg;
  const int batches = 5;
  long checked = 0;
  double worst = 0.0;  // largest |a - n| / max(floor, rel * scale) seen
  for (int bi = 0; bi < batches; ++bi) {
    EncoderParams params = EncoderParams::init(ec, 100 + bi);
    Rng jitter(200 + bi);
    for (Matrix* m : params.tensors()) {
      for (double& x : m->flat()) x += 0.05 * jitter.normal();
    }
    const PrototypeSet protos = init_prototypes(2, 2, ec.d_model, 300 + bi);
    const GradBatch g = make_grad_batch(400 + bi, ec.d_in, protos.num_classes(), 3);

    std::vector<ForwardCache> caches;
    const auto out = encode_batch(g.jobs, params, rg, &caches, ExecMode::Serial);
    LossGradients lg;
    total_loss(to_views(g, out), protos, weights, temps, &lg);
    std::vector<Vector> dz = lg.dz_a, dh = lg.dh_a;
    dz.insert(dz.end(), lg.dz_b.begin(), lg.dz_b.end());
    dh.insert(dh.end(), lg.dh_b.begin(), lg.dh_b.end());
    EncoderParams grad = EncoderParams::zeros(ec);
    backward_batch(params, caches, dz, dh, grad, ExecMode::Serial);

    auto f_params = [&](std::span<const double> x) {
      EncoderParams w = params;  // per call: the sweep runs coordinates concurrently
      unflatten(x, w);
      const auto o = encode_batch(g.jobs, w, rg, nullptr, ExecMode::Serial);
      return total_loss(to_views(g, o), protos, weights, temps).total;
    };
    auto f_mu = [&](std::span<const double> x) {
      PrototypeSet p = protos;
      std::copy(x.begin(), x.end(), p.mu.flat().begin());
      return total_loss(to_views(g, out), p, weights, temps).total;
    };
    const Vector num_p = finite_diff_grad(f_params, flatten(params), 1e-5, ExecMode::Parallel);
    const Vector num_mu = finite_diff_grad(f_mu, protos.mu.flat(), 1e-5, ExecMode::Parallel);
    const Vector ana_p = flatten(grad);
    auto compare = [&](std::span<const double> a, std::span<const double> n) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double tol = std::max(1e-6, 1e-4 * std::max(std::abs(a[i]), std::abs(n[i])));
        worst = std::max(worst, std::abs(a[i] - n[i]) / tol);
        ++checked;
      }
    };
    compare(ana_p, num_p);
    compare(lg.dmu.flat(), num_mu);
    std::cerr << "  [1] batch " << bi << " done, worst ratio so far " << fmt(worst) << " ("
              << fmt(seconds_since(t0), 3) << " s)\n";
  }
  const double elapsed = seconds_since(t0);
  const bool pass = worst <= 1.0 && elapsed < 120.0;
  return {pass, std::to_string(batches) + " batches, " + std::to_string(checked) +
                    " coordinates, worst error/tolerance " + fmt(worst) + ", " + fmt(elapsed, 3) + " s (limit 120 s)"};
}

// ---------- 2. vMF consistency ----------

Outcome vmf_consistency() {
  double worst_ratio = 0.0;
  for (int d : {3, 8}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(seed * 31 + d);
      const PrototypeSet protos = init_prototypes(2, 1, d, seed);
      const Vector z = sample_uniform_sphere(d, rng);
      for (double tau : {0.05, 0.1, 0.5, 1.0}) {
        const double kappa = 1.0 / tau;
        const Vector p = vmf_posterior(z, protos, tau);
        // density ratio with the normalizer kept explicit
        Vector log_f(protos.num_classes());
        for (int c = 0; c < protos.num_classes(); ++c) {
          log_f[c] = numerics::vmf_log_normalizer(d, kappa) + kappa * dot(protos.mu.row(c), z);
        }
        const double lse = numerics::log_sum_exp(log_f);
        for (int c = 0; c < protos.num_classes(); ++c) {
          worst_ratio = std::max(worst_ratio, std::abs(p[c] - std::exp(log_f[c] - lse)));
        }
      }
    }
  }
  double worst_sinh = 0.0;
  for (double kappa = 1e-3; kappa <= 650.0; kappa *= 1.37) {
    const double log_sinh = kappa + std::log1p(-std::exp(-2.0 * kappa)) - std::log(2.0);
    const double closed = std::log(kappa) - std::log(4.0 * std::numbers::pi) - log_sinh;
    worst_sinh = std::max(worst_sinh, std::abs(numerics::vmf_log_normalizer(3, kappa) - closed));
  }
  double worst_mc = 0.0;
  Rng rng(2024);
  const Vector mu{0.0, 0.0, 1.0};
  for (double kappa : {1.0, 5.0, 20.0}) {
    const double log_c = numerics::vmf_log_normalizer(3, kappa);
    const int n = 4'000'000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(log_c + kappa * dot(mu, sample_uniform_sphere(3, rng)));
    worst_mc = std::max(worst_mc, std::abs(4.0 * std::numbers::pi * sum / n - 1.0));
  }
  const bool pass = worst_ratio <= 1e-9 && worst_sinh <= 1e-9 && worst_mc <= 1e-2;
  return {pass, "posterior vs density ratio " + fmt(worst_ratio, 3) + " (tol 1e-9), d=3 vs sinh form " +
                    fmt(worst_sinh, 3) + " (tol 1e-9), Monte Carlo mass error " + fmt(worst_mc, 3) + " (tol 1e-2)"};
}

// ---------- 3. metric oracles ----------

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  long pairs = 0;
  double worst = 0.0;
  for (int n = 1; n <= 8; ++n) {
    const auto parts = oracle::partitions(n, 3);
    for (const auto& truth : parts) {
      for (const auto& pred : parts) {
        const ClusterEval e = cluster_eval(truth, pred);
        worst = std::max({worst, std::abs(e.nmi - oracle::nmi_oracle(truth, pred)),
                          std::abs(e.ari - oracle::ari_oracle(truth, pred)),
                          std::abs(e.f1 - oracle::f1_oracle(truth, pred))});
        ++pairs;
      }
    }
  }
  int hungarian_ok = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    Matrix c(7, 7);
    for (double& x : c.flat()) x = rng.normal();
    double best = 0.0;
    const auto expected = oracle::brute_assignment(c, &best);
    const Assignment a = hungarian(c);
    hungarian_ok += a.row_to_col == expected && std::abs(a.cost - best) <= 1e-12;
  }
  double worst_auroc = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 5000);
    const std::size_t n = 10 + rng.index(300);
    Vector s(n);
    std::vector<bool> id(n);
    for (std::size_t i = 0; i < n; ++i) {
      id[i] = i == 0 || (i != 1 && rng.uniform() < 0.5);
      s[i] = std::round((rng.normal() + (id[i] ? 0.5 : 0.0)) * 8.0) / 8.0;
    }
    worst_auroc = std::max(worst_auroc, std::abs(auroc(s, id) - oracle::auroc_oracle(s, id)));
  }
  const bool pass = worst <= 1e-12 && hungarian_ok == 200 && worst_auroc <= 1e-12;
  return {pass, std::to_string(pairs) + " partition pairs, worst NMI/ARI/F1 gap " + fmt(worst, 3) +
                    "; Hungarian " + std::to_string(hungarian_ok) + "/200; AUROC worst gap " +
                    fmt(worst_auroc, 3) + " (" + fmt(seconds_since(t0), 3) + " s)"};
}

// ---------- 4. synthetic discovery benchmark ----------

Outcome discovery_benchmark() {
  int good = 0;
  double slowest = 0.0;
  std::string per_seed;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto t0 = Clock::now();
    const Dataset ds = benchmark_dataset(seed);
    const TrainConfig c = benchmark_config(seed);
    const TrainResult r = train(ds, c, 2);
    const DiscoveryMetrics m = evaluate_discovery(r.checkpoint.state.student, ds, c.rg);
    const double t = seconds_since(t0);
    slowest = std::max(slowest, t);
    const bool ok = !r.aborted && m.novel_accuracy >= 0.9 && m.cluster.nmi >= 0.85 && t < 300.0;
    good += ok;
    std::cerr << "  [4] seed " << seed << ": novel acc " << fmt(m.novel_accuracy) << ", nmi " << fmt(m.cluster.nmi)
              << ", " << fmt(t, 3) << " s" << (ok ? "" : " (miss)") << "\n";
  }
  return {good >= 8, std::to_string(good) + "/" + std::to_string(kSeeds) +
                         " seeds with novel acc >= 0.9 and NMI >= 0.85 (need 8); slowest seed " + fmt(slowest, 3) +
                         " s (limit 300 s)"};
}

// ---------- 5. class-count estimation ----------

// Relative tie tolerance for the sweep; scores of K_new >= 2 sit within about
// 1% of each other on this benchmark, so a strict arg max is noise-driven.
constexpr double kEstimateTieTolerance = 0.02;

Outcome class_count_estimation() {
  int good = 0, strict_good = 0;
  double centr1 = 0.0, centr2 = 0.0, acc2 = 0.0, acc_over = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto t0 = Clock::now();
    const Dataset ds = benchmark_dataset(seed);
    TrainConfig c = benchmark_config(seed);
    c.budget_mode = true;
    c.budget_steps = 300;
    const EstimateResult r =
        estimate_k_new(ds, CandidateRange{1, 6}, c, {.tie_tolerance = kEstimateTieTolerance});
    good += r.chosen_k_new == 2;
    int strict = -1;
    double best = -1.0;
    for (const CandidateResult& row : r.candidates) {
      if (!row.failed && row.proto_score > best) {
        best = row.proto_score;
        strict = row.k_new_candidate;
      }
    }
    strict_good += strict == 2;
    centr1 += r.candidates[0].centr_score / kSeeds;
    centr2 += r.candidates[1].centr_score / kSeeds;
    acc2 += r.candidates[1].acc_score / kSeeds;
    for (std::size_t i = 2; i < r.candidates.size(); ++i) acc_over += r.candidates[i].acc_score / (4.0 * kSeeds);
    std::cerr << "  [5] seed " << seed << ": chosen " << r.chosen_k_new << ", strict arg max " << strict << ", "
              << fmt(seconds_since(t0), 3) << " s |";
    for (const CandidateResult& row : r.candidates) std::cerr << " " << row.k_new_candidate << ":" << fmt(row.proto_score);
    std::cerr << "\n";
  }
  return {good >= 8, std::to_string(good) + "/" + std::to_string(kSeeds) + " seeds chose K_new=2 (need 8) with tie tolerance " +
                         fmt(kEstimateTieTolerance) + "; strict arg max " + std::to_string(strict_good) + "/" +
                         std::to_string(kSeeds) + "; mean centr K=1 " + fmt(centr1) + " vs K=2 " + fmt(centr2) +
                         ", mean acc K=2 " + fmt(acc2) + " vs K>=3 " + fmt(acc_over)};
}

// ---------- 6. region guidance semantics ----------

Outcome region_guidance_semantics() {
  std::vector<std::string> problems;
  EncoderConfig ec;
  ec.d_in = 8;
  ec.d_model = 32;
  ec.heads = 4;
  ec.layers = 2;
  ec.d_ff = 64;
  ec.d_proj = 16;
  const EncoderParams params = EncoderParams::init(ec, 7);
  Rng rng(9);
  Matrix patches(9, 8);
  for (double& x : patches.flat()) x = rng.normal();

  // zero guidance vs no guidance, both modes
  for (GuidanceMode mode : {GuidanceMode::ClsRowOnly, GuidanceMode::AllTokens}) {
    RegionGuidanceParams rg;
    rg.mode = mode;
    const EncodeOutput a = encode(patches, {}, params, rg);
    const EncodeOutput b = encode(patches, Vector(9, 0.0), params, rg);
    if (a.z != b.z || a.h != b.h || a.attention_cls != b.attention_cls) problems.push_back("zero guidance changed output");
  }
  // paper_literal masking
  {
    RegionGuidanceParams rg;
    rg.high_branch = HighBranch::PaperLiteral;
    Vector s(9, 0.0);
    s[2] = rg.tau2;
    s[5] = 1.0;
    const EncodeOutput o = encode(patches, s, params, rg);
    for (const Vector& head : o.attention_cls) {
      if (head[1 + 2] != 0.0 || head[1 + 5] != 0.0) problems.push_back("masked patch kept CLS attention");
    }
  }
  // continuity at tau1 and monotonicity on [tau1, tau2)
  {
    const RegionGuidanceParams rg;
    const double below = region_guidance(std::nextafter(rg.tau1, 0.0), rg);
    const double at = region_guidance(rg.tau1, rg);
    const double above = region_guidance(rg.tau1 * (1.0 + 1e-12), rg);
    if (below != 0.0 || at != 0.0 || above > 1e-11) problems.push_back("discontinuous at tau1");
    double prev = region_guidance(rg.tau1, rg);
    for (int i = 1; i <= 10000; ++i) {
      const double s = rg.tau1 + (rg.tau2 - rg.tau1) * i / 10001.0;
      const double g = region_guidance(s, rg);
      if (!(g > prev)) {
        problems.push_back("not increasing on [tau1, tau2)");
        break;
      }
      prev = g;
    }
  }
  // toy images: CLS attention mass on implanted patches with vs without guidance
  ToyImageOptions to;
  to.seed = 3;
  const Dataset toy = synth_toy_images(to);
  EncoderConfig tc = ec;
  tc.d_in = toy.layout.d_in;
  const EncoderParams tp = EncoderParams::init(tc, 11);
  RegionGuidanceParams rg;
  rg.mode = GuidanceMode::ClsRowOnly;
  double with = 0.0, without = 0.0;
  int count = 0;
  for (const Sample& s : toy.samples) {
    if (*s.label == toy.normal_label) continue;
    const Vector scores = pooled_scores(s, toy.layout);
    const EncodeOutput g = encode(s.patches, scores, tp, rg);
    const EncodeOutput v = encode(s.patches, {}, tp, rg);
    for (std::size_t h = 0; h < g.attention_cls.size(); ++h) {
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] <= 0.0) continue;
        with += g.attention_cls[h][1 + i];
        without += v.attention_cls[h][1 + i];
      }
    }
    ++count;
  }
  with /= count * static_cast<double>(tc.heads);
  without /= count * static_cast<double>(tc.heads);
  if (!(with > without)) problems.push_back("guidance did not raise attention on anomalies");
  std::string detail = problems.empty() ? "all semantic checks hold" : problems.front();
  detail += "; mean CLS mass on implanted patches " + fmt(with) + " with guidance vs " + fmt(without) +
            " without over " + std::to_string(count) + " anomalous toy images";
  return {problems.empty(), detail};
}

// ---------- 7. pseudo-label correction ----------

Outcome pseudo_label_contract() {
  Rng rng(77);
  int identity_bad = 0, simplex_bad = 0, monotone_bad = 0;
  const int n = 10000;
  for (int t = 0; t < n; ++t) {
    const int k = 2 + static_cast<int>(rng.index(8));
    Vector logit(k);
    for (double& x : logit) x = 3.0 * rng.normal();
    const Vector q = numerics::softmax(logit, 1.0);
    const int normal = static_cast<int>(rng.index(k));
    const double s = rng.uniform();
    const Vector r = refine_pseudo_label(q, s, normal);
    double sum = 0.0;
    bool nonneg = true;
    for (double x : r) {
      sum += x;
      nonneg = nonneg && x >= 0.0;
    }
    simplex_bad += !(nonneg && std::abs(sum - 1.0) <= 1e-12);
    const double s_hi = 0.5 + 0.5 * rng.uniform();
    identity_bad += refine_pseudo_label(q, s_hi, normal) != q;
    double prev = refine_pseudo_label(q, 0.5, normal)[normal];
    for (int i = 1; i <= 20; ++i) {
      const double cur = refine_pseudo_label(q, 0.5 - 0.025 * i, normal)[normal];
      monotone_bad += q[normal] < 1.0 ? !(cur > prev) : !(cur >= prev);
      prev = cur;
    }
  }
  return {identity_bad == 0 && simplex_bad == 0 && monotone_bad == 0,
          std::to_string(n) + " random inputs: identity violations " + std::to_string(identity_bad) +
              ", invalid simplices " + std::to_string(simplex_bad) + ", monotonicity violations " +
              std::to_string(monotone_bad)};
}

// ---------- 8. OOD extension ----------

Outcome ood_extension() {
  const Dataset ds = benchmark_dataset(0, 1);
  const TrainConfig c = benchmark_config(0);
  const TrainResult r = train(ds, c, 2);
  const Model& m = r.checkpoint.state.student;
  bool pass = !r.aborted;
  std::string detail;
  for (OodMethod method : {OodMethod::Msp, OodMethod::Mls, OodMethod::Energy}) {
    const OodResult o = evaluate_ood(m, ds, method, c.temps.tau, c.rg);
    pass = pass && o.auroc >= 0.8;
    detail += std::string(to_string(method)) + " AUROC " + fmt(o.auroc) + " FPR95 " + fmt(o.fpr95) + "; ";
  }
  // closed forms against the numerics layer, on the model's own logits
  const auto idx = ds.indices_of(Split::Ood);
  const Predictions p = predict(m, ds, idx, c.rg);
  double worst = 0.0;
  for (const Vector& l : p.logits) {
    const Vector soft = numerics::softmax(l, c.temps.tau);
    Vector scaled = l;
    for (double& x : scaled) x /= c.temps.tau;
    worst = std::max({worst,
                      std::abs(ood_score(l, OodMethod::Msp, c.temps.tau) - *std::max_element(soft.begin(), soft.end())),
                      std::abs(ood_score(l, OodMethod::Mls, c.temps.tau) - *std::max_element(l.begin(), l.end())),
                      std::abs(ood_score(l, OodMethod::Energy, c.temps.tau) -
                               c.temps.tau * numerics::log_sum_exp(scaled))});
  }
  pass = pass && worst <= 1e-12;
  detail += "closed-form gap " + fmt(worst, 3) + " (ID positive, " + std::to_string(idx.size()) + " held-out samples)";
  return {pass, detail};
}

// ---------- 9. determinism ----------

Outcome determinism() {
  std::vector<std::string> problems;
  if (serialize_dataset(benchmark_dataset(5, 1)) != serialize_dataset(benchmark_dataset(5, 1))) {
    problems.push_back("vMF dataset bytes differ");
  }
  ToyImageOptions to;
  to.seed = 4;
  if (serialize_dataset(synth_toy_images(to)) != serialize_dataset(synth_toy_images(to))) {
    problems.push_back("toy dataset bytes differ");
  }

  const Dataset ds = benchmark_dataset(5);
  TrainConfig c = benchmark_config(5);
  c.epochs = 4;
  ExperimentConfig echo;
  echo.dataset = "benchmark";
  echo.train = c;
  echo.train.k_new = 2;
  auto run = [&] {
    const TrainResult r = train(ds, c, 2);
    Json report = report_header("train", echo, dataset_digest(ds));
    report["metrics"] = to_json(evaluate_discovery(r.checkpoint.state.student, ds, c.rg));
    report["final_loss"] = to_json(r.log.back().loss);
    return std::make_tuple(serialize_checkpoint(r.checkpoint), log_csv(r.log), dump_report(report));
  };
  const auto [ck1, log1, rep1] = run();
  const auto [ck2, log2, rep2] = run();
  if (ck1 != ck2) problems.push_back("checkpoint bytes differ");
  if (log1 != log2) problems.push_back("training logs differ");
  if (rep1 != rep2) problems.push_back("report bytes differ");

  const long total = total_steps(ds, c);
  const TrainResult first = train(ds, c, 2, nullptr, total / 3);
  const Checkpoint reloaded = parse_checkpoint(serialize_checkpoint(first.checkpoint));
  const TrainResult rest = train(ds, c, 2, &reloaded);
  if (serialize_checkpoint(rest.checkpoint) != ck1) problems.push_back("resumed run differs from uninterrupted");

  return {problems.empty(), problems.empty() ? "datasets, checkpoints, logs and reports byte-identical; resume after " +
                                                   std::to_string(total / 3) + "/" + std::to_string(total) +
                                                   " steps equals the uninterrupted run"
                                             : problems.front()};
}

}  // namespace
}  // namespace protoncd

int main(int argc, char** argv) {
  using namespace protoncd;
  CLI::App app{"acceptance gate"};
  std::vector<int> only;
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 9))->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"vMF consistency", vmf_consistency},
      {"metric oracles", metric_oracles},
      {"synthetic discovery benchmark", discovery_benchmark},
      {"class-count estimation", class_count_estimation},
      {"region guidance semantics", region_guidance_semantics},
      {"pseudo-label correction contract", pseudo_label_contract},
      {"OOD extension", ood_extension},
      {"determinism", determinism},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
