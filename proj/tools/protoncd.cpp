// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "protoncd/config.hpp"
#include "protoncd/data.hpp"
#include "protoncd/discovery.hpp"
#include "protoncd/error.hpp"
#include "protoncd/kernels.hpp"
#include "protoncd/report.hpp"
#include "protoncd/trainer.hpp"

namespace fs = std::filesystem;
using namespace protoncd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct SynthArgs {
  std::string kind;
  std::string output;
  VmfMixtureOptions vmf;
  ToyImageOptions toy;
};

struct RunArgs {
  std::string config;
  std::string candidates;
  bool dry_run = false;
  int jobs = -1;
};

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string output_dir = "out";
  std::string method = "msp";
  std::optional<double> temperature;
  std::optional<double> threshold;
  int jobs = -1;
};

int run_synth(const SynthArgs& a) {
  const Dataset ds = a.kind == "vmf" ? synth_vmf_mixture(a.vmf) : synth_toy_images(a.toy);
  const fs::path out(a.output);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(ds, out);
  const std::string digest = dataset_digest(ds);
  write_text(fs::path(a.output + ".digest"), digest + "\n");
  std::cout << "wrote " << ds.samples.size() << " samples to " << a.output << " (digest " << digest << ")\n";
  return kExitOk;
}

struct Loaded {
  ExperimentConfig config;
  Dataset dataset;
  std::string digest;
};

Loaded load_run(const RunArgs& a) {
  Loaded l;
  l.config = load_experiment_config(a.config);
  if (a.jobs >= 0) l.config.jobs = a.jobs;
  set_worker_count(l.config.jobs);
  require(!l.config.dataset.empty(), ErrorKind::ConfigError, "config has no dataset path");
  fs::path path(l.config.dataset);
  if (path.is_relative() && !fs::exists(path)) path = fs::path(a.config).parent_path() / path;
  require(fs::exists(path), ErrorKind::ConfigError, "dataset not found: " + l.config.dataset);
  l.dataset = load_dataset(path);
  l.digest = dataset_digest(l.dataset);
  return l;
}

int run_train(const RunArgs& a) {
  const Loaded l = load_run(a);
  const TrainConfig& tc = l.config.train;
  require(tc.k_new.has_value(), ErrorKind::ConfigError,
          "train.k_new is \"estimate\"; run estimate-k first or set it to an integer");
  if (a.dry_run) {
    init_checkpoint(l.dataset, tc, *tc.k_new);  // catches shape and label problems
    std::cout << "config and dataset ok: " << l.dataset.samples.size() << " samples, "
              << total_steps(l.dataset, tc) << " steps planned\n";
    return kExitOk;
  }
  const TrainResult r = train(l.dataset, tc, *tc.k_new);
  const fs::path dir(l.config.output_dir);
  fs::create_directories(dir);
  save_checkpoint(r.checkpoint, dir / "checkpoint.json");
  write_log_csv(r.log, dir / "train_log.csv");

  Json report = report_header("train", l.config, l.digest);
  report["k_new"] = *tc.k_new;
  report["steps"] = r.checkpoint.step;
  report["aborted"] = r.aborted;
  if (r.aborted) report["abort_reason"] = r.abort_reason;
  if (!r.log.empty()) report["final_loss"] = to_json(r.log.back().loss);
  bool have_truth = !l.dataset.indices_of(Split::Unlabeled).empty();
  for (std::size_t i : l.dataset.indices_of(Split::Unlabeled)) have_truth = have_truth && l.dataset.samples[i].label;
  if (have_truth) {
    report["metrics"] = to_json(evaluate_discovery(r.checkpoint.state.student, l.dataset, tc.rg, tc.exec));
  }
  write_text(dir / "train_report.json", dump_report(report));
  if (r.aborted) {
    std::cerr << "error: training aborted at step " << r.checkpoint.step << ": " << r.abort_reason << "\n";
    return kExitNumerical;
  }
  std::cout << "trained " << r.checkpoint.step << " steps; report in " << (dir / "train_report.json").string()
            << "\n";
  if (have_truth) {
    std::cout << "nmi " << report["metrics"]["nmi"].get<double>() << " ari " << report["metrics"]["ari"].get<double>()
              << " f1 " << report["metrics"]["f1"].get<double>() << "\n";
  }
  return kExitOk;
}

int run_estimate(const RunArgs& a) {
  Loaded l = load_run(a);
  if (!a.candidates.empty()) l.config.candidates = parse_candidate_range(a.candidates);
  if (!l.config.candidates && l.dataset.k_new_true) {
    l.config.candidates = CandidateRange{1, std::max(1, 2 * *l.dataset.k_new_true)};
  }
  require(l.config.candidates.has_value(), ErrorKind::ConfigError,
          "no candidate range: pass --candidates a..b or set \"candidates\" in the config");
  if (a.dry_run) {
    std::cout << "config and dataset ok\n";
    return kExitOk;
  }
  EstimateOptions opt;
  opt.tie_tolerance = l.config.tie_tolerance;
  const EstimateResult r = estimate_k_new(l.dataset, *l.config.candidates, l.config.train, opt);
  const fs::path dir(l.config.output_dir);
  fs::create_directories(dir);
  write_text(dir / "candidates.csv", candidates_csv(r.candidates));
  Json report = report_header("estimate-k", l.config, l.digest);
  report["candidates"] = to_json(r.candidates);
  report["chosen_k_new"] = r.chosen_k_new;
  write_text(dir / "estimate_report.json", dump_report(report));
  std::cout << candidates_csv(r.candidates) << "chosen k_new = " << r.chosen_k_new << "\n";
  return kExitOk;
}

struct EvalInputs {
  Checkpoint checkpoint;
  Dataset dataset;
  ExperimentConfig echo;
  std::string digest;
};

EvalInputs load_eval(const EvalArgs& a) {
  if (a.jobs >= 0) set_worker_count(a.jobs);
  EvalInputs in;
  require(fs::exists(a.checkpoint), ErrorKind::ConfigError, "checkpoint not found: " + a.checkpoint);
  require(fs::exists(a.dataset), ErrorKind::ConfigError, "dataset not found: " + a.dataset);
  in.checkpoint = load_checkpoint(a.checkpoint);
  in.dataset = load_dataset(a.dataset);
  in.digest = dataset_digest(in.dataset);
  const Model& m = in.checkpoint.state.student;
  const int d_ck = m.encoder.config.d_in;
  const int d_ds = in.dataset.layout.d_in;
  if (d_ck != d_ds || m.protos.k_base != in.dataset.k_base) {
    std::ostringstream msg;
    msg << "checkpoint/dataset shape mismatch: checkpoint has d_in=" << d_ck << ", K_base=" << m.protos.k_base
        << ", K=" << m.protos.num_classes() << "; dataset has d_in=" << d_ds << ", K_base=" << in.dataset.k_base;
    fail(ErrorKind::ValidationError, msg.str());
  }
  in.echo.dataset = a.dataset;
  in.echo.output_dir = a.output_dir;
  in.echo.train = in.checkpoint.config;
  in.echo.jobs = a.jobs < 0 ? 0 : a.jobs;
  return in;
}

int run_eval(const EvalArgs& a) {
  const EvalInputs in = load_eval(a);
  const TrainConfig& tc = in.checkpoint.config;
  const DiscoveryMetrics m = evaluate_discovery(in.checkpoint.state.student, in.dataset, tc.rg, tc.exec);
  Json report = report_header("eval", in.echo, in.digest);
  report["checkpoint_step"] = in.checkpoint.step;
  report["metrics"] = to_json(m);
  fs::create_directories(a.output_dir);
  write_text(fs::path(a.output_dir) / "eval_report.json", dump_report(report));
  std::cout << "nmi " << m.cluster.nmi << " ari " << m.cluster.ari << " f1 " << m.cluster.f1 << " novel_acc "
            << m.novel_accuracy << "\n";
  return kExitOk;
}

int run_ood(const EvalArgs& a) {
  const OodMethod method = parse_ood_method(a.method);
  EvalInputs in = load_eval(a);
  const TrainConfig& tc = in.checkpoint.config;
  const double temperature = a.temperature.value_or(tc.temps.tau);
  in.echo.energy_temperature = temperature;
  in.echo.ood_threshold = a.threshold;
  const OodResult r =
      evaluate_ood(in.checkpoint.state.student, in.dataset, method, temperature, tc.rg, a.threshold, tc.exec);
  Json report = report_header("ood", in.echo, in.digest);
  report["checkpoint_step"] = in.checkpoint.step;
  report["ood"] = to_json(r);
  fs::create_directories(a.output_dir);
  const fs::path dir(a.output_dir);
  write_text(dir / ("ood_report_" + a.method + ".json"), dump_report(report));
  std::ostringstream csv;
  csv.precision(17);
  csv << "id,score,is_id,flagged_ood\n";
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    csv << r.ids[i] << ',' << r.scores[i] << ',' << (r.is_id[i] ? 1 : 0) << ',' << (r.scores[i] < r.threshold ? 1 : 0)
        << '\n';
  }
  write_text(dir / ("ood_scores_" + a.method + ".csv"), csv.str());
  std::cout << "method " << a.method << " auroc " << r.auroc << " fpr95 " << r.fpr95 << " threshold " << r.threshold
            << "\n";
  return kExitOk;
}

void add_run_options(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_flag("--dry-run", a.dry_run, "validate config and dataset, then stop");
  cmd->add_option("--jobs", a.jobs, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
}

void add_eval_options(CLI::App* cmd, EvalArgs& a) {
  cmd->add_option("--checkpoint", a.checkpoint, "checkpoint file")->required();
  cmd->add_option("--dataset", a.dataset, "dataset file (JSONL)")->required();
  cmd->add_option("--output-dir", a.output_dir, "report directory");
  cmd->add_option("--jobs", a.jobs, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-based novel class discovery on patch-grid data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(artifact_version()));

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->require_subcommand(1);
  CLI::App* vmf = synth_cmd->add_subcommand("vmf", "vMF mixture with 1x1 patch grids");
  vmf->add_option("--classes", synth.vmf.k_classes, "anomaly classes (base + novel)")->check(CLI::PositiveNumber);
  vmf->add_option("--base", synth.vmf.k_base, "base classes (default: classes - classes/2)");
  vmf->add_option("--dim", synth.vmf.d_in, "feature dimension")->check(CLI::Range(2, 1 << 16));
  vmf->add_option("--kappa", synth.vmf.kappa, "concentration")->check(CLI::NonNegativeNumber);
  vmf->add_option("--per-class", synth.vmf.n_per_class, "samples per class")->check(CLI::PositiveNumber);
  vmf->add_flag("--with-normal", synth.vmf.with_normal, "add a normal class");
  vmf->add_option("--labeled-fraction", synth.vmf.labeled_fraction)->check(CLI::Range(0.0, 1.0));
  vmf->add_option("--ood-classes", synth.vmf.ood_classes, "held-out classes marked split=ood")
      ->check(CLI::NonNegativeNumber);
  vmf->add_option("--seed", synth.vmf.seed);
  CLI::App* toy = synth_cmd->add_subcommand("toy", "toy images with implanted local anomalies");
  toy->add_option("--types", synth.toy.k_anomaly_types)->check(CLI::PositiveNumber);
  toy->add_option("--base", synth.toy.k_base);
  toy->add_option("--grid", synth.toy.grid, "patches per side")->check(CLI::PositiveNumber);
  toy->add_option("--cell", synth.toy.cell, "pixels per patch side")->check(CLI::PositiveNumber);
  toy->add_option("--dim", synth.toy.d_in)->check(CLI::PositiveNumber);
  toy->add_option("--per-class", synth.toy.n_per_class)->check(CLI::PositiveNumber);
  toy->add_option("--implant", synth.toy.implant_size, "implant side in pixels")->check(CLI::PositiveNumber);
  toy->add_flag("--disjoint", synth.toy.disjoint_locations);
  toy->add_option("--labeled-fraction", synth.toy.labeled_fraction)->check(CLI::Range(0.0, 1.0));
  toy->add_option("--seed", synth.toy.seed);
  for (CLI::App* sub : {vmf, toy}) {
    sub->add_option("-o,--output", synth.output, "dataset path (a .digest file is written next to it)")
        ->required();
    sub->callback([&synth, sub] { synth.kind = sub->get_name(); });
  }

  RunArgs train_args, estimate_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config");
  add_run_options(train_cmd, train_args);
  CLI::App* estimate_cmd = app.add_subcommand("estimate-k", "sweep K_new candidates and pick the best");
  add_run_options(estimate_cmd, estimate_args);
  estimate_cmd->add_option("--candidates", estimate_args.candidates, "range a..b");

  EvalArgs eval_args, ood_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "clustering metrics of a checkpoint");
  add_eval_options(eval_cmd, eval_args);
  CLI::App* ood_cmd = app.add_subcommand("ood", "OOD scores of a checkpoint");
  add_eval_options(ood_cmd, ood_args);
  ood_cmd->add_option("--method", ood_args.method, "msp, mls or energy");
  ood_cmd->add_option("--temperature", ood_args.temperature, "softmax/energy temperature (default: tau)")
      ->check(CLI::PositiveNumber);
  ood_cmd->add_option("--threshold", ood_args.threshold, "OOD decision threshold (default: FPR95 point)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(train_args);
    if (*estimate_cmd) return run_estimate(estimate_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*ood_cmd) return run_ood(ood_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::NumericalFailure ? kExitNumerical : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
