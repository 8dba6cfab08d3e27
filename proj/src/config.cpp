// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "protoncd/error.hpp"

namespace protoncd {

namespace {

template <class E>
using EnumEntry = std::pair<E, std::string_view>;

constexpr EnumEntry<LrSchedule> kSchedules[] = {{LrSchedule::Constant, "constant"},
                                              {LrSchedule::Cosine, "cosine"}};
constexpr EnumEntry<GuidanceMode> kModes[] = {{GuidanceMode::ClsRowOnly, "cls_row_only"},
                                            {GuidanceMode::AllTokens, "all_tokens"}};
constexpr EnumEntry<HighBranch> kBranches[] = {{HighBranch::Saturate, "saturate"},
                                             {HighBranch::PaperLiteral, "paper_literal"}};
constexpr EnumEntry<GuidanceHeads> kHeads[] = {{GuidanceHeads::All, "all"},
                                             {GuidanceHeads::First, "first"}};
constexpr EnumEntry<ScoreReduction> kReductions[] = {{ScoreReduction::Max, "max"},
                                                   {ScoreReduction::Mean, "mean"}};
constexpr EnumEntry<ContrastiveDenominator> kDenominators[] = {
    {ContrastiveDenominator::AnchorViews, "anchor_views"},
    {ContrastiveDenominator::InBatchOnly, "in_batch_only"}};
constexpr EnumEntry<ExecMode> kExec[] = {{ExecMode::Serial, "serial"}, {ExecMode::Parallel, "parallel"}};
constexpr EnumEntry<OodMethod> kOod[] = {
    {OodMethod::Msp, "msp"}, {OodMethod::Mls, "mls"}, {OodMethod::Energy, "energy"}};

template <class E, std::size_t N>
std::string enum_name(const EnumEntry<E> (&table)[N], E value) {
  for (const auto& [e, name] : table) {
    if (e == value) return std::string(name);
  }
  fail(ErrorKind::InvalidArgument, "unnamed enum value");
}

template <class E, std::size_t N>
E enum_value(const EnumEntry<E> (&table)[N], std::string_view text, const std::string& where) {
  std::string options;
  for (const auto& [e, name] : table) {
    if (name == text) return e;
    options += options.empty() ? "" : ", ";
    options += name;
  }
  fail(ErrorKind::ConfigError,
       where + ": unknown value '" + std::string(text) + "' (expected one of {" + options + "})");
}

// Reads fields of one JSON object, remembering which keys were consumed so
// the leftovers can be rejected.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j.is_object(), ErrorKind::ConfigError, where() + " must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    const Json* v = take(key);
    if (!v) return;
    out = convert<T>(*v, key);
  }

  template <class E, std::size_t N>
  void get_enum(const char* key, const EnumEntry<E> (&table)[N], E& out) {
    const Json* v = take(key);
    if (!v) return;
    require(v->is_string(), ErrorKind::ConfigError, field(key) + " must be a string");
    out = enum_value(table, v->get<std::string>(), field(key));
  }

  const Json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      require(seen_.count(it.key()) > 0, ErrorKind::ConfigError,
              "unknown key '" + field(it.key().c_str()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  template <class T>
  T convert(const Json& v, const char* key) const {
    if constexpr (std::is_same_v<T, bool>) {
      require(v.is_boolean(), ErrorKind::ConfigError, field(key) + " must be a boolean");
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      require(v.is_number_unsigned(), ErrorKind::ConfigError,
              field(key) + " must be a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      require(v.is_number_integer(), ErrorKind::ConfigError, field(key) + " must be an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      require(v.is_number(), ErrorKind::ConfigError, field(key) + " must be a number");
    } else {
      require(v.is_string(), ErrorKind::ConfigError, field(key) + " must be a string");
    }
    return v.get<T>();
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

std::string_view to_string(OodMethod method) {
  for (const auto& [e, name] : kOod) {
    if (e == method) return name;
  }
  return "?";
}

OodMethod parse_ood_method(std::string_view text) { return enum_value(kOod, text, "method"); }

CandidateRange parse_candidate_range(std::string_view text) {
  const auto dots = text.find("..");
  require(dots != std::string_view::npos, ErrorKind::ConfigError,
          "candidate range must look like a..b");
  CandidateRange r;
  auto parse = [&](std::string_view s, int& out) {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    require(ec == std::errc() && ptr == s.data() + s.size() && !s.empty(), ErrorKind::ConfigError,
            "candidate range bound '" + std::string(s) + "' is not an integer");
  };
  parse(text.substr(0, dots), r.first);
  parse(text.substr(dots + 2), r.last);
  require(r.first >= 0 && r.first <= r.last, ErrorKind::ConfigError,
          "candidate range is empty: " + std::string(text));
  return r;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["lr_schedule"] = enum_name(kSchedules, c.lr_schedule);
  j["optimizer_momentum"] = c.optimizer_momentum;
  j["ema_momentum"] = c.ema_momentum;
  j["seed"] = c.seed;
  j["loss_weights"] = {{"lambda_sup", c.weights.lambda_sup},
                       {"lambda_entropy", c.weights.lambda_entropy},
                       {"lambda_sep", c.weights.lambda_sep},
                       {"label_blend", c.weights.label_blend},
                       {"contrastive_denominator", enum_name(kDenominators, c.weights.denominator)}};
  j["temperatures"] = {{"tau", c.temps.tau},         {"tau_sup", c.temps.tau_sup},
                       {"tau_stu", c.temps.tau_stu}, {"tau_c", c.temps.tau_c},
                       {"tau_sep", c.temps.tau_sep}, {"tau_base", c.temps.tau_base},
                       {"tau_teacher", c.temps.tau_teacher}};
  j["region_guidance"] = {{"tau1", c.rg.tau1},
                          {"tau2", c.rg.tau2},
                          {"gamma", c.rg.gamma},
                          {"mode", enum_name(kModes, c.rg.mode)},
                          {"rgf_high_branch", enum_name(kBranches, c.rg.high_branch)},
                          {"rgf_heads", enum_name(kHeads, c.rg.heads)}};
  j["augment"] = {{"noise_sigma", c.augment.noise_sigma},
                  {"scale_jitter", c.augment.scale_jitter},
                  {"crop_fraction", c.augment.crop_fraction},
                  {"flip_prob", c.augment.flip_prob}};
  j["encoder"] = {{"d_model", c.encoder.d_model}, {"heads", c.encoder.heads},
                  {"layers", c.encoder.layers},   {"d_ff", c.encoder.d_ff},
                  {"d_proj", c.encoder.d_proj}};
  j["score_reduction"] = enum_name(kReductions, c.score_reduction);
  j["k_new"] = c.k_new ? Json(*c.k_new) : Json("estimate");
  j["budget_mode"] = c.budget_mode;
  j["budget_steps"] = c.budget_steps;
  j["exec"] = enum_name(kExec, c.exec);
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  ObjectReader r(j, "");
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  r.get_enum("lr_schedule", kSchedules, c.lr_schedule);
  r.get("optimizer_momentum", c.optimizer_momentum);
  r.get("ema_momentum", c.ema_momentum);
  r.get("seed", c.seed);
  if (const Json* w = r.take("loss_weights")) {
    ObjectReader s(*w, "loss_weights");
    s.get("lambda_sup", c.weights.lambda_sup);
    s.get("lambda_entropy", c.weights.lambda_entropy);
    s.get("lambda_sep", c.weights.lambda_sep);
    s.get("label_blend", c.weights.label_blend);
    s.get_enum("contrastive_denominator", kDenominators, c.weights.denominator);
    s.finish();
  }
  if (const Json* t = r.take("temperatures")) {
    ObjectReader s(*t, "temperatures");
    s.get("tau", c.temps.tau);
    s.get("tau_sup", c.temps.tau_sup);
    s.get("tau_stu", c.temps.tau_stu);
    s.get("tau_c", c.temps.tau_c);
    s.get("tau_sep", c.temps.tau_sep);
    s.get("tau_base", c.temps.tau_base);
    s.get("tau_teacher", c.temps.tau_teacher);
    s.finish();
  }
  if (const Json* g = r.take("region_guidance")) {
    ObjectReader s(*g, "region_guidance");
    s.get("tau1", c.rg.tau1);
    s.get("tau2", c.rg.tau2);
    s.get("gamma", c.rg.gamma);
    s.get_enum("mode", kModes, c.rg.mode);
    s.get_enum("rgf_high_branch", kBranches, c.rg.high_branch);
    s.get_enum("rgf_heads", kHeads, c.rg.heads);
    s.finish();
  }
  if (const Json* a = r.take("augment")) {
    ObjectReader s(*a, "augment");
    s.get("noise_sigma", c.augment.noise_sigma);
    s.get("scale_jitter", c.augment.scale_jitter);
    s.get("crop_fraction", c.augment.crop_fraction);
    s.get("flip_prob", c.augment.flip_prob);
    s.finish();
  }
  if (const Json* e = r.take("encoder")) {
    ObjectReader s(*e, "encoder");
    s.get("d_model", c.encoder.d_model);
    s.get("heads", c.encoder.heads);
    s.get("layers", c.encoder.layers);
    s.get("d_ff", c.encoder.d_ff);
    s.get("d_proj", c.encoder.d_proj);
    s.finish();
  }
  r.get_enum("score_reduction", kReductions, c.score_reduction);
  if (const Json* k = r.take("k_new")) {
    if (k->is_string()) {
      require(k->get<std::string>() == "estimate", ErrorKind::ConfigError,
              "k_new must be a non-negative integer or \"estimate\"");
      c.k_new.reset();
    } else {
      require(k->is_number_integer() && k->get<int>() >= 0, ErrorKind::ConfigError,
              "k_new must be a non-negative integer or \"estimate\"");
      c.k_new = k->get<int>();
    }
  }
  r.get("budget_mode", c.budget_mode);
  r.get("budget_steps", c.budget_steps);
  r.get_enum("exec", kExec, c.exec);
  r.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::ConfigError, std::string("invalid training config: ") + e.what());
  }
  return c;
}

Json to_json(const ExperimentConfig& c) {
  Json j;
  j["dataset"] = c.dataset;
  j["output_dir"] = c.output_dir;
  j["train"] = to_json(c.train);
  if (c.candidates) {
    j["candidates"] = std::to_string(c.candidates->first) + ".." + std::to_string(c.candidates->last);
  }
  j["jobs"] = c.jobs;
  j["tie_tolerance"] = c.tie_tolerance;
  if (c.energy_temperature) j["energy_temperature"] = *c.energy_temperature;
  if (c.ood_threshold) j["ood_threshold"] = *c.ood_threshold;
  return j;
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  ExperimentConfig c;
  ObjectReader r(j, "");
  r.get("dataset", c.dataset);
  r.get("output_dir", c.output_dir);
  if (const Json* t = r.take("train")) c.train = train_config_from_json(*t);
  if (const Json* k = r.take("candidates")) {
    require(k->is_string(), ErrorKind::ConfigError, "candidates must be a string like \"1..6\"");
    c.candidates = parse_candidate_range(k->get<std::string>());
  }
  r.get("jobs", c.jobs);
  r.get("tie_tolerance", c.tie_tolerance);
  require(c.tie_tolerance >= 0.0 && c.tie_tolerance < 1.0, ErrorKind::ConfigError,
          "tie_tolerance must lie in [0,1)");
  double v = 0.0;
  if (r.take("energy_temperature")) {
    r.get("energy_temperature", v);
    require(v > 0.0, ErrorKind::ConfigError, "energy_temperature must be positive");
    c.energy_temperature = v;
  }
  if (r.take("ood_threshold")) {
    r.get("ood_threshold", v);
    c.ood_threshold = v;
  }
  r.finish();
  require(c.jobs >= 0, ErrorKind::ConfigError, "jobs must be non-negative");
  require(!c.output_dir.empty(), ErrorKind::ConfigError, "output_dir must not be empty");
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::ConfigError, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const Json::exception& e) {
    fail(ErrorKind::ConfigError, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace protoncd
