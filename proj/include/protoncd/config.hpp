// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "protoncd/trainer.hpp"

namespace protoncd {

using Json = nlohmann::json;

// Strict JSON schema: every object rejects unknown keys and mistyped values
// with ConfigError naming the offending path. Absent keys keep defaults.
Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j);

enum class OodMethod { Msp, Mls, Energy };
std::string_view to_string(OodMethod method);
OodMethod parse_ood_method(std::string_view text);

struct CandidateRange {
  int first = 1;
  int last = 1;
  friend bool operator==(const CandidateRange&, const CandidateRange&) = default;
};
/// "a..b" with 0 <= a <= b.
CandidateRange parse_candidate_range(std::string_view text);

/// Everything a CLI run needs; echoed verbatim into reports.
struct ExperimentConfig {
  std::string dataset;
  std::string output_dir = "out";
  TrainConfig train;
  std::optional<CandidateRange> candidates;
  int jobs = 0;
  double tie_tolerance = 0.0;  // relative; see EstimateOptions
  std::optional<double> energy_temperature;  // default: the posterior tau
  std::optional<double> ood_threshold;       // default: the FPR95 threshold

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

Json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace protoncd
