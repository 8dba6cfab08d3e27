// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <filesystem>
#include <string>

#include "protoncd/config.hpp"
#include "protoncd/discovery.hpp"

namespace protoncd {

inline constexpr int kReportVersion = 1;
std::string_view artifact_version();

// Reports hold no timestamps or host data so equal inputs give equal bytes.
Json report_header(std::string_view command, const ExperimentConfig& config, const std::string& dataset_digest);
Json to_json(const DiscoveryMetrics& metrics);
Json to_json(const std::vector<CandidateResult>& rows);
Json to_json(const OodResult& result);
Json to_json(const LossBreakdown& loss);

std::string dump_report(const Json& report);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace protoncd
