// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/report.hpp"

#include <fstream>

#include "protoncd/error.hpp"

#ifndef PROTONCD_VERSION
#define PROTONCD_VERSION "unknown"
#endif

namespace protoncd {

std::string_view artifact_version() { return PROTONCD_VERSION; }

Json report_header(std::string_view command, const ExperimentConfig& config, const std::string& dataset_digest) {
  Json j;
  j["report_version"] = kReportVersion;
  j["artifact_version"] = artifact_version();
  j["command"] = command;
  j["dataset_digest"] = dataset_digest;
  j["seed"] = config.train.seed;
  j["config"] = to_json(config);
  return j;
}

Json to_json(const DiscoveryMetrics& m) {
  Json assignment = Json::array();
  for (const auto& [cluster, cls] : m.cluster.assignment) assignment.push_back({cluster, cls});
  return {{"nmi", m.cluster.nmi},
          {"ari", m.cluster.ari},
          {"f1", m.cluster.f1},
          {"all_accuracy", m.all_accuracy},
          {"novel_accuracy", m.novel_accuracy},
          {"base_accuracy", m.base_accuracy},
          {"evaluated", m.evaluated},
          {"assignment", assignment}};
}

Json to_json(const std::vector<CandidateResult>& rows) {
  Json out = Json::array();
  for (const CandidateResult& r : rows) {
    Json row{{"k_new", r.k_new_candidate},
             {"acc_score", r.acc_score},
             {"centr_score", r.centr_score},
             {"proto_score", r.proto_score},
             {"checkpoint", r.checkpoint_ref},
             {"failed", r.failed}};
    if (r.failed) row["error"] = r.error;
    out.push_back(std::move(row));
  }
  return out;
}

Json to_json(const OodResult& r) {
  return {{"method", to_string(r.method)}, {"auroc", r.auroc},         {"fpr95", r.fpr95},
          {"threshold", r.threshold},      {"temperature", r.temperature}, {"samples", r.scores.size()}};
}

Json to_json(const LossBreakdown& l) {
  return {{"dapl", l.dapl},       {"sup", l.sup}, {"con_u", l.con_u}, {"con_l", l.con_l},
          {"entropy", l.entropy}, {"sep", l.sep}, {"total", l.total}};
}

std::string dump_report(const Json& report) { return report.dump(2) + "\n"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::InvalidArgument, "cannot write " + path.string());
  out << text;
  require(out.good(), ErrorKind::InvalidArgument, "write failed for " + path.string());
}

}  // namespace protoncd
