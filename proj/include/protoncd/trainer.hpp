// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "protoncd/data.hpp"
#include "protoncd/encoder.hpp"
#include "protoncd/kernels.hpp"
#include "protoncd/losses.hpp"
#include "protoncd/proto_head.hpp"
#include "protoncd/rng.hpp"

namespace protoncd {

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  int epochs = 40;
  int batch_size = 64;
  double lr = 0.05;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  double optimizer_momentum = 0.9;
  double ema_momentum = 0.99;
  std::uint64_t seed = 0;
  LossWeights weights;
  Temperatures temps;
  RegionGuidanceParams rg;
  AugmentParams augment;  // its seed field is unused; views draw from the trainer RNG
  EncoderConfig encoder;  // d_in is taken from the dataset
  ScoreReduction score_reduction = ScoreReduction::Max;
  std::optional<int> k_new;  // empty: estimate before training
  bool budget_mode = false;
  int budget_steps = 300;
  ExecMode exec = ExecMode::Parallel;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct OptimizerState {
  EncoderParams encoder_velocity;
  Matrix proto_velocity;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct Checkpoint {
  TeacherStudentState state;
  OptimizerState optimizer;
  long step = 0;
  std::string rng_state;
  TrainConfig config;
};

struct LogRow {
  long step = 0;
  LossBreakdown loss;
  double lr = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;  // last good state
  std::vector<LogRow> log;
  bool aborted = false;
  std::string abort_reason;
};

/// Mapping from dataset labels to model class indices: base classes keep
/// their index, the dataset's normal label maps to K - 1.
int model_label(const Dataset& dataset, int dataset_label, int k_new);

/// Fresh state: encoder init, prototypes seeded from labeled class means of
/// the initial student features, teacher = student.
Checkpoint init_checkpoint(const Dataset& dataset, const TrainConfig& config, int k_new);

/// Number of optimizer steps for a run on `dataset`.
long total_steps(const Dataset& dataset, const TrainConfig& config);
double learning_rate(const TrainConfig& config, long step, long total);

/// Stratified batch: labeled share proportional to |D_l| / (|D_l| + |D_u|).
std::vector<std::size_t> sample_batch(const Dataset& dataset, int batch_size, Rng& rng);

/// One optimization step on the given batch. Throws NumericalFailure (with the
/// state untouched) when the loss or any gradient is non-finite.
LossBreakdown train_step(Checkpoint& ckpt, const Dataset& dataset,
                         const std::vector<std::size_t>& batch, Rng& rng, double lr);

/// Runs to total_steps, or from `resume` onwards, stopping early after
/// `stop_at` steps when given. A non-finite step aborts with the last good
/// checkpoint.
TrainResult train(const Dataset& dataset, const TrainConfig& config, int k_new,
                  const Checkpoint* resume = nullptr, std::optional<long> stop_at = {});

void write_log_csv(const std::vector<LogRow>& log, const std::filesystem::path& path);
std::string log_csv(const std::vector<LogRow>& log);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace protoncd
