// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <vector>

#include "protoncd/encoder.hpp"
#include "protoncd/numerics.hpp"

namespace protoncd {

// Serial is the reference; Parallel fans out over samples (or coordinates)
// with OpenMP. Both reduce in fixed index order and give identical bits.
enum class ExecMode { Serial, Parallel };

/// Caps the OpenMP worker count (0 leaves the runtime default).
void set_worker_count(int n);
int worker_count();

struct EncodeJob {
  const Matrix* patches = nullptr;
  Vector anomaly;  // pooled scores; empty for no map
};

/// Encodes every job. With `caches` set, each entry receives the forward
/// cache needed by backward_batch.
std::vector<EncodeOutput> encode_batch(const std::vector<EncodeJob>& jobs, const EncoderParams& params,
                                       const RegionGuidanceParams& rg, std::vector<ForwardCache>* caches,
                                       ExecMode mode);

/// Sum over samples of the per-sample parameter gradients, added to `grad`
/// sample by sample in index order.
void backward_batch(const EncoderParams& params, const std::vector<ForwardCache>& caches,
                    const std::vector<Vector>& dz, const std::vector<Vector>& dh, EncoderParams& grad,
                    ExecMode mode);

/// Central differences like numerics::finite_diff_grad; `f` must be safe to
/// call concurrently in Parallel mode.
Vector finite_diff_grad(const numerics::ScalarFunction& f, std::span<const double> x, double step,
                        ExecMode mode);

}  // namespace protoncd
