// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "protoncd/encoder.hpp"
#include "protoncd/linalg.hpp"

namespace protoncd {

/// K unit-norm class directions stored as rows of `mu`; the last row is the
/// normal class.
struct PrototypeSet {
  Matrix mu;  // K x d
  int k_base = 0;
  int k_new = 0;

  int num_classes() const { return k_base + k_new + 1; }
  int normal_index() const { return num_classes() - 1; }
  int dim() const { return static_cast<int>(mu.cols()); }
  void validate() const;
  void renormalize();

  friend bool operator==(const PrototypeSet&, const PrototypeSet&) = default;
};

struct Temperatures {
  double tau = 0.1;       // posterior used for prediction and evaluation
  double tau_sup = 0.07;  // teacher sharpening
  double tau_stu = 0.1;   // student posterior in the consistency/supervised terms
  double tau_c = 0.2;     // contrastive
  double tau_sep = 0.1;   // prototype separation
  double tau_base = 1.0;  // posterior inside the marginal-entropy term
  double tau_teacher = 1.0;  // teacher posterior before correction and sharpening

  void validate() const;
  friend bool operator==(const Temperatures&, const Temperatures&) = default;
};

struct Model {
  EncoderParams encoder;
  PrototypeSet protos;

  friend bool operator==(const Model&, const Model&) = default;
};

struct TeacherStudentState {
  Model student;
  Model teacher;
  double momentum = 0.99;
};

/// Cosine logits mu_c^T z. Throws InvalidArgument unless |z| = 1 within 1e-6.
Vector logits(std::span<const double> z, const PrototypeSet& protos);
Vector vmf_posterior(std::span<const double> z, const PrototypeSet& protos, double tau);
/// q^(1/T) renormalized; exact zeros stay zero.
Vector sharpen(std::span<const double> q, double temperature);

/// teacher <- m * teacher + (1 - m) * student for every tensor, then the
/// teacher prototypes are renormalized.
void ema_update(TeacherStudentState& state);

/// `class_means` has one optional entry per base class followed by one for
/// the normal class; present entries seed those prototypes (normalized), the
/// rest are random. Novel prototypes are random with pairwise |cos| <= 0.5.
PrototypeSet init_prototypes(int k_base, int k_new, int d, std::uint64_t seed,
                             const std::vector<std::optional<Vector>>& class_means = {});

}  // namespace protoncd
