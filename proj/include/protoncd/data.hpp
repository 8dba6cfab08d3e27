// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "protoncd/linalg.hpp"
#include "protoncd/rng.hpp"

namespace protoncd {

enum class Split { Labeled, Unlabeled, Ood };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

/// One inspected item: a P x P grid of patch features plus optional priors.
struct Sample {
  std::string id;
  Split split = Split::Unlabeled;
  // Ground-truth class when known. Training code must go through
  // Dataset::training_label, which hides it for non-labeled samples.
  std::optional<int> label;
  Matrix patches;  // (P*P) x d_in, row-major patch order
  std::optional<Matrix> anomaly_map;      // H x W, entries in [0,1]
  std::optional<Matrix> foreground_mask;  // H x W, entries in {0,1}

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetLayout {
  int d_in = 0;
  int grid = 0;  // patches per side
  int height = 0;
  int width = 0;

  int patch_count() const { return grid * grid; }
  friend bool operator==(const DatasetLayout&, const DatasetLayout&) = default;
};

struct Dataset {
  std::vector<Sample> samples;
  int k_base = 0;
  std::optional<int> k_new_true;
  int normal_label = 0;
  DatasetLayout layout;

  /// Label visible to training: present only for the labeled split.
  std::optional<int> training_label(std::size_t index) const;
  /// K = k_base + k_new + 1 when the number of novel classes is known.
  std::optional<int> num_classes() const;
  std::vector<std::size_t> indices_of(Split split) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws ValidationError on any invariant breach.
void validate_dataset(const Dataset& dataset);

// JSON-lines format: header line with layout integers, then one sample per line.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
std::string serialize_dataset(const Dataset& dataset);
Dataset parse_dataset(std::string_view text, const std::filesystem::path& base_dir = {});
/// FNV-1a 64 of the serialized form, as 16 hex digits.
std::string dataset_digest(const Dataset& dataset);
std::string fnv1a_hex(std::string_view bytes);

/// Edge-replicates the map up to a multiple of grid_n, then averages each cell.
Vector pool_anomaly_map(const Matrix& map, int grid_n);

struct AugmentParams {
  double noise_sigma = 0.05;
  double scale_jitter = 0.1;
  double crop_fraction = 0.9;
  double flip_prob = 0.5;
  std::uint64_t seed = 0;

  friend bool operator==(const AugmentParams&, const AugmentParams&) = default;
};

struct ViewPair {
  Sample view_a;
  Sample view_b;
};

/// Draws two stochastic views. Crop-and-resize, horizontal flip, global
/// scaling and additive Gaussian noise, in that order; the anomaly map and
/// foreground mask follow the same geometric transforms as the patch grid.
ViewPair make_views(const Sample& sample, const DatasetLayout& layout, const AugmentParams& params,
                    Rng& rng);
Sample make_view(const Sample& sample, const DatasetLayout& layout, const AugmentParams& params,
                 Rng& rng);

struct VmfMixtureOptions {
  int k_classes = 5;  // anomaly classes (base + novel)
  int d_in = 16;
  double kappa = 20.0;
  int n_per_class = 200;
  std::uint64_t seed = 0;
  int k_base = -1;  // default: k_classes - k_classes / 2
  bool with_normal = false;
  double labeled_fraction = 0.5;
  int ood_classes = 0;
  int ood_per_class = -1;  // default: n_per_class
};

/// vMF class clusters around mutually orthogonal mean directions, each sample
/// a 1 x 1 patch grid with a 1 x 1 anomaly map (1 for anomaly classes, 0 for
/// the normal class).
Dataset synth_vmf_mixture(const VmfMixtureOptions& options);

/// Wood's rejection sampler for a single vMF draw around the unit vector mean.
Vector sample_vmf(std::span<const double> mean, double kappa, Rng& rng);
Vector sample_uniform_sphere(int d, Rng& rng);

struct ToyImageOptions {
  int k_anomaly_types = 3;
  int grid = 8;
  int cell = 4;  // pixels per patch side
  int d_in = 8;
  int n_per_class = 20;
  int implant_size = 6;  // pixels
  bool disjoint_locations = false;
  int k_base = -1;  // default: k_anomaly_types - k_anomaly_types / 2
  double labeled_fraction = 0.5;
  std::uint64_t seed = 0;
};

/// Object-on-background images with one implanted local pattern per anomaly
/// type and an aligned anomaly map; label k_anomaly_types is the normal class.
Dataset synth_toy_images(const ToyImageOptions& options);

}  // namespace protoncd
