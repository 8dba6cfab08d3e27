// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "protoncd/data.hpp"
#include "protoncd/linalg.hpp"

namespace protoncd {

enum class GuidanceMode { ClsRowOnly, AllTokens };
// What scores at or above tau2 map to: the constant gamma*log(tau2/tau1)
// (saturate) or -inf (paper_literal, removes the patch from the CLS row).
enum class HighBranch { Saturate, PaperLiteral };
enum class GuidanceHeads { All, First };

struct RegionGuidanceParams {
  double tau1 = 0.1;
  double tau2 = 0.6;
  double gamma = 1.0;
  GuidanceMode mode = GuidanceMode::ClsRowOnly;
  HighBranch high_branch = HighBranch::Saturate;
  GuidanceHeads heads = GuidanceHeads::All;

  void validate() const;
  friend bool operator==(const RegionGuidanceParams&, const RegionGuidanceParams&) = default;
};

/// Region Guidance Factor: 0 below tau1, gamma*log(score/tau1) on [tau1, tau2),
/// high branch at and above tau2. May return -inf (paper_literal).
double region_guidance(double score, const RegionGuidanceParams& params);

/// Elementwise region_guidance over the pooled patch scores (length N, patch
/// positions only; the CLS key always receives 0 inside the attention).
Vector build_guidance_vector(std::span<const double> anomaly_vec, const RegionGuidanceParams& params);

struct EncoderConfig {
  int d_in = 16;
  int d_model = 32;
  int heads = 4;
  int layers = 2;
  int d_ff = 64;
  int d_proj = 16;

  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct AttentionWeights {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerParams {
  Matrix ln1_gain, ln1_bias;
  AttentionWeights attn;
  Matrix ln2_gain, ln2_bias;
  Matrix ff_w1, ff_b1, ff_w2, ff_b2;
};

/// Weights of the pre-norm transformer encoder plus the projection head.
/// Every tensor is reachable by name through tensors()/tensor_names(), which
/// is what serialization, the optimizer, and EMA iterate over.
struct EncoderParams {
  EncoderConfig config;
  Matrix patch_w, patch_b;  // d_in x d_model, 1 x d_model
  Matrix cls_token;         // 1 x d_model
  std::vector<LayerParams> layers;
  Matrix proj_w;  // d_model x d_proj

  static EncoderParams zeros(const EncoderConfig& config);
  static EncoderParams init(const EncoderConfig& config, std::uint64_t seed);

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::vector<std::string> tensor_names() const;
  std::size_t parameter_count() const;
  bool same_shape(const EncoderParams& other) const;
  void set_zero();

  friend bool operator==(const EncoderParams&, const EncoderParams&);
};

struct AttentionCache {
  Matrix input;            // T x d_model, the normalized tokens
  Matrix q, k, v;          // T x d_model
  std::vector<Matrix> probs;  // per head, T x T
  Matrix mixed;            // T x d_model, concatenated head outputs before wo
};

struct LayerCache {
  Matrix ln1_xhat;
  Vector ln1_rstd;
  AttentionCache attn;
  Matrix ln2_xhat;
  Vector ln2_rstd;
  Matrix ff_in;   // LN2 output
  Matrix ff_pre;  // pre-activation
  Matrix ff_act;  // GELU output
};

struct ForwardCache {
  bool valid = false;
  Matrix patches;
  std::vector<LayerCache> layers;
  Vector cls_out;  // final CLS token before normalization
  double cls_norm = 0.0;
  Vector z;
  Vector proj;  // proj_w^T z before normalization
  double proj_norm = 0.0;
  Vector h;
};

struct EncodeOutput {
  Vector z;  // unit norm, dim d_model
  Vector h;  // unit norm, dim d_proj
  std::vector<Vector> attention_cls;  // per head, final-layer CLS attention over T tokens
};

/// Multi-head scaled dot-product attention over tokens (CLS at row 0) with the
/// guidance vector added to the pre-softmax logits of the CLS query row
/// (ClsRowOnly) or of every query row (AllTokens). Empty guidance means none.
/// Returns the output projection (T x d_model).
Matrix amg_attention(const Matrix& tokens, std::span<const double> guidance,
                     const AttentionWeights& weights, int heads, const RegionGuidanceParams& rg,
                     AttentionCache* cache = nullptr);

/// Forward pass. `anomaly_vec` is the pooled per-patch score vector (empty for
/// no map, i.e. zero guidance); guidance is injected in the final block only.
EncodeOutput encode(const Matrix& patches, std::span<const double> anomaly_vec,
                    const EncoderParams& params, const RegionGuidanceParams& rg,
                    ForwardCache* cache = nullptr);

/// Accumulates parameter gradients for upstream gradients on z and h into
/// `grad`. Guidance is a constant: nothing flows into the anomaly map.
void encoder_backward(const EncoderParams& params, const ForwardCache& cache,
                      std::span<const double> dz, std::span<const double> dh, EncoderParams& grad);

/// Pooled anomaly scores for a sample (or view); empty when it has no map.
Vector pooled_scores(const Sample& sample, const DatasetLayout& layout);

}  // namespace protoncd
