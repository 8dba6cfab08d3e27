// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/encoder.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "protoncd/error.hpp"
#include "protoncd/rng.hpp"

namespace protoncd {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& xhat,
                  Vector& rstd) {
  const std::size_t n = x.cols();
  Matrix out(x.rows(), n);
  xhat = Matrix(x.rows(), n);
  rstd.assign(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (row[j] - mean) * rs;
      xhat(r, j) = xh;
      out(r, j) = gain(0, j) * xh + bias(0, j);
    }
  }
  return out;
}

// dy: upstream on the LN output; adds the input gradient into dx.
void layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& rstd,
                         const Matrix& gain, Matrix& dgain, Matrix& dbias, Matrix& dx) {
  const std::size_t n = dy.cols();
  Vector dxhat(n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dgain(0, j) += dy(r, j) * xhat(r, j);
      dbias(0, j) += dy(r, j);
      dxhat[j] = dy(r, j) * gain(0, j);
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * xhat(r, j);
    }
    mean_d /= static_cast<double>(n);
    mean_dx /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      dx(r, j) += rstd[r] * (dxhat[j] - mean_d - xhat(r, j) * mean_dx);
    }
  }
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out;
  matmul(x, w, out);
  add_row_bias(out, b);
  return out;
}

void fill_normal(Matrix& m, Rng& rng, double sd) {
  for (double& x : m.flat()) x = sd * rng.normal();
}

template <class Params, class Tensor>
std::vector<Tensor*> collect(Params& p) {
  std::vector<Tensor*> out{&p.patch_w, &p.patch_b, &p.cls_token};
  for (auto& l : p.layers) {
    out.insert(out.end(), {&l.ln1_gain, &l.ln1_bias, &l.attn.wq, &l.attn.bq, &l.attn.wk,
                           &l.attn.bk, &l.attn.wv, &l.attn.bv, &l.attn.wo, &l.attn.bo,
                           &l.ln2_gain, &l.ln2_bias, &l.ff_w1, &l.ff_b1, &l.ff_w2, &l.ff_b2});
  }
  out.push_back(&p.proj_w);
  return out;
}

}  // namespace

void RegionGuidanceParams::validate() const {
  require(tau1 >= 0.0 && tau1 < tau2 && tau2 <= 1.0, ErrorKind::InvalidArgument,
          "region guidance requires 0 <= tau1 < tau2 <= 1");
  require(gamma > 0.0, ErrorKind::InvalidArgument, "region guidance gamma must be positive");
}

double region_guidance(double score, const RegionGuidanceParams& params) {
  params.validate();
  require(score >= 0.0 && score <= 1.0, ErrorKind::InvalidArgument,
          "anomaly score outside [0,1]");
  if (score < params.tau1) return 0.0;
  if (score < params.tau2) return params.gamma * std::log(score / params.tau1);
  if (params.high_branch == HighBranch::PaperLiteral) return kNegInf;
  return params.gamma * std::log(params.tau2 / params.tau1);
}

Vector build_guidance_vector(std::span<const double> anomaly_vec, const RegionGuidanceParams& params) {
  Vector g(anomaly_vec.size());
  for (std::size_t i = 0; i < anomaly_vec.size(); ++i) g[i] = region_guidance(anomaly_vec[i], params);
  return g;
}

void EncoderConfig::validate() const {
  require(d_in >= 1 && d_model >= 1 && heads >= 1 && layers >= 1 && d_ff >= 1 && d_proj >= 1,
          ErrorKind::InvalidArgument, "encoder sizes must be positive");
  require(d_model % heads == 0, ErrorKind::InvalidArgument, "d_model must be divisible by heads");
}

EncoderParams EncoderParams::zeros(const EncoderConfig& c) {
  c.validate();
  const std::size_t d = c.d_model;
  EncoderParams p;
  p.config = c;
  p.patch_w = Matrix(c.d_in, d);
  p.patch_b = Matrix(1, d);
  p.cls_token = Matrix(1, d);
  p.layers.resize(c.layers);
  for (auto& l : p.layers) {
    l.ln1_gain = Matrix(1, d);
    l.ln1_bias = Matrix(1, d);
    for (Matrix* w : {&l.attn.wq, &l.attn.wk, &l.attn.wv, &l.attn.wo}) *w = Matrix(d, d);
    for (Matrix* b : {&l.attn.bq, &l.attn.bk, &l.attn.bv, &l.attn.bo}) *b = Matrix(1, d);
    l.ln2_gain = Matrix(1, d);
    l.ln2_bias = Matrix(1, d);
    l.ff_w1 = Matrix(d, c.d_ff);
    l.ff_b1 = Matrix(1, c.d_ff);
    l.ff_w2 = Matrix(c.d_ff, d);
    l.ff_b2 = Matrix(1, d);
  }
  p.proj_w = Matrix(d, c.d_proj);
  return p;
}

EncoderParams EncoderParams::init(const EncoderConfig& c, std::uint64_t seed) {
  EncoderParams p = zeros(c);
  Rng rng(seed);
  const double d = c.d_model;
  fill_normal(p.patch_w, rng, 1.0 / std::sqrt(static_cast<double>(c.d_in)));
  fill_normal(p.cls_token, rng, 0.5);
  // residual branches start small so the stack is close to identity
  const double branch = 0.5 / std::sqrt(static_cast<double>(c.layers));
  for (auto& l : p.layers) {
    l.ln1_gain.fill(1.0);
    l.ln2_gain.fill(1.0);
    fill_normal(l.attn.wq, rng, 1.0 / std::sqrt(d));
    fill_normal(l.attn.wk, rng, 1.0 / std::sqrt(d));
    fill_normal(l.attn.wv, rng, 1.0 / std::sqrt(d));
    fill_normal(l.attn.wo, rng, branch / std::sqrt(d));
    fill_normal(l.ff_w1, rng, 1.0 / std::sqrt(d));
    fill_normal(l.ff_w2, rng, branch / std::sqrt(static_cast<double>(c.d_ff)));
  }
  fill_normal(p.proj_w, rng, 1.0 / std::sqrt(d));
  return p;
}

std::vector<Matrix*> EncoderParams::tensors() { return collect<EncoderParams, Matrix>(*this); }

std::vector<const Matrix*> EncoderParams::tensors() const {
  return collect<const EncoderParams, const Matrix>(*this);
}

std::vector<std::string> EncoderParams::tensor_names() const {
  std::vector<std::string> names{"patch_embed.weight", "patch_embed.bias", "cls_token"};
  static constexpr const char* kLayerNames[] = {
      "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk",  "attn.bk",  "attn.wv",  "attn.bv",
      "attn.wo",  "attn.bo",  "ln2.gain", "ln2.bias", "ff.w1", "ff.b1", "ff.w2", "ff.b2"};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (const char* n : kLayerNames) names.push_back("layers." + std::to_string(l) + "." + n);
  }
  names.emplace_back("proj_head.weight");
  return names;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += m->size();
  return n;
}

bool EncoderParams::same_shape(const EncoderParams& other) const {
  const auto a = tensors();
  const auto b = other.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i]->same_shape(*b[i])) return false;
  }
  return true;
}

void EncoderParams::set_zero() {
  for (Matrix* m : tensors()) m->fill(0.0);
}

bool operator==(const EncoderParams& a, const EncoderParams& b) {
  if (!(a.config == b.config) || !a.same_shape(b)) return false;
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!(*ta[i] == *tb[i])) return false;
  }
  return true;
}

Matrix amg_attention(const Matrix& tokens, std::span<const double> guidance,
                     const AttentionWeights& w, int heads, const RegionGuidanceParams& rg,
                     AttentionCache* cache) {
  const std::size_t t = tokens.rows();
  const std::size_t d = tokens.cols();
  require(t >= 1 && d % static_cast<std::size_t>(heads) == 0, ErrorKind::InvalidArgument,
          "attention shape mismatch");
  require(w.wq.rows() == d && w.wq.cols() == d, ErrorKind::InvalidArgument,
          "attention weights do not match the token width");
  require(guidance.empty() || guidance.size() + 1 == t, ErrorKind::InvalidArgument,
          "guidance length must equal the patch-token count");
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix q = linear(tokens, w.wq, w.bq);
  Matrix k = linear(tokens, w.wk, w.bk);
  Matrix v = linear(tokens, w.wv, w.bv);
  Matrix mixed(t, d);
  std::vector<Matrix> probs(heads, Matrix(t, t));
  Vector logits(t);

  for (int hd = 0; hd < heads; ++hd) {
    const std::size_t off = hd * dh;
    const bool guided_head =
        !guidance.empty() && (rg.heads == GuidanceHeads::All || hd == 0);
    Matrix& p = probs[hd];
    for (std::size_t i = 0; i < t; ++i) {
      const bool guided_row = guided_head && (i == 0 || rg.mode == GuidanceMode::AllTokens);
      double mx = kNegInf;
      for (std::size_t j = 0; j < t; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * k(j, off + c);
        s *= scale;
        if (guided_row && j > 0) s += guidance[j - 1];
        logits[j] = s;
        if (s > mx) mx = s;
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        const double e = logits[j] == kNegInf ? 0.0 : std::exp(logits[j] - mx);
        p(i, j) = e;
        sum += e;
      }
      for (std::size_t j = 0; j < t; ++j) p(i, j) /= sum;
      for (std::size_t j = 0; j < t; ++j) {
        const double pij = p(i, j);
        if (pij == 0.0) continue;
        for (std::size_t c = 0; c < dh; ++c) mixed(i, off + c) += pij * v(j, off + c);
      }
    }
  }
  Matrix out = linear(mixed, w.wo, w.bo);
  if (cache) {
    cache->input = tokens;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->mixed = std::move(mixed);
  }
  return out;
}

EncodeOutput encode(const Matrix& patches, std::span<const double> anomaly_vec,
                    const EncoderParams& params, const RegionGuidanceParams& rg,
                    ForwardCache* cache) {
  const EncoderConfig& c = params.config;
  const std::size_t n = patches.rows();
  const std::size_t d = c.d_model;
  require(patches.cols() == static_cast<std::size_t>(c.d_in), ErrorKind::InvalidArgument,
          "patch feature width does not match the encoder");
  require(anomaly_vec.empty() || anomaly_vec.size() == n, ErrorKind::InvalidArgument,
          "anomaly vector length must equal the patch count");
  const Vector guidance = build_guidance_vector(anomaly_vec, rg);

  Matrix hidden(n + 1, d);
  {
    Matrix emb = linear(patches, params.patch_w, params.patch_b);
    std::copy(params.cls_token.flat().begin(), params.cls_token.flat().end(), hidden.row(0).begin());
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(emb.row(i).begin(), emb.row(i).end(), hidden.row(i + 1).begin());
    }
  }

  std::vector<LayerCache> layer_caches(cache ? params.layers.size() : 0);
  EncodeOutput out;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& lp = params.layers[l];
    const bool last = l + 1 == params.layers.size();
    LayerCache local;
    LayerCache& lc = cache ? layer_caches[l] : local;

    Matrix a = layer_norm(hidden, lp.ln1_gain, lp.ln1_bias, lc.ln1_xhat, lc.ln1_rstd);
    const std::span<const double> g = last ? std::span<const double>(guidance) : std::span<const double>();
    Matrix y = amg_attention(a, g, lp.attn, c.heads, rg, &lc.attn);
    if (last) {
      for (const Matrix& p : lc.attn.probs) {
        out.attention_cls.emplace_back(p.row(0).begin(), p.row(0).end());
      }
    }
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden.flat()[i] += y.flat()[i];

    lc.ff_in = layer_norm(hidden, lp.ln2_gain, lp.ln2_bias, lc.ln2_xhat, lc.ln2_rstd);
    lc.ff_pre = linear(lc.ff_in, lp.ff_w1, lp.ff_b1);
    lc.ff_act = lc.ff_pre;
    for (double& x : lc.ff_act.flat()) x = gelu(x);
    Matrix f2 = linear(lc.ff_act, lp.ff_w2, lp.ff_b2);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden.flat()[i] += f2.flat()[i];

    for (double x : hidden.flat()) {
      if (!std::isfinite(x)) fail(ErrorKind::NumericalFailure, "non-finite activation in layer " + std::to_string(l));
    }
  }

  Vector cls_out(hidden.row(0).begin(), hidden.row(0).end());
  const double cls_norm = norm2(cls_out);
  require(cls_norm > 0.0 && std::isfinite(cls_norm), ErrorKind::NumericalFailure,
          "degenerate CLS output");
  out.z = cls_out;
  for (double& x : out.z) x /= cls_norm;

  Vector proj(static_cast<std::size_t>(c.d_proj), 0.0);
  for (std::size_t i = 0; i < d; ++i) axpy(out.z[i], params.proj_w.row(i), proj);
  const double proj_norm = norm2(proj);
  require(proj_norm > 0.0 && std::isfinite(proj_norm), ErrorKind::NumericalFailure,
          "degenerate projection output");
  out.h = proj;
  for (double& x : out.h) x /= proj_norm;

  if (cache) {
    cache->patches = patches;
    cache->layers = std::move(layer_caches);
    cache->cls_out = std::move(cls_out);
    cache->cls_norm = cls_norm;
    cache->z = out.z;
    cache->proj = std::move(proj);
    cache->proj_norm = proj_norm;
    cache->h = out.h;
    cache->valid = true;
  }
  return out;
}

void encoder_backward(const EncoderParams& params, const ForwardCache& cache,
                      std::span<const double> dz_in, std::span<const double> dh,
                      EncoderParams& grad) {
  require(cache.valid, ErrorKind::InvalidState, "encoder_backward without a forward cache");
  require(grad.same_shape(params), ErrorKind::InvalidState, "gradient buffer shape mismatch");
  const EncoderConfig& c = params.config;
  const std::size_t d = c.d_model;
  const std::size_t dp = c.d_proj;
  require(dz_in.size() == d && dh.size() == dp, ErrorKind::InvalidArgument,
          "upstream gradient sizes do not match the encoder");

  // h = u / |u|, u = proj_w^T z
  Vector du(dp);
  {
    const double hd = dot(cache.h, dh);
    for (std::size_t j = 0; j < dp; ++j) du[j] = (dh[j] - cache.h[j] * hd) / cache.proj_norm;
  }
  Vector dz(dz_in.begin(), dz_in.end());
  for (std::size_t i = 0; i < d; ++i) {
    axpy(cache.z[i], du, grad.proj_w.row(i));
    dz[i] += dot(params.proj_w.row(i), du);
  }
  // z = c / |c|
  const std::size_t t = cache.patches.rows() + 1;
  Matrix dhidden(t, d);
  {
    const double zd = dot(cache.z, dz);
    for (std::size_t i = 0; i < d; ++i) dhidden(0, i) = (dz[i] - cache.z[i] * zd) / cache.cls_norm;
  }

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const LayerParams& lp = params.layers[li];
    LayerParams& lg = grad.layers[li];
    const LayerCache& lc = cache.layers[li];

    // feed-forward branch
    col_sums_acc(dhidden, lg.ff_b2);
    matmul_at_b_acc(lc.ff_act, dhidden, lg.ff_w2);
    Matrix dact;
    matmul_a_bt(dhidden, lp.ff_w2, dact);
    for (std::size_t i = 0; i < dact.size(); ++i) dact.flat()[i] *= gelu_grad(lc.ff_pre.flat()[i]);
    col_sums_acc(dact, lg.ff_b1);
    matmul_at_b_acc(lc.ff_in, dact, lg.ff_w1);
    Matrix dffin;
    matmul_a_bt(dact, lp.ff_w1, dffin);
    layer_norm_backward(dffin, lc.ln2_xhat, lc.ln2_rstd, lp.ln2_gain, lg.ln2_gain, lg.ln2_bias,
                        dhidden);

    // attention branch
    const AttentionCache& ac = lc.attn;
    col_sums_acc(dhidden, lg.attn.bo);
    matmul_at_b_acc(ac.mixed, dhidden, lg.attn.wo);
    Matrix dmixed;
    matmul_a_bt(dhidden, lp.attn.wo, dmixed);

    const std::size_t dhd = d / c.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dhd));
    Matrix dq(t, d), dk(t, d), dv(t, d);
    Vector dprob(t);
    for (int hd = 0; hd < c.heads; ++hd) {
      const std::size_t off = hd * dhd;
      const Matrix& p = ac.probs[hd];
      for (std::size_t i = 0; i < t; ++i) {
        bool any = false;
        for (std::size_t cc = 0; cc < dhd; ++cc) any |= dmixed(i, off + cc) != 0.0;
        if (!any) continue;
        double rowdot = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
          double s = 0.0;
          for (std::size_t cc = 0; cc < dhd; ++cc) s += dmixed(i, off + cc) * ac.v(j, off + cc);
          dprob[j] = s;
          rowdot += p(i, j) * s;
          if (p(i, j) != 0.0) {
            for (std::size_t cc = 0; cc < dhd; ++cc) dv(j, off + cc) += p(i, j) * dmixed(i, off + cc);
          }
        }
        for (std::size_t j = 0; j < t; ++j) {
          const double ds = p(i, j) * (dprob[j] - rowdot) * scale;
          if (ds == 0.0) continue;
          for (std::size_t cc = 0; cc < dhd; ++cc) {
            dq(i, off + cc) += ds * ac.k(j, off + cc);
            dk(j, off + cc) += ds * ac.q(i, off + cc);
          }
        }
      }
    }
    col_sums_acc(dq, lg.attn.bq);
    col_sums_acc(dk, lg.attn.bk);
    col_sums_acc(dv, lg.attn.bv);
    matmul_at_b_acc(ac.input, dq, lg.attn.wq);
    matmul_at_b_acc(ac.input, dk, lg.attn.wk);
    matmul_at_b_acc(ac.input, dv, lg.attn.wv);
    Matrix dinput, tmp;
    matmul_a_bt(dq, lp.attn.wq, dinput);
    matmul_a_bt(dk, lp.attn.wk, tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) dinput.flat()[i] += tmp.flat()[i];
    matmul_a_bt(dv, lp.attn.wv, tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) dinput.flat()[i] += tmp.flat()[i];
    layer_norm_backward(dinput, lc.ln1_xhat, lc.ln1_rstd, lp.ln1_gain, lg.ln1_gain, lg.ln1_bias,
                        dhidden);
  }

  axpy(1.0, dhidden.row(0), grad.cls_token.flat());
  const std::size_t n = cache.patches.rows();
  for (std::size_t i = 0; i < n; ++i) {
    axpy(1.0, dhidden.row(i + 1), grad.patch_b.flat());
    const auto x = cache.patches.row(i);
    for (std::size_t a = 0; a < x.size(); ++a) axpy(x[a], dhidden.row(i + 1), grad.patch_w.row(a));
  }
}

Vector pooled_scores(const Sample& sample, const DatasetLayout& layout) {
  if (!sample.anomaly_map) return {};
  return pool_anomaly_map(*sample.anomaly_map, layout.grid);
}

}  // namespace protoncd
