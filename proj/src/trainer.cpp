// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "protoncd/config.hpp"
#include "protoncd/error.hpp"
#include "protoncd/numerics.hpp"

namespace protoncd {

namespace {

constexpr const char* kCheckpointFormat = "protoncd-checkpoint";
constexpr int kCheckpointVersion = 1;

// Seed streams derived from the master seed.
enum SeedStream : std::uint64_t { kEncoderInit = 1, kPrototypeInit = 2, kTrainRng = 3 };

bool all_finite(const Matrix& m) {
  for (double x : m.flat()) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void sgd_update(Matrix& param, Matrix& velocity, const Matrix& grad, double momentum, double lr) {
  auto p = param.flat();
  auto v = velocity.flat();
  auto g = grad.flat();
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

EncoderConfig encoder_config_for(const Dataset& dataset, const TrainConfig& config) {
  EncoderConfig c = config.encoder;
  c.d_in = dataset.layout.d_in;
  return c;
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 1 && batch_size >= 2, ErrorKind::InvalidArgument,
          "epochs must be >= 1 and batch_size >= 2");
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::InvalidArgument, "lr must be positive");
  require(optimizer_momentum >= 0.0 && optimizer_momentum < 1.0, ErrorKind::InvalidArgument,
          "optimizer momentum must be in [0,1)");
  require(ema_momentum >= 0.0 && ema_momentum < 1.0, ErrorKind::InvalidArgument,
          "EMA momentum must be in [0,1)");
  require(budget_steps >= 1, ErrorKind::InvalidArgument, "budget_steps must be positive");
  require(!k_new || *k_new >= 0, ErrorKind::InvalidArgument, "k_new must be non-negative");
  require(augment.noise_sigma >= 0.0 && augment.scale_jitter >= 0.0 &&
              augment.crop_fraction > 0.0 && augment.crop_fraction <= 1.0 &&
              augment.flip_prob >= 0.0 && augment.flip_prob <= 1.0,
          ErrorKind::InvalidArgument, "augmentation parameters out of range");
  weights.validate();
  temps.validate();
  rg.validate();
  EncoderConfig e = encoder;
  e.d_in = std::max(e.d_in, 1);
  e.validate();
}

int model_label(const Dataset& dataset, int dataset_label, int k_new) {
  if (dataset_label == dataset.normal_label) return dataset.k_base + k_new;
  require(dataset_label >= 0 && dataset_label < dataset.k_base, ErrorKind::ValidationError,
          "labeled sample carries non-base label " + std::to_string(dataset_label));
  return dataset_label;
}

long total_steps(const Dataset& dataset, const TrainConfig& config) {
  if (config.budget_mode) return config.budget_steps;
  const std::size_t n =
      dataset.indices_of(Split::Labeled).size() + dataset.indices_of(Split::Unlabeled).size();
  const long per_epoch = static_cast<long>((n + config.batch_size - 1) / config.batch_size);
  return std::max(1L, per_epoch) * config.epochs;
}

double learning_rate(const TrainConfig& config, long step, long total) {
  if (config.lr_schedule == LrSchedule::Constant || total <= 0) return config.lr;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * config.lr * (1.0 + std::cos(std::numbers::pi * frac));
}

std::vector<std::size_t> sample_batch(const Dataset& dataset, int batch_size, Rng& rng) {
  std::vector<std::size_t> lab = dataset.indices_of(Split::Labeled);
  std::vector<std::size_t> unl = dataset.indices_of(Split::Unlabeled);
  const std::size_t total = lab.size() + unl.size();
  require(total >= 2, ErrorKind::ValidationError, "need at least two training samples");
  const std::size_t b = std::min<std::size_t>(batch_size, total);
  std::size_t n_lab = static_cast<std::size_t>(
      std::llround(static_cast<double>(b) * static_cast<double>(lab.size()) / static_cast<double>(total)));
  n_lab = std::min(n_lab, lab.size());
  std::size_t n_unl = std::min(b - n_lab, unl.size());
  n_lab = b - n_unl;

  std::vector<std::size_t> out;
  out.reserve(b);
  auto draw = [&](std::vector<std::size_t>& pool, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + rng.index(pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  };
  draw(lab, n_lab);
  draw(unl, n_unl);
  return out;
}

Checkpoint init_checkpoint(const Dataset& dataset, const TrainConfig& config, int k_new) {
  config.validate();
  validate_dataset(dataset);
  require(k_new >= 0, ErrorKind::InvalidArgument, "k_new must be non-negative");
  const auto labeled = dataset.indices_of(Split::Labeled);
  require(!(labeled.empty() && config.weights.lambda_sup > 0.0), ErrorKind::ConfigError,
          "lambda_sup > 0 but the dataset has no labeled samples");

  Checkpoint ck;
  ck.config = config;
  ck.config.k_new = k_new;
  const EncoderConfig ec = encoder_config_for(dataset, config);
  EncoderParams enc = EncoderParams::init(ec, derive_seed(config.seed, kEncoderInit));

  // labeled class means of the initial student features
  const int d = ec.d_model;
  std::vector<Vector> sums(dataset.k_base + 1, Vector(d, 0.0));
  std::vector<int> counts(dataset.k_base + 1, 0);
  for (std::size_t i : labeled) {
    const int y = model_label(dataset, *dataset.training_label(i), k_new);
    const int slot = y == dataset.k_base + k_new ? dataset.k_base : y;
    const Sample& s = dataset.samples[i];
    const EncodeOutput out = encode(s.patches, pooled_scores(s, dataset.layout), enc, config.rg);
    axpy(1.0, out.z, sums[slot]);
    ++counts[slot];
  }
  std::vector<std::optional<Vector>> means(dataset.k_base + 1);
  for (int c = 0; c <= dataset.k_base; ++c) {
    if (counts[c] > 0 && norm2(sums[c]) > 0.0) means[c] = sums[c];
  }

  Model student{enc, init_prototypes(dataset.k_base, k_new, d, derive_seed(config.seed, kPrototypeInit), means)};
  ck.state.student = student;
  ck.state.teacher = student;
  ck.state.momentum = config.ema_momentum;
  ck.optimizer.encoder_velocity = EncoderParams::zeros(ec);
  ck.optimizer.proto_velocity = Matrix(student.protos.mu.rows(), student.protos.mu.cols());
  ck.rng_state = Rng(derive_seed(config.seed, kTrainRng)).state();
  return ck;
}

LossBreakdown train_step(Checkpoint& ck, const Dataset& dataset, const std::vector<std::size_t>& batch,
                         Rng& rng, double lr) {
  const TrainConfig& cfg = ck.config;
  require(batch.size() >= 2, ErrorKind::InvalidArgument, "a training batch needs two samples");
  Model& student = ck.state.student;
  const Model& teacher = ck.state.teacher;
  const PrototypeSet& protos = student.protos;
  const int normal = protos.normal_index();
  const std::size_t b = batch.size();

  std::vector<Sample> views;
  views.reserve(2 * b);
  for (std::size_t idx : batch) {
    ViewPair pair = make_views(dataset.samples[idx], dataset.layout, cfg.augment, rng);
    views.push_back(std::move(pair.view_a));
    views.push_back(std::move(pair.view_b));
  }
  // jobs interleave views: 2i is view a of sample i, 2i+1 is view b
  std::vector<EncodeJob> jobs(2 * b);
  Vector scores(2 * b);
  for (std::size_t v = 0; v < 2 * b; ++v) {
    jobs[v].patches = &views[v].patches;
    jobs[v].anomaly = pooled_scores(views[v], dataset.layout);
    scores[v] = anomaly_score(jobs[v].anomaly, cfg.score_reduction);
  }
  std::vector<ForwardCache> caches;
  const auto s_out = encode_batch(jobs, student.encoder, cfg.rg, &caches, cfg.exec);
  const auto t_out = encode_batch(jobs, teacher.encoder, cfg.rg, nullptr, cfg.exec);

  BatchViews bv;
  for (std::size_t i = 0; i < b; ++i) {
    std::optional<int> label;
    if (auto y = dataset.training_label(batch[i])) label = model_label(dataset, *y, protos.k_new);
    bv.labels.push_back(label);
    for (int side = 0; side < 2; ++side) {
      const std::size_t v = 2 * i + side;
      const Vector q = vmf_posterior(t_out[v].z, teacher.protos, cfg.temps.tau_teacher);
      Vector target = sharpen(refine_pseudo_label(q, scores[v], normal), cfg.temps.tau_sup);
      if (label) {
        for (double& x : target) x *= 1.0 - cfg.weights.label_blend;
        target[*label] += cfg.weights.label_blend;
      }
      (side == 0 ? bv.target_a : bv.target_b).push_back(std::move(target));
      (side == 0 ? bv.z_a : bv.z_b).push_back(s_out[v].z);
      (side == 0 ? bv.h_a : bv.h_b).push_back(s_out[v].h);
    }
  }

  LossGradients g;
  const LossBreakdown loss = total_loss(bv, protos, cfg.weights, cfg.temps, &g);
  std::vector<Vector> dz(2 * b), dh(2 * b);
  for (std::size_t i = 0; i < b; ++i) {
    dz[2 * i] = std::move(g.dz_a[i]);
    dz[2 * i + 1] = std::move(g.dz_b[i]);
    dh[2 * i] = std::move(g.dh_a[i]);
    dh[2 * i + 1] = std::move(g.dh_b[i]);
  }
  EncoderParams grad = EncoderParams::zeros(student.encoder.config);
  backward_batch(student.encoder, caches, dz, dh, grad, cfg.exec);

  bool finite = all_finite(g.dmu);
  for (const Matrix* m : std::as_const(grad).tensors()) finite = finite && all_finite(*m);
  require(finite, ErrorKind::NumericalFailure, "non-finite gradient");

  // a finite gradient can still overflow the parameters; keep the old ones
  // so a failed step leaves the state untouched
  Model saved_student = student;
  OptimizerState saved_optimizer = ck.optimizer;
  auto params = student.encoder.tensors();
  auto vel = ck.optimizer.encoder_velocity.tensors();
  auto grads = std::as_const(grad).tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    sgd_update(*params[t], *vel[t], *grads[t], cfg.optimizer_momentum, lr);
  }
  sgd_update(student.protos.mu, ck.optimizer.proto_velocity, g.dmu, cfg.optimizer_momentum, lr);
  finite = true;
  for (const Matrix* m : std::as_const(student.encoder).tensors()) finite = finite && all_finite(*m);
  if (finite && all_finite(student.protos.mu)) {
    for (std::size_t c = 0; c < student.protos.mu.rows(); ++c) {
      const double n = norm2(student.protos.mu.row(c));
      finite = finite && n > 0.0 && std::isfinite(n);
    }
  } else {
    finite = false;
  }
  if (!finite) {
    student = std::move(saved_student);
    ck.optimizer = std::move(saved_optimizer);
    fail(ErrorKind::NumericalFailure, "non-finite parameters after the update");
  }
  student.protos.renormalize();
  ema_update(ck.state);
  ++ck.step;
  return loss;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config, int k_new, const Checkpoint* resume,
                  std::optional<long> stop_at) {
  TrainResult result;
  result.checkpoint = resume ? *resume : init_checkpoint(dataset, config, k_new);
  if (resume) {
    require(resume->config == [&] {
      TrainConfig c = config;
      c.k_new = k_new;
      return c;
    }(), ErrorKind::InvalidState, "resume checkpoint was produced with a different config");
  }
  Checkpoint& ck = result.checkpoint;
  Rng rng(0);
  rng.set_state(ck.rng_state);
  const long total = total_steps(dataset, config);
  const long end = stop_at ? std::min(*stop_at, total) : total;
  while (ck.step < end) {
    Checkpoint before = ck;
    Rng rng_before = rng;
    const double lr = learning_rate(config, ck.step, total);
    try {
      const auto batch = sample_batch(dataset, config.batch_size, rng);
      const LossBreakdown loss = train_step(ck, dataset, batch, rng, lr);
      result.log.push_back({ck.step, loss, lr});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NumericalFailure) throw;
      ck = std::move(before);
      rng = rng_before;
      result.aborted = true;
      result.abort_reason = "step " + std::to_string(ck.step + 1) + ": " + e.what();
      break;
    }
  }
  ck.rng_state = rng.state();
  return result;
}

std::string log_csv(const std::vector<LogRow>& log) {
  std::ostringstream out;
  out.precision(17);
  out << "step,l_dapl,l_sup,l_con_u,l_con_l,l_entropy,l_sep,total,lr\n";
  for (const LogRow& r : log) {
    out << r.step << ',' << r.loss.dapl << ',' << r.loss.sup << ',' << r.loss.con_u << ','
        << r.loss.con_l << ',' << r.loss.entropy << ',' << r.loss.sep << ',' << r.loss.total << ','
        << r.lr << '\n';
  }
  return out.str();
}

void write_log_csv(const std::vector<LogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::InvalidArgument, "cannot write " + path.string());
  out << log_csv(log);
}

namespace {

void put_model(Json& manifest, Json& arrays, const std::string& prefix, const Model& m) {
  const auto names = m.encoder.tensor_names();
  const auto tensors = m.encoder.tensors();
  for (std::size_t i = 0; i < names.size(); ++i) {
    manifest[prefix + names[i]] = {tensors[i]->rows(), tensors[i]->cols()};
    arrays[prefix + names[i]] = tensors[i]->flat();
  }
  manifest[prefix + "prototypes"] = {m.protos.mu.rows(), m.protos.mu.cols()};
  arrays[prefix + "prototypes"] = m.protos.mu.flat();
}

void get_matrix(const Json& manifest, const Json& arrays, const std::string& name, Matrix& out) {
  require(manifest.contains(name) && arrays.contains(name), ErrorKind::FormatError,
          "checkpoint is missing array '" + name + "'");
  const Json& shape = manifest.at(name);
  require(shape.is_array() && shape.size() == 2 && shape[0].is_number_unsigned() &&
              shape[1].is_number_unsigned(),
          ErrorKind::FormatError, "bad manifest entry for '" + name + "'");
  require(shape[0].get<std::size_t>() == out.rows() && shape[1].get<std::size_t>() == out.cols(),
          ErrorKind::FormatError,
          "manifest shape of '" + name + "' disagrees with the configured model");
  const Json& data = arrays.at(name);
  require(data.is_array() && data.size() == out.size(), ErrorKind::FormatError,
          "array '" + name + "' has the wrong length");
  for (std::size_t i = 0; i < out.size(); ++i) {
    require(data[i].is_number(), ErrorKind::FormatError, "array '" + name + "' holds a non-number");
    out.flat()[i] = data[i].get<double>();
  }
}

void get_model(const Json& manifest, const Json& arrays, const std::string& prefix, Model& m) {
  const auto names = m.encoder.tensor_names();
  auto tensors = m.encoder.tensors();
  for (std::size_t i = 0; i < names.size(); ++i) get_matrix(manifest, arrays, prefix + names[i], *tensors[i]);
  get_matrix(manifest, arrays, prefix + "prototypes", m.protos.mu);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  Json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["step"] = ck.step;
  j["rng_state"] = ck.rng_state;
  j["ema_momentum"] = ck.state.momentum;
  j["k_base"] = ck.state.student.protos.k_base;
  j["k_new"] = ck.state.student.protos.k_new;
  j["d_in"] = ck.state.student.encoder.config.d_in;
  j["config"] = to_json(ck.config);
  Json manifest = Json::object();
  Json arrays = Json::object();
  // the student is stored unprefixed so its prototype block is "prototypes"
  put_model(manifest, arrays, "", ck.state.student);
  put_model(manifest, arrays, "teacher.", ck.state.teacher);
  Model velocity{ck.optimizer.encoder_velocity, ck.state.student.protos};
  velocity.protos.mu = ck.optimizer.proto_velocity;
  put_model(manifest, arrays, "velocity.", velocity);
  j["manifest"] = std::move(manifest);
  j["arrays"] = std::move(arrays);
  return j.dump() + "\n";
}

Checkpoint parse_checkpoint(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    fail(ErrorKind::FormatError, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  require(j.is_object() && j.value("format", "") == kCheckpointFormat, ErrorKind::FormatError,
          "not a protoncd checkpoint");
  require(j.contains("version") && j["version"] == kCheckpointVersion, ErrorKind::FormatError,
          "unsupported checkpoint version (expected " + std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  try {
    ck.config = train_config_from_json(j.at("config"));
    ck.step = j.at("step").get<long>();
    ck.rng_state = j.at("rng_state").get<std::string>();
    ck.state.momentum = j.at("ema_momentum").get<double>();
    const int k_base = j.at("k_base").get<int>();
    const int k_new = j.at("k_new").get<int>();
    EncoderConfig ec = ck.config.encoder;
    ec.d_in = j.at("d_in").get<int>();
    require(k_base >= 0 && k_new >= 0 && ck.step >= 0, ErrorKind::FormatError,
            "negative counts in checkpoint");
    Model shape{EncoderParams::zeros(ec), PrototypeSet{Matrix(k_base + k_new + 1, ec.d_model), k_base, k_new}};
    const Json& manifest = j.at("manifest");
    const Json& arrays = j.at("arrays");
    require(manifest.is_object() && arrays.is_object(), ErrorKind::FormatError,
            "checkpoint manifest/arrays must be objects");
    ck.state.student = shape;
    ck.state.teacher = shape;
    Model velocity = shape;
    get_model(manifest, arrays, "", ck.state.student);
    get_model(manifest, arrays, "teacher.", ck.state.teacher);
    get_model(manifest, arrays, "velocity.", velocity);
    ck.optimizer.encoder_velocity = std::move(velocity.encoder);
    ck.optimizer.proto_velocity = std::move(velocity.protos.mu);
    // only the three model blocks may appear
    require(manifest.size() == 3 * (shape.encoder.tensors().size() + 1) && arrays.size() == manifest.size(),
            ErrorKind::FormatError, "checkpoint has unexpected arrays");
    ck.state.student.protos.validate();
    ck.state.teacher.protos.validate();
    Rng probe(0);
    probe.set_state(ck.rng_state);
  } catch (const Json::exception& e) {
    fail(ErrorKind::FormatError, std::string("malformed checkpoint: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::FormatError) throw;
    fail(ErrorKind::FormatError, std::string("malformed checkpoint: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::InvalidArgument, "cannot write " + path.string());
  out << serialize_checkpoint(ck);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::FormatError, "cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace protoncd
