// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/proto_head.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "protoncd/error.hpp"
#include "protoncd/numerics.hpp"
#include "protoncd/rng.hpp"

namespace protoncd {

namespace {

constexpr double kUnitTolerance = 1e-6;
constexpr double kNovelMaxCos = 0.5;
constexpr int kInitAttempts = 10000;

void blend(Matrix& teacher, const Matrix& student, double m) {
  auto t = teacher.flat();
  auto s = student.flat();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = m * t[i] + (1.0 - m) * s[i];
}

}  // namespace

void PrototypeSet::validate() const {
  require(k_base >= 0 && k_new >= 0, ErrorKind::InvalidArgument, "negative class counts");
  require(mu.rows() == static_cast<std::size_t>(num_classes()), ErrorKind::InvalidArgument,
          "prototype count does not match k_base + k_new + 1");
  for (std::size_t c = 0; c < mu.rows(); ++c) {
    require(std::abs(norm2(mu.row(c)) - 1.0) <= 1e-9, ErrorKind::InvalidArgument,
            "prototype " + std::to_string(c) + " is not unit norm");
  }
}

void PrototypeSet::renormalize() {
  for (std::size_t c = 0; c < mu.rows(); ++c) {
    auto row = mu.row(c);
    const double n = norm2(row);
    require(n > 0.0 && std::isfinite(n), ErrorKind::NumericalFailure,
            "prototype " + std::to_string(c) + " collapsed to zero");
    for (double& x : row) x /= n;
  }
}

void Temperatures::validate() const {
  for (double t : {tau, tau_sup, tau_stu, tau_c, tau_sep, tau_base, tau_teacher}) {
    require(t > 0.0 && std::isfinite(t), ErrorKind::InvalidArgument,
            "temperatures must be positive");
  }
}

Vector logits(std::span<const double> z, const PrototypeSet& protos) {
  require(z.size() == protos.mu.cols(), ErrorKind::InvalidArgument,
          "feature dimension does not match the prototypes");
  require(std::abs(norm2(z) - 1.0) <= kUnitTolerance, ErrorKind::InvalidArgument,
          "logits require a unit-norm feature");
  Vector out(protos.mu.rows());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = dot(protos.mu.row(c), z);
  return out;
}

Vector vmf_posterior(std::span<const double> z, const PrototypeSet& protos, double tau) {
  return numerics::softmax(logits(z, protos), tau);
}

Vector sharpen(std::span<const double> q, double temperature) {
  require(temperature > 0.0, ErrorKind::InvalidArgument, "sharpen temperature must be positive");
  numerics::validate_simplex(q);
  // work in log space so tiny entries do not underflow before normalization
  Vector lg(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    lg[i] = q[i] > 0.0 ? std::log(q[i]) : -std::numeric_limits<double>::infinity();
  }
  return numerics::softmax(lg, temperature);
}

void ema_update(TeacherStudentState& state) {
  const double m = state.momentum;
  require(m >= 0.0 && m < 1.0, ErrorKind::InvalidArgument, "EMA momentum must be in [0,1)");
  Model& t = state.teacher;
  const Model& s = state.student;
  require(t.encoder.same_shape(s.encoder) && t.protos.mu.same_shape(s.protos.mu),
          ErrorKind::InvalidState, "teacher and student shapes differ");
  auto tt = t.encoder.tensors();
  auto st = s.encoder.tensors();
  for (std::size_t i = 0; i < tt.size(); ++i) blend(*tt[i], *st[i], m);
  blend(t.protos.mu, s.protos.mu, m);
  t.protos.renormalize();
}

PrototypeSet init_prototypes(int k_base, int k_new, int d, std::uint64_t seed,
                             const std::vector<std::optional<Vector>>& class_means) {
  require(k_base >= 0 && k_new >= 0 && d >= 2, ErrorKind::InvalidArgument,
          "invalid prototype dimensions");
  require(class_means.empty() || class_means.size() == static_cast<std::size_t>(k_base) + 1,
          ErrorKind::InvalidArgument, "class_means needs k_base + 1 entries");
  PrototypeSet p;
  p.k_base = k_base;
  p.k_new = k_new;
  const int k = p.num_classes();
  p.mu = Matrix(k, d);
  Rng rng(seed);

  auto set_row = [&](int c, const Vector& v) {
    const Vector u = numerics::normalize_unit(v);
    std::copy(u.begin(), u.end(), p.mu.row(c).begin());
  };
  auto known = [&](int slot) -> const std::optional<Vector>& {
    static const std::optional<Vector> kNone;
    return class_means.empty() ? kNone : class_means[slot];
  };
  for (int c = 0; c < k_base; ++c) {
    if (known(c)) {
      require(known(c)->size() == static_cast<std::size_t>(d), ErrorKind::InvalidArgument,
              "class mean has the wrong dimension");
      set_row(c, *known(c));
    } else {
      set_row(c, sample_uniform_sphere(d, rng));
    }
  }
  if (known(k_base)) {
    require(known(k_base)->size() == static_cast<std::size_t>(d), ErrorKind::InvalidArgument,
            "class mean has the wrong dimension");
    set_row(k - 1, *known(k_base));
  } else {
    set_row(k - 1, sample_uniform_sphere(d, rng));
  }

  for (int c = k_base; c < k_base + k_new; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kInitAttempts && !placed; ++attempt) {
      const Vector v = sample_uniform_sphere(d, rng);
      placed = true;
      // checked against every prototype placed so far, not only the novel ones
      for (int prev = 0; prev < c && placed; ++prev) {
        placed = std::abs(dot(p.mu.row(prev), v)) <= kNovelMaxCos;
      }
      placed = placed && std::abs(dot(p.mu.row(k - 1), v)) <= kNovelMaxCos;
      if (placed) set_row(c, v);
    }
    require(placed, ErrorKind::InitFailure,
            "could not place novel prototype " + std::to_string(c) + " with |cos| <= 0.5");
  }
  return p;
}

}  // namespace protoncd
