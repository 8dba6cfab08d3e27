// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "common.hpp"
#include "protoncd/error.hpp"
#include "protoncd/numerics.hpp"
#include "protoncd/proto_head.hpp"

namespace protoncd {
namespace {

using testing::random_unit;
using testing::throws_kind;

PrototypeSet random_protos(int k_base, int k_new, int d, Rng& rng) {
  PrototypeSet p;
  p.k_base = k_base;
  p.k_new = k_new;
  p.mu = Matrix(static_cast<std::size_t>(k_base + k_new + 1), static_cast<std::size_t>(d));
  for (std::size_t c = 0; c < p.mu.rows(); ++c) {
    const Vector u = random_unit(static_cast<std::size_t>(d), rng);
    std::copy(u.begin(), u.end(), p.mu.row(c).begin());
  }
  return p;
}

std::size_t arg_max(const Vector& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

TEST(Logits, AlignedAndOrthogonal) {
  PrototypeSet p;
  p.k_base = 2;
  p.k_new = 1;
  p.mu = Matrix(4, 5, 0.0);
  for (std::size_t c = 0; c < 4; ++c) p.mu(c, c) = 1.0;
  for (std::size_t j = 0; j < 4; ++j) {
    Vector z(5, 0.0);
    z[j] = 1.0;
    const Vector l = logits(z, p);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(l[c], c == j ? 1.0 : 0.0);
  }
}

TEST(Logits, MatchesDotProducts) {
  Rng rng(1);
  const PrototypeSet p = random_protos(3, 2, 12, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector z = random_unit(12, rng);
    const Vector l = logits(z, p);
    for (std::size_t c = 0; c < p.mu.rows(); ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < 12; ++k) s += p.mu(c, k) * z[k];
      EXPECT_NEAR(l[c], s, 1e-12);
      EXPECT_LE(std::abs(l[c]), 1.0 + 1e-12);
    }
  }
  EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [&] { logits(Vector(12, 1.0), p); }));
  EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [&] { logits(random_unit(5, rng), p); }));
}

TEST(Posterior, IdenticalPrototypesGiveUniform) {
  Rng rng(2);
  PrototypeSet p = random_protos(2, 2, 6, rng);
  for (std::size_t c = 1; c < p.mu.rows(); ++c) {
    std::copy(p.mu.row(0).begin(), p.mu.row(0).end(), p.mu.row(c).begin());
  }
  const Vector q = vmf_posterior(random_unit(6, rng), p, 0.1);
  for (double x : q) EXPECT_NEAR(x, 0.2, 1e-15);
}

TEST(Posterior, LowTemperatureIsOneHot) {
  Rng rng(3);
  const PrototypeSet p = random_protos(2, 2, 6, rng);
  // z on a prototype keeps the logit gap well above tau
  for (std::size_t j = 0; j < p.mu.rows(); ++j) {
    const Vector z(p.mu.row(j).begin(), p.mu.row(j).end());
    const Vector q = vmf_posterior(z, p, 1e-4);
    const std::size_t best = arg_max(logits(z, p));
    EXPECT_EQ(best, j);
    for (std::size_t c = 0; c < q.size(); ++c) EXPECT_NEAR(q[c], c == best ? 1.0 : 0.0, 1e-9);
  }
}

TEST(Posterior, EqualsVmfDensityRatio) {
  Rng rng(4);
  for (int d : {3, 8}) {
    const PrototypeSet p = random_protos(3, 2, d, rng);
    for (double tau : {0.05, 0.1, 0.5, 2.0}) {
      const double kappa = 1.0 / tau;
      const double log_c = numerics::vmf_log_normalizer(d, kappa);
      for (int trial = 0; trial < 20; ++trial) {
        const Vector z = random_unit(static_cast<std::size_t>(d), rng);
        Vector density(p.mu.rows());
        double total = 0.0;
        for (std::size_t c = 0; c < p.mu.rows(); ++c) {
          density[c] = std::exp(log_c + kappa * dot(p.mu.row(c), z));
          total += density[c];
        }
        const Vector q = vmf_posterior(z, p, tau);
        for (std::size_t c = 0; c < q.size(); ++c) EXPECT_NEAR(q[c], density[c] / total, 1e-9);
      }
    }
  }
}

TEST(Posterior, ArgMaxInvariantUnderTemperature) {
  Rng rng(5);
  const PrototypeSet p = random_protos(3, 3, 10, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector z = random_unit(10, rng);
    const std::size_t best = arg_max(logits(z, p));
    for (double tau : {0.01, 0.1, 1.0, 10.0}) EXPECT_EQ(arg_max(vmf_posterior(z, p, tau)), best);
  }
}

TEST(Sharpen, Examples) {
  const Vector q{0.1, 0.2, 0.3, 0.4};
  const Vector same = sharpen(q, 1.0);
  for (std::size_t k = 0; k < q.size(); ++k) EXPECT_NEAR(same[k], q[k], 1e-15);
  for (double t : {0.07, 0.5, 3.0}) {
    for (double x : sharpen(Vector(5, 0.2), t)) EXPECT_NEAR(x, 0.2, 1e-15);
  }
  const Vector s = sharpen(Vector{0.6, 0.4}, 0.5);
  EXPECT_NEAR(s[0], 0.36 / 0.52, 1e-15);
  EXPECT_NEAR(s[1], 0.16 / 0.52, 1e-15);
  const Vector z = sharpen(Vector{0.0, 0.3, 0.7}, 0.07);
  EXPECT_EQ(z[0], 0.0);
  EXPECT_NO_THROW(numerics::validate_simplex(z));
  EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [] { sharpen(Vector{0.5, 0.5}, 0.0); }));
}

TEST(Sharpen, ExtremeTemperatureStaysFinite) {
  // 0.01^(1/0.01) underflows in linear space
  const Vector s = sharpen(Vector{0.01, 0.02, 0.97}, 0.01);
  EXPECT_NO_THROW(numerics::validate_simplex(s));
  EXPECT_NEAR(s[2], 1.0, 1e-12);
  EXPECT_GT(s[1], s[0]);
}

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.d_in = 4;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 1;
  c.d_ff = 8;
  c.d_proj = 4;
  return c;
}

TeacherStudentState fresh_state(std::uint64_t seed) {
  Rng rng(seed);
  TeacherStudentState s;
  s.student = {EncoderParams::init(tiny_encoder(), seed), random_protos(2, 1, 8, rng)};
  s.teacher = {EncoderParams::init(tiny_encoder(), seed + 1), random_protos(2, 1, 8, rng)};
  return s;
}

TEST(Ema, ZeroMomentumCopiesStudent) {
  TeacherStudentState s = fresh_state(6);
  s.momentum = 0.0;
  ema_update(s);
  EXPECT_EQ(s.teacher.encoder, s.student.encoder);
  for (std::size_t i = 0; i < s.student.protos.mu.size(); ++i) {
    EXPECT_NEAR(s.teacher.protos.mu.flat()[i], s.student.protos.mu.flat()[i], 1e-15);
  }
}

TEST(Ema, FixedPoint) {
  TeacherStudentState s = fresh_state(7);
  s.teacher = s.student;
  s.momentum = 0.9;
  ema_update(s);
  const std::vector<double> t = testing::flatten(s.teacher.encoder);
  const std::vector<double> st = testing::flatten(s.student.encoder);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t[i], st[i], 1e-15 * (1.0 + std::abs(st[i])));
  for (std::size_t i = 0; i < s.student.protos.mu.size(); ++i) {
    EXPECT_NEAR(s.teacher.protos.mu.flat()[i], s.student.protos.mu.flat()[i], 1e-15);
  }
}

TEST(Ema, ThreeStepsMatchClosedFormBlend) {
  TeacherStudentState s = fresh_state(8);
  s.momentum = 0.9;
  const std::vector<double> t0 = testing::flatten(s.teacher.encoder);
  const std::vector<double> st = testing::flatten(s.student.encoder);
  for (int step = 0; step < 3; ++step) {
    ema_update(s);
    for (std::size_t c = 0; c < s.teacher.protos.mu.rows(); ++c) {
      EXPECT_NEAR(norm2(s.teacher.protos.mu.row(c)), 1.0, 1e-12);
    }
  }
  const double m3 = 0.9 * 0.9 * 0.9;
  const std::vector<double> t3 = testing::flatten(s.teacher.encoder);
  for (std::size_t i = 0; i < t3.size(); ++i) EXPECT_NEAR(t3[i], m3 * t0[i] + (1.0 - m3) * st[i], 1e-12);
}

TEST(Ema, ShapeMismatchIsInvalidState) {
  TeacherStudentState s = fresh_state(9);
  s.momentum = 0.5;
  s.teacher.protos.mu = Matrix(3, 8, 0.1);
  EXPECT_TRUE(throws_kind(ErrorKind::InvalidState, [&] { ema_update(s); }));
  TeacherStudentState e = fresh_state(9);
  EncoderConfig wider = tiny_encoder();
  wider.d_ff = 12;
  e.teacher.encoder = EncoderParams::init(wider, 1);
  EXPECT_TRUE(throws_kind(ErrorKind::InvalidState, [&] { ema_update(e); }));
}

TEST(InitPrototypes, SuppliedMeansSeedBaseAndNormal) {
  Rng rng(10);
  std::vector<std::optional<Vector>> means(4);
  for (int c = 0; c < 3; ++c) {
    Vector m(16);
    for (double& x : m) x = 3.0 * rng.normal();
    means[c] = m;
  }
  means[3] = Vector(16, 0.25);
  const PrototypeSet p = init_prototypes(3, 2, 16, 42, means);
  EXPECT_EQ(p.num_classes(), 6);
  EXPECT_EQ(p.normal_index(), 5);
  EXPECT_NO_THROW(p.validate());
  for (int c = 0; c < 3; ++c) {
    const Vector u = numerics::normalize_unit(*means[c]);
    for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(p.mu(c, k), u[k], 1e-15);
  }
  for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(p.mu(5, k), 0.25 / std::sqrt(16 * 0.0625), 1e-15);
}

TEST(InitPrototypes, ReproducibleAndNovelSpread) {
  EXPECT_EQ(init_prototypes(3, 2, 16, 5), init_prototypes(3, 2, 16, 5));
  EXPECT_NE(init_prototypes(3, 2, 16, 5), init_prototypes(3, 2, 16, 6));
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const PrototypeSet p = init_prototypes(2, 4, 8, seed);
    EXPECT_NO_THROW(p.validate());
    for (int a = 2; a < 6; ++a) {
      for (int b = a + 1; b < 6; ++b) EXPECT_LE(std::abs(dot(p.mu.row(a), p.mu.row(b))), 0.5) << seed;
    }
  }
}

TEST(InitPrototypes, ImpossibleSpreadIsInitFailure) {
  // at most three lines in the plane are pairwise at |cos| <= 0.5
  EXPECT_TRUE(throws_kind(ErrorKind::InitFailure, [] { init_prototypes(1, 6, 2, 3); }));
}

TEST(PrototypeSet, ValidateAndRenormalize) {
  Rng rng(11);
  PrototypeSet p = random_protos(2, 1, 5, rng);
  EXPECT_NO_THROW(p.validate());
  for (double& x : p.mu.flat()) x *= 1.5;
  EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [&] { p.validate(); }));
  p.renormalize();
  EXPECT_NO_THROW(p.validate());
  p.k_new = 3;
  EXPECT_ANY_THROW(p.validate());
}

TEST(Temperatures, RejectNonPositive) {
  Temperatures t;
  EXPECT_NO_THROW(t.validate());
  t.tau_sep = 0.0;
  EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [&] { t.validate(); }));
}

}  // namespace
}  // namespace protoncd
