// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "protoncd/encoder.hpp"
#include "protoncd/error.hpp"
#include "protoncd/rng.hpp"

namespace protoncd::testing {

inline std::vector<double> flatten(const EncoderParams& p) {
  std::vector<double> out;
  for (const Matrix* m : p.tensors()) out.insert(out.end(), m->flat().begin(), m->flat().end());
  return out;
}

inline void unflatten(std::span<const double> x, EncoderParams& p) {
  std::size_t at = 0;
  for (Matrix* m : p.tensors()) {
    std::copy(x.begin() + at, x.begin() + at + m->size(), m->flat().begin());
    at += m->size();
  }
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
  Matrix m(r, c);
  for (double& x : m.flat()) x = sd * rng.normal();
  return m;
}

inline Vector random_unit(std::size_t d, Rng& rng) {
  Vector v(d);
  double n = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

// |a - n| <= max(abs_floor, rel * max(|a|, |n|)) per coordinate; returns the
// first failing index or -1.
inline long first_gradient_mismatch(std::span<const double> analytic, std::span<const double> numeric,
                                    double rel = 1e-4, double abs_floor = 1e-6) {
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double tol = std::max(abs_floor, rel * std::max(std::abs(a), std::abs(n)));
    if (!(std::abs(a - n) <= tol)) return static_cast<long>(i);
  }
  return -1;
}

// Passes when f throws protoncd::Error of the given kind.
template <class F>
::testing::AssertionResult throws_kind(ErrorKind kind, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.kind() == kind) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure() << "wrong kind: " << e.what();
  } catch (const std::exception& e) {
    return ::testing::AssertionFailure() << "foreign exception: " << e.what();
  }
  return ::testing::AssertionFailure() << "nothing thrown, expected " << to_string(kind);
}

}  // namespace protoncd::testing
