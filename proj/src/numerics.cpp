// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "protoncd/error.hpp"

namespace protoncd::numerics {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_mask_compatible(std::span<const double> v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    require(!std::isnan(v[i]) && v[i] != std::numeric_limits<double>::infinity(),
            ErrorKind::InvalidArgument,
            "entry " + std::to_string(i) + " is NaN or +inf");
  }
}

double log_bessel_series(double order, double kappa) {
  const double half = 0.5 * kappa;
  const double q = half * half;
  double term = 1.0;
  double sum = 1.0;
  for (int m = 0; m + 1 < kBesselSeriesTerms; ++m) {
    term *= q / ((m + 1.0) * (m + 1.0 + order));
    sum += term;
  }
  return order * std::log(half) - std::lgamma(order + 1.0) + std::log(sum);
}

// Uniform asymptotic expansion written in (order, kappa) so that order = 0 is
// a regular point: U_k(p) / order^k = t^k * (U_k(p) / p^k) with t = 1/s.
double log_bessel_debye(double order, double kappa) {
  const double s = std::hypot(order, kappa);
  const double t = 1.0 / s;
  const double p = order * t;
  const double p2 = p * p;
  const double poly[6] = {
      1.0,
      (3.0 - 5.0 * p2) / 24.0,
      (81.0 + p2 * (-462.0 + p2 * 385.0)) / 1152.0,
      (30375.0 + p2 * (-369603.0 + p2 * (765765.0 - p2 * 425425.0))) / 414720.0,
      (4465125.0 +
       p2 * (-94121676.0 + p2 * (349922430.0 + p2 * (-446185740.0 + p2 * 185910725.0)))) /
          39813120.0,
      (1519035525.0 +
       p2 * (-49286948607.0 +
             p2 * (284499769554.0 +
                   p2 * (-614135872350.0 + p2 * (566098157625.0 - p2 * 188699385875.0))))) /
          6688604160.0,
  };
  double sum = 0.0;
  double tk = 1.0;
  for (double c : poly) {
    sum += tk * c;
    tk *= t;
  }
  return s + order * std::log(kappa / (order + s)) - 0.5 * std::log(2.0 * std::numbers::pi) -
         0.5 * std::log(s) + std::log(sum);
}

}  // namespace

double log_sum_exp(std::span<const double> v) {
  require(!v.empty(), ErrorKind::InvalidArgument, "log_sum_exp of empty vector");
  check_mask_compatible(v);
  const double m = *std::max_element(v.begin(), v.end());
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

Vector softmax(std::span<const double> v, double temperature) {
  require(temperature > 0.0, ErrorKind::InvalidArgument, "softmax temperature must be positive");
  require(!v.empty(), ErrorKind::InvalidArgument, "softmax of empty vector");
  check_mask_compatible(v);
  const double m = *std::max_element(v.begin(), v.end());
  require(m != kNegInf, ErrorKind::DegenerateInput, "softmax with every entry masked");
  Vector out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] == kNegInf ? 0.0 : std::exp((v[i] - m) / temperature);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

Vector normalize_unit(std::span<const double> v) {
  for (double x : v) require(std::isfinite(x), ErrorKind::InvalidArgument, "non-finite entry");
  const double n = norm2(v);
  require(n > 0.0, ErrorKind::DegenerateInput, "cannot normalize a zero vector");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

double log_bessel_i(double order, double kappa) {
  require(order >= 0.0 && kappa >= 0.0 && std::isfinite(order) && std::isfinite(kappa),
          ErrorKind::InvalidArgument, "bessel_i requires finite order >= 0 and kappa >= 0");
  if (kappa == 0.0) return order == 0.0 ? 0.0 : kNegInf;
  return kappa <= kBesselSwitch ? log_bessel_series(order, kappa) : log_bessel_debye(order, kappa);
}

double bessel_i(double order, double kappa) { return std::exp(log_bessel_i(order, kappa)); }

double vmf_log_normalizer(int d, double kappa) {
  require(d >= 2, ErrorKind::InvalidArgument, "vMF dimension must be >= 2");
  require(kappa > 0.0, ErrorKind::InvalidArgument, "vMF concentration must be positive");
  const double nu = 0.5 * d - 1.0;
  return nu * std::log(kappa) - 0.5 * d * std::log(2.0 * std::numbers::pi) -
         log_bessel_i(nu, kappa);
}

double vmf_mean_resultant_length(int d, double kappa) {
  require(d >= 2 && kappa > 0.0, ErrorKind::InvalidArgument, "invalid vMF parameters");
  return std::exp(log_bessel_i(0.5 * d, kappa) - log_bessel_i(0.5 * d - 1.0, kappa));
}

void validate_simplex(std::span<const double> p) {
  require(!p.empty(), ErrorKind::InvalidArgument, "empty probability vector");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(std::isfinite(p[i]) && p[i] >= -kSimplexTolerance && p[i] <= 1.0 + kSimplexTolerance)) {
      fail(ErrorKind::InvalidArgument, "probability entry " + std::to_string(i) + " outside [0,1]");
    }
    s += p[i];
  }
  if (!(std::abs(s - 1.0) <= kSimplexTolerance)) {
    fail(ErrorKind::InvalidArgument, "probabilities sum to " + std::to_string(s));
  }
}

double entropy(std::span<const double> p) {
  validate_simplex(p);
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> x, double step) {
  require(step > 0.0, ErrorKind::InvalidArgument, "finite-difference step must be positive");
  Vector probe(x.begin(), x.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double fp = f(probe);
    probe[i] = saved - step;
    const double fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      fail(ErrorKind::NumericalFailure, "non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

}  // namespace protoncd::numerics
