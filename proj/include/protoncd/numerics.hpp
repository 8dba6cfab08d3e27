// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <functional>
#include <span>

#include "protoncd/linalg.hpp"

namespace protoncd::numerics {

/// Series/asymptotic switch point for the modified Bessel function.
inline constexpr double kBesselSwitch = 50.0;
inline constexpr int kBesselSeriesTerms = 60;
/// Tolerance used whenever a probability vector is validated.
inline constexpr double kSimplexTolerance = 1e-9;

/// log(sum(exp(v))) with max-shift. Entries may be -inf (masked); an all -inf
/// input returns -inf. NaN and +inf are rejected.
double log_sum_exp(std::span<const double> v);

/// exp(v_k / t) / sum_c exp(v_c / t). Entries equal to -inf map to exactly 0.
Vector softmax(std::span<const double> v, double temperature);

/// v / |v|_2. Throws DegenerateInput on a zero vector.
Vector normalize_unit(std::span<const double> v);

/// Modified Bessel function of the first kind I_order(kappa), order >= 0,
/// kappa >= 0. Ascending series (60 terms) up to kappa = 50, uniform
/// (Debye) asymptotic expansion above. Overflows to +inf for kappa >~ 700;
/// use log_bessel_i there.
double bessel_i(double order, double kappa);
double log_bessel_i(double order, double kappa);

/// log C_d(kappa) for the von Mises-Fisher density on S^{d-1}.
double vmf_log_normalizer(int d, double kappa);

/// Expected mean resultant length A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa).
double vmf_mean_resultant_length(int d, double kappa);

/// Throws InvalidArgument unless p is a probability vector within kSimplexTolerance.
void validate_simplex(std::span<const double> p);

/// Shannon entropy in nats with 0 log 0 := 0.
double entropy(std::span<const double> p);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> x, double step);

}  // namespace protoncd::numerics
