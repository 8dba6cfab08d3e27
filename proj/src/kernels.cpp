// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/kernels.hpp"

#include <omp.h>

#include <cmath>
#include <exception>
#include <string>

#include "protoncd/error.hpp"

namespace protoncd {

namespace {

// Exceptions must not escape an OpenMP region; the first one is kept and
// rethrown after the loop.
class ExceptionSlot {
 public:
  template <class F>
  void run(F&& f) {
    try {
      f();
    } catch (...) {
#pragma omp critical(protoncd_exception_slot)
      if (!error_) error_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::exception_ptr error_;
};

}  // namespace

void set_worker_count(int n) {
  if (n > 0) omp_set_num_threads(n);
}

int worker_count() { return omp_get_max_threads(); }

std::vector<EncodeOutput> encode_batch(const std::vector<EncodeJob>& jobs, const EncoderParams& params,
                                       const RegionGuidanceParams& rg, std::vector<ForwardCache>* caches,
                                       ExecMode mode) {
  const long n = static_cast<long>(jobs.size());
  std::vector<EncodeOutput> out(jobs.size());
  if (caches) caches->assign(jobs.size(), ForwardCache{});
  auto one = [&](long i) {
    require(jobs[i].patches != nullptr, ErrorKind::InvalidArgument, "encode job without patches");
    out[i] = encode(*jobs[i].patches, jobs[i].anomaly, params, rg, caches ? &(*caches)[i] : nullptr);
  };
  if (mode == ExecMode::Serial) {
    for (long i = 0; i < n; ++i) one(i);
    return out;
  }
  ExceptionSlot slot;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) slot.run([&] { one(i); });
  slot.rethrow();
  return out;
}

void backward_batch(const EncoderParams& params, const std::vector<ForwardCache>& caches,
                    const std::vector<Vector>& dz, const std::vector<Vector>& dh, EncoderParams& grad,
                    ExecMode mode) {
  require(caches.size() == dz.size() && caches.size() == dh.size(), ErrorKind::InvalidArgument,
          "backward_batch: cache and upstream gradient counts differ");
  const long n = static_cast<long>(caches.size());
  std::vector<EncoderParams> per(caches.size());
  auto one = [&](long i) {
    per[i] = EncoderParams::zeros(params.config);
    encoder_backward(params, caches[i], dz[i], dh[i], per[i]);
  };
  auto target = grad.tensors();
  if (mode == ExecMode::Serial) {
    for (long i = 0; i < n; ++i) one(i);
    for (long i = 0; i < n; ++i) {
      auto src = std::as_const(per[i]).tensors();
      for (std::size_t t = 0; t < target.size(); ++t) {
        auto dst = target[t]->flat();
        auto s = src[t]->flat();
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += s[c];
      }
    }
    return;
  }
  ExceptionSlot slot;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) slot.run([&] { one(i); });
  slot.rethrow();
  std::vector<std::vector<const Matrix*>> src(caches.size());
  for (long i = 0; i < n; ++i) src[i] = std::as_const(per[i]).tensors();
  const long tensors = static_cast<long>(target.size());
#pragma omp parallel for schedule(dynamic)
  for (long t = 0; t < tensors; ++t) {
    auto dst = target[t]->flat();
    for (long i = 0; i < n; ++i) {
      auto s = src[i][t]->flat();
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += s[c];
    }
  }
}

Vector finite_diff_grad(const numerics::ScalarFunction& f, std::span<const double> x, double step,
                        ExecMode mode) {
  if (mode == ExecMode::Serial) return numerics::finite_diff_grad(f, x, step);
  require(step > 0.0, ErrorKind::InvalidArgument, "finite-difference step must be positive");
  const long n = static_cast<long>(x.size());
  Vector grad(x.size());
  ExceptionSlot slot;
#pragma omp parallel
  {
    Vector probe(x.begin(), x.end());
#pragma omp for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
      slot.run([&] {
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
      });
    }
  }
  slot.rethrow();
  return grad;
}

}  // namespace protoncd
