#pragma once

#include <functional>
#include <span>

#include "kvt/tensor.hpp"

namespace kvt {

/// Central-difference gradient of `f` with respect to `theta`, evaluated by
/// perturbing theta's storage in place (restored afterwards). `f` must be
/// deterministic. Runs in double precision.
///
/// Throws ConfigError if epsilon is outside [1e-6, 1e-3] and NumericError if
/// any evaluation of `f` is not finite.
Tensor64 finite_diff_grad(const std::function<double(const Tensor64&)>& f, Tensor64& theta,
                          double epsilon = 1e-5);

/// ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, floor), or 0
/// when the denominator is zero. A positive floor keeps gradients that are
/// zero up to round-off from reading as a 100% error.
double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 0.0);

}  // namespace kvt
