#include "kvt/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace kvt {

Tensor64 finite_diff_grad(const std::function<double(const Tensor64&)>& f, Tensor64& theta, double epsilon) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw ConfigError("finite_diff_grad: epsilon must lie in [1e-6, 1e-3], got " + std::to_string(epsilon));
  }
  auto values = theta.mutable_data();
  std::vector<double> grad(values.size());
  const auto evaluate = [&](std::size_t i) {
    const double v = f(theta);
    if (!std::isfinite(v)) {
      throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    }
    return v;
  };
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + epsilon;
    const double plus = evaluate(i);
    values[i] = original - epsilon;
    const double minus = evaluate(i);
    values[i] = original;
    grad[i] = (plus - minus) / (2.0 * epsilon);
  }
  return Tensor64(theta.shape(), std::move(grad));
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  if (analytic.size() != numeric.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0;
  double na = 0.0;
  double nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max(std::sqrt(std::max(na, nn)), floor);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

}  // namespace kvt
