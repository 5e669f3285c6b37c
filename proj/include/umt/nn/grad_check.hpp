#pragma once

#include "umt/nn/dense.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>

namespace umt::nn {

template <typename Scalar>
Encoder<Scalar> zeros_like(const Encoder<Scalar>& enc) {
  return enc.zeros_like();
}

template <typename Scalar>
DenseLayer<Scalar> zeros_like(const DenseLayer<Scalar>& layer) {
  return DenseLayer<Scalar>(layer.in_dim(), layer.out_dim());
}

struct GradCheckOptions {
  double epsilon = 1e-4;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so that vanishing coordinates
  // are compared in absolute terms.
  double floor = 1e-4;
};

struct GradCheckReport {
  bool passed = true;
  double max_relative_error = 0;
  std::size_t worst_block = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t checked = 0;
  // Coordinates whose finite-difference window straddles a ReLU kink.
  std::size_t flagged_kinks = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares analytic gradients with central differences, coordinate by coordinate.
///
/// `loss(model, grad)` must return the scalar loss and, when grad is non-null,
/// accumulate the analytic gradient into it (grad starts zeroed). A coordinate
/// that fails the tolerance is flagged as a kink instead of a failure when its
/// one-sided slopes disagree by more than the analytic/numeric discrepancy,
/// which is the signature of a non-differentiable point inside the window.
template <typename Model, typename LossFn>
GradCheckReport grad_check(Model& model, LossFn&& loss, const GradCheckOptions& options = {}) {
  Model grad = zeros_like(model);
  const double base = static_cast<double>(loss(std::as_const(model), &grad));
  auto params = parameter_blocks(model);
  auto grads = parameter_blocks(grad);
  GradCheckReport report;
  const double h = options.epsilon;
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& p = params[b];
    for (Index i = 0; i < p.size(); ++i) {
      auto& coord = p.data()[i];
      const auto saved = coord;
      coord = saved + h;
      const double plus = static_cast<double>(loss(std::as_const(model), nullptr));
      coord = saved - h;
      const double minus = static_cast<double>(loss(std::as_const(model), nullptr));
      coord = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double analytic = static_cast<double>(grads[b].data()[i]);
      double err = relative_error(analytic, numeric, options.floor);
      ++report.checked;
      if (err >= options.tolerance) {
        const double slope_gap = std::abs((plus - base) / h - (base - minus) / h);
        if (slope_gap > std::abs(analytic - numeric)) {
          ++report.flagged_kinks;
          continue;
        }
      }
      if (!(err <= report.max_relative_error) || std::isnan(err)) {
        if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
        report.max_relative_error = err;
        report.worst_block = b;
        report.worst_index = static_cast<std::size_t>(i);
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace umt::nn
