// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hsgat/tensor.hpp"

namespace hsgat {

struct ParamCheck {
  std::string name;
  std::size_t coordinates_checked = 0;
  double max_relative_error = 0.0;
  double analytic_at_max = 0.0;
  double numeric_at_max = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_relative_error = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Coordinates probed per parameter; larger tensors are sampled at a
  /// fixed stride. Zero means every coordinate.
  std::size_t max_coordinates = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(x+h) - f(x-h)) / 2h. `f` must be deterministic; it is
/// re-evaluated with the parameter values perturbed in place.
inline GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  const GradCheckOptions& opt = {},
                                  const std::vector<std::string>& names = {}) {
  if (!(opt.step > 0.0)) throw RangeError("grad_check: step must be positive");
  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    Tensor loss = f();
    if (loss.node()->tape == &tape) {
      tape.backward(loss);
    } else if (loss.rows() != 1 || loss.cols() != 1) {
      throw DimensionError("grad_check: f must return a scalar, got " + loss.shape_str());
    }
  }
  auto eval = [&] { return f().item(); };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const Matrix analytic = p.grad();
    Matrix& values = p.mutable_value();
    ParamCheck pc;
    pc.name = pi < names.size() ? names[pi] : "param" + std::to_string(pi);
    const std::size_t n = values.size();
    const std::size_t stride =
        (opt.max_coordinates == 0 || n <= opt.max_coordinates) ? 1 : n / opt.max_coordinates;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = values[i];
      values[i] = orig + opt.step;
      const double up = eval();
      values[i] = orig - opt.step;
      const double down = eval();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double err = relative_error(analytic[i], numeric);
      ++pc.coordinates_checked;
      if (err > pc.max_relative_error) {
        pc.max_relative_error = err;
        pc.analytic_at_max = analytic[i];
        pc.numeric_at_max = numeric;
      }
    }
    pc.passed = pc.max_relative_error < opt.tolerance;
    report.max_relative_error = std::max(report.max_relative_error, pc.max_relative_error);
    report.passed = report.passed && pc.passed;
    report.params.push_back(std::move(pc));
  }
  for (auto& p : params) p.zero_grad();
  return report;
}

}  // namespace hsgat
