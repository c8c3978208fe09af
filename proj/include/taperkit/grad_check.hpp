#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "taperkit/tensor.hpp"

namespace taperkit {

struct GradCheckInput {
  std::string name;
  Tensor64 tensor;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_err = 0.0;
  std::string worst_input;

  struct PerInput {
    std::string name;
    double max_rel_err = 0.0;
  };
  std::vector<PerInput> inputs;
};

// Compare reverse-mode gradients of a scalar-valued function against central
// differences, all in double. `forward` must rebuild its graph from the
// given inputs on every call.
inline GradCheckReport grad_check(std::vector<GradCheckInput> inputs,
                                  const std::function<Tensor64(std::vector<GradCheckInput>&)>& forward,
                                  double tol = 1e-4, double h = 1e-5) {
  GradCheckReport report;

  for (auto& in : inputs) in.tensor.set_requires_grad(true);
  Tensor64 loss = forward(inputs);
  if (loss.numel() != 1) throw ValidationError("grad_check: forward must return a scalar");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) analytic.push_back(in.tensor.grad());

  for (auto& in : inputs) {
    in.tensor.zero_grad();
    in.tensor.set_requires_grad(false);
  }

  double worst = 0.0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    auto& vals = inputs[t].tensor.values();
    double input_worst = 0.0;
    for (size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = forward(inputs).values()[0];
      vals[i] = orig - h;
      const double fm = forward(inputs).values()[0];
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[t][i];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      input_worst = std::max(input_worst, rel);
    }
    report.inputs.push_back({inputs[t].name, input_worst});
    if (input_worst > worst) {
      worst = input_worst;
      report.worst_input = inputs[t].name;
    }
  }
  report.max_rel_err = worst;
  report.passed = worst <= tol;
  return report;
}

}  // namespace taperkit
