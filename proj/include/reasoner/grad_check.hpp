#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "reasoner/tensor.hpp"

namespace reasoner {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

struct GradCheckOptions {
  // Coordinates sampled per parameter tensor; 0 checks every coordinate.
  std::size_t coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
  // Per-tensor maximum, in the order of the ParamList.
  std::vector<std::pair<std::string, double>> per_parameter;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

// Compares reverse-mode gradients of `f` against central differences.
// `f` must rebuild its graph from the current parameter values on each call.
inline GradCheckReport grad_check(const std::function<Tensor()>& f, ParamList params, double eps,
                                  GradCheckOptions options = {}) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ContractError("grad_check: step " + std::to_string(eps) + " outside [1e-7, 1e-3]");
  }
  for (auto& p : params) p.tensor.zero_grad();
  Tensor loss = f();
  const double baseline = loss.item();
  backward(loss);
  {
    NoGradGuard no_grad;
    const double again = f().item();
    if (again != baseline) {
      throw DeterminismError("grad_check: objective is not deterministic (" + std::to_string(baseline) +
                             " vs " + std::to_string(again) + ")");
    }
  }

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (auto& p : params) {
    auto& values = p.tensor.data();
    std::vector<double> analytic = p.tensor.has_grad() ? p.tensor.grad() : std::vector<double>(values.size(), 0.0);
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.coords_per_tensor && coords.size() > options.coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    double tensor_max = 0.0;
    NoGradGuard no_grad;
    for (std::size_t c : coords) {
      const double saved = values[c];
      values[c] = saved + eps;
      const double plus = f().item();
      values[c] = saved - eps;
      const double minus = f().item();
      values[c] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = relative_error(analytic[c], numeric);
      tensor_max = std::max(tensor_max, err);
      ++report.coordinates_checked;
      if (err > report.max_relative_error || report.worst_parameter.empty()) {
        if (err >= report.max_relative_error) {
          report.max_relative_error = err;
          report.worst_parameter = p.name;
          report.worst_index = c;
          report.worst_analytic = analytic[c];
          report.worst_numeric = numeric;
        }
      }
    }
    report.per_parameter.emplace_back(p.name, tensor_max);
  }
  return report;
}

}  // namespace reasoner
