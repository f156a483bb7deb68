#pragma once

#include <random>
#include <vector>

#include "reasoner/ops.hpp"

namespace reasoner::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Reduces any tensor to a scalar with fixed, non-uniform weights so every
// output coordinate contributes a distinct amount to the gradient.
inline Tensor weighted_sum(const Tensor& x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(x.shape(), rng, 1.0, false);
  return sum(mul(x, w));
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace reasoner::testing
