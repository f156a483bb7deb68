#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "reasoner/nn.hpp"

// Loop-level reference implementations used as oracles. Nothing here calls
// the library's ops; parameters are read straight from their tensors.
namespace reasoner::reference {

using Mat = std::vector<std::vector<double>>;
inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

inline Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

inline std::vector<double> flat(const Mat& m) {
  std::vector<double> out;
  for (const auto& r : m) out.insert(out.end(), r.begin(), r.end());
  return out;
}

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline Mat affine(const Mat& x, const Linear& l) {
  const std::size_t in = l.weight.rows(), out = l.weight.cols();
  Mat y = zeros(x.size(), out);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < out; ++k) {
      double s = l.bias.defined() ? l.bias.data()[k] : 0.0;
      for (std::size_t j = 0; j < in; ++j) s += x[i][j] * l.weight.at(j, k);
      y[i][k] = s;
    }
  return y;
}

inline Mat norm(const Mat& x, const LayerNorm& ln) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = static_cast<double>(x[i].size());
    double mean = 0.0, var = 0.0;
    for (double v : x[i]) mean += v / w;
    for (double v : x[i]) var += (v - mean) * (v - mean) / w;
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * ln.gamma.data()[j] + ln.beta.data()[j];
  }
  return y;
}

inline double gelu(double v) {
  return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
}

// Rows of a softmax over `a` where −∞ entries get weight 0.
inline std::vector<double> softmax(std::vector<double> a) {
  double mx = kMasked;
  for (double v : a) mx = std::max(mx, v);
  double z = 0.0;
  for (double& v : a) z += (v = v == kMasked ? 0.0 : std::exp(v - mx));
  for (double& v : a) v /= z;
  return a;
}

// Pre-norm transformer block. `bias(z)` returns the additive logit matrix
// (masks included) given the normed input; weights of head 0 are optionally
// reported.
template <class BiasFn>
Mat block(const Mat& x, const BlockParams& b, std::size_t heads, BiasFn bias, Mat* weights_out = nullptr) {
  const std::size_t n = x.size(), d = x[0].size(), dh = d / heads;
  const Mat z = norm(x, b.attn_norm);
  const Mat q = affine(z, b.query), k = affine(z, b.key), v = affine(z, b.value);
  const Mat u = bias(z);
  Mat merged = zeros(n, d);
  if (weights_out) *weights_out = zeros(n, n);
  for (std::size_t hd = 0; hd < heads; ++hd)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> a(n);
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) s += q[i][c] * k[j][c];
        a[j] = u[i][j] == kMasked ? kMasked : s / std::sqrt(static_cast<double>(dh)) + u[i][j];
      }
      a = softmax(a);
      for (std::size_t j = 0; j < n; ++j) {
        if (weights_out && hd == 0) (*weights_out)[i][j] = a[j];
        for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) merged[i][c] += a[j] * v[j][c];
      }
    }
  Mat attended = affine(merged, b.output);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) attended[i][c] += x[i][c];
  Mat f = affine(norm(attended, b.ffn_norm), b.ffn_in);
  for (auto& r : f)
    for (auto& val : r) val = gelu(val);
  Mat out = affine(f, b.ffn_out);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) out[i][c] += attended[i][c];
  return out;
}

}  // namespace reasoner::reference
