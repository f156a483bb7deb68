#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "reasoner/tensor.hpp"

// Differentiable operations over Tensor. Each op computes its forward value
// eagerly and, when any input is tracked, records a backward rule.
namespace reasoner {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap as_matrix(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline MatMap as_matrix(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

inline void accumulate(Node& input, const std::vector<double>& g) {
  if (!input.requires_grad) return;
  auto& buf = input.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace detail

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---- linear algebra -------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  if (b.rows() != q) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  std::vector<double> out(p * r);
  detail::as_matrix(out, p, r).noalias() =
      detail::as_matrix(a.data(), p, q) * detail::as_matrix(b.data(), q, r);
  return Tensor::from_op({p, r}, std::move(out), "matmul", {a, b}, [p, q, r](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    auto g = detail::as_matrix(std::as_const(self.grad), p, r);
    if (A.requires_grad) {
      auto ga = detail::as_matrix(A.grad_buffer(), p, q);
      ga.noalias() += g * detail::as_matrix(std::as_const(B.value), q, r).transpose();
    }
    if (B.requires_grad) {
      auto gb = detail::as_matrix(B.grad_buffer(), q, r);
      gb.noalias() += detail::as_matrix(std::as_const(A.value), p, q).transpose() * g;
    }
  });
}

// a · bᵀ without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t p = a.rows(), q = a.cols(), r = b.rows();
  if (b.cols() != q) {
    throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(p * r);
  detail::as_matrix(out, p, r).noalias() =
      detail::as_matrix(a.data(), p, q) * detail::as_matrix(b.data(), r, q).transpose();
  return Tensor::from_op({p, r}, std::move(out), "matmul_nt", {a, b}, [p, q, r](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    auto g = detail::as_matrix(std::as_const(self.grad), p, r);
    if (A.requires_grad) {
      detail::as_matrix(A.grad_buffer(), p, q).noalias() +=
          g * detail::as_matrix(std::as_const(B.value), r, q);
    }
    if (B.requires_grad) {
      detail::as_matrix(B.grad_buffer(), r, q).noalias() +=
          g.transpose() * detail::as_matrix(std::as_const(A.value), p, q);
    }
  });
}

// ---- elementwise ----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor::from_op(a.shape(), std::move(out), "add", {a, b}, [](detail::Node& self) {
    detail::accumulate(*self.inputs[0], self.grad);
    detail::accumulate(*self.inputs[1], self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor::from_op(a.shape(), std::move(out), "sub", {a, b}, [](detail::Node& self) {
    detail::accumulate(*self.inputs[0], self.grad);
    auto& B = *self.inputs[1];
    if (!B.requires_grad) return;
    auto& gb = B.grad_buffer();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor::from_op(a.shape(), std::move(out), "mul", {a, b}, [](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& ga = A.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& gb = B.grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * A.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return Tensor::from_op(a.shape(), std::move(out), "scale", {a}, [s](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& ga = A.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * s;
  });
}

// x[n×m] + b broadcast over rows; b holds m values (any shape of that size).
inline Tensor add_row_vector(const Tensor& x, const Tensor& b) {
  detail::require_matrix(x, "add_row_vector");
  const std::size_t n = x.rows(), m = x.cols();
  if (b.size() != m) {
    throw DimensionError("add_row_vector: bias " + shape_string(b.shape()) + " vs rows of " +
                         shape_string(x.shape()));
  }
  std::vector<double> out(x.data());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += b.data()[j];
  return Tensor::from_op(x.shape(), std::move(out), "add_row_vector", {x, b},
                         [n, m](detail::Node& self) {
                           detail::accumulate(*self.inputs[0], self.grad);
                           auto& B = *self.inputs[1];
                           if (!B.requires_grad) return;
                           auto& gb = B.grad_buffer();
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < m; ++j) gb[j] += self.grad[i * m + j];
                         });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  return Tensor::from_op(x.shape(), std::move(out), "relu", {x}, [](detail::Node& self) {
    auto& X = *self.inputs[0];
    auto& gx = X.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (X.value[i] > 0.0) gx[i] += self.grad[i];
  });
}

inline double gelu_value(double v) {
  return 0.5 * v * (1.0 + std::tanh(detail::kGeluC * (v + 0.044715 * v * v * v)));
}

inline double gelu_derivative(double v) {
  const double u = detail::kGeluC * (v + 0.044715 * v * v * v);
  const double t = std::tanh(u);
  const double du = detail::kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
  return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
}

// Smooth member of the relu family (tanh-approximated GELU).
inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(x.data()[i]);
  return Tensor::from_op(x.shape(), std::move(out), "gelu", {x}, [](detail::Node& self) {
    auto& X = *self.inputs[0];
    auto& gx = X.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * gelu_derivative(X.value[i]);
  });
}

// ---- normalization --------------------------------------------------------

// Row softmax. −∞ entries map to exactly 0; a row with no finite entry is an
// error.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix(x, "softmax_rows");
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data().data() + i * m;
    double mx = kNegInf;
    for (std::size_t j = 0; j < m; ++j) {
      if (std::isnan(row[j]) || row[j] == -kNegInf)
        throw DivergenceError("softmax_rows: non-finite logit in row " + std::to_string(i));
      mx = std::max(mx, row[j]);
    }
    if (mx == kNegInf) throw DegenerateRowError("softmax_rows: row " + std::to_string(i) + " is entirely -inf");
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double e = row[j] == kNegInf ? 0.0 : std::exp(row[j] - mx);
      out[i * m + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  return Tensor::from_op(x.shape(), std::move(out), "softmax_rows", {x}, [n, m](detail::Node& self) {
    auto& X = *self.inputs[0];
    auto& gx = X.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const double* y = self.value.data() + i * m;
      const double* g = self.grad.data() + i * m;
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += y[j] * (g[j] - dot);
    }
  });
}

// Per-row layer normalization with learnable scale and offset (width m each).
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  detail::require_matrix(x, "layer_norm");
  const std::size_t n = x.rows(), m = x.cols();
  if (gamma.size() != m || beta.size() != m) {
    throw DimensionError("layer_norm: parameters do not match row width of " + shape_string(x.shape()));
  }
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data().data() + i * m;
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += row[j];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      xhat[i * m + j] = (row[j] - mean) * inv_std[i];
      out[i * m + j] = xhat[i * m + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  return Tensor::from_op(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& X = *self.inputs[0];
        auto& G = *self.inputs[1];
        auto& B = *self.inputs[2];
        const double* g = self.grad.data();
        if (G.requires_grad) {
          auto& gg = G.grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gg[j] += g[i * m + j] * xhat[i * m + j];
        }
        if (B.requires_grad) {
          auto& gb = B.grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
        }
        if (X.requires_grad) {
          auto& gx = X.grad_buffer();
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t i = 0; i < n; ++i) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
              const double dy = g[i * m + j] * G.value[j];
              sum_dy += dy;
              sum_dy_xhat += dy * xhat[i * m + j];
            }
            for (std::size_t j = 0; j < m; ++j) {
              const double dy = g[i * m + j] * G.value[j];
              gx[i * m + j] += inv_std[i] * (dy - inv_m * sum_dy - xhat[i * m + j] * inv_m * sum_dy_xhat);
            }
          }
        }
      });
}

// ---- indexing -------------------------------------------------------------

// Rows of `table` selected by `ids`.
inline Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  detail::require_matrix(table, "embedding_lookup");
  const std::size_t v = table.rows(), d = table.cols(), n = ids.size();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] >= v) {
      throw VocabularyError("embedding_lookup: index " + std::to_string(ids[i]) + " outside table of " +
                            std::to_string(v) + " rows");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return Tensor::from_op({n, d}, std::move(out), "embedding_lookup", {table},
                         [ids = std::vector<std::size_t>(ids.begin(), ids.end()), d](detail::Node& self) {
                           auto& gt = self.inputs[0]->grad_buffer();
                           for (std::size_t i = 0; i < ids.size(); ++i)
                             for (std::size_t j = 0; j < d; ++j) gt[ids[i] * d + j] += self.grad[i * d + j];
                         });
}

// out.flat[k] = src.flat[indices[k]], reshaped to `shape`.
inline Tensor gather(const Tensor& src, std::vector<std::size_t> indices, Shape shape) {
  if (shape_size(shape) != indices.size()) throw DimensionError("gather: index count does not match shape");
  std::vector<double> out(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= src.size()) throw DimensionError("gather: index out of range");
    out[k] = src.data()[indices[k]];
  }
  return Tensor::from_op(std::move(shape), std::move(out), "gather", {src},
                         [indices = std::move(indices)](detail::Node& self) {
                           auto& gs = self.inputs[0]->grad_buffer();
                           for (std::size_t k = 0; k < indices.size(); ++k) gs[indices[k]] += self.grad[k];
                         });
}

// Column-wise max over rows → [1×m]. Ties route gradient to the lowest row.
inline Tensor max_pool_over_rows(const Tensor& x) {
  detail::require_matrix(x, "max_pool_over_rows");
  const std::size_t n = x.rows(), m = x.cols();
  if (n == 0) throw DimensionError("max_pool_over_rows: empty input");
  std::vector<double> out(m);
  std::vector<std::size_t> arg(m, 0);
  for (std::size_t j = 0; j < m; ++j) {
    out[j] = x.data()[j];
    for (std::size_t i = 1; i < n; ++i) {
      if (x.data()[i * m + j] > out[j]) {
        out[j] = x.data()[i * m + j];
        arg[j] = i;
      }
    }
  }
  return Tensor::from_op({1, m}, std::move(out), "max_pool_over_rows", {x},
                         [m, arg = std::move(arg)](detail::Node& self) {
                           auto& gx = self.inputs[0]->grad_buffer();
                           for (std::size_t j = 0; j < m; ++j) gx[arg[j] * m + j] += self.grad[j];
                         });
}

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  detail::require_matrix(x, "slice_rows");
  const std::size_t m = x.cols();
  if (begin + count > x.rows()) throw DimensionError("slice_rows: range exceeds " + shape_string(x.shape()));
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * m),
                          x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * m));
  return Tensor::from_op({count, m}, std::move(out), "slice_rows", {x}, [begin, m](detail::Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t k = 0; k < self.grad.size(); ++k) gx[begin * m + k] += self.grad[k];
  });
}

inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  detail::require_matrix(x, "slice_cols");
  const std::size_t n = x.rows(), m = x.cols();
  if (begin + count > m) throw DimensionError("slice_cols: range exceeds " + shape_string(x.shape()));
  std::vector<double> out(n * count);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.data()[i * m + begin + j];
  return Tensor::from_op({n, count}, std::move(out), "slice_cols", {x}, [n, m, begin, count](detail::Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * m + begin + j] += self.grad[i * count + j];
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t m = parts.front().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != m) throw DimensionError("concat_rows: width mismatch " + shape_string(p.shape()));
    n += p.rows();
  }
  std::vector<double> out;
  out.reserve(n * m);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Tensor::from_op({n, m}, std::move(out), "concat_rows", parts, [](detail::Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[offset + k];
      }
      offset += in->value.size();
    }
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t m = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != n) throw DimensionError("concat_cols: height mismatch " + shape_string(p.shape()));
    m += p.cols();
  }
  std::vector<double> out(n * m);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * m + offset + j] = p.data()[i * c + j];
    offset += c;
  }
  return Tensor::from_op({n, m}, std::move(out), "concat_cols", parts, [n, m](detail::Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t c = in->shape[1];
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * m + offset + j];
      }
      offset += c;
    }
  });
}

// ---- reductions and losses ------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::from_op({}, {s}, "sum", {x}, [](detail::Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (auto& g : gx) g += self.grad[0];
  });
}

inline Tensor add_n(const std::vector<Tensor>& scalars) {
  double s = 0.0;
  for (const auto& t : scalars) s += t.item();
  return Tensor::from_op({}, {s}, "add_n", scalars, [](detail::Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->grad_buffer()[0] += self.grad[0];
  });
}

// Euclidean norm; the subgradient at the origin is taken as zero.
inline Tensor l2_norm(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  const double norm = std::sqrt(s);
  return Tensor::from_op({}, {norm}, "l2_norm", {x}, [norm](detail::Node& self) {
    if (norm == 0.0) return;
    auto& X = *self.inputs[0];
    auto& gx = X.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[0] * X.value[i] / norm;
  });
}

// Sum over rows of −log softmax(logits)[row, target[row]].
inline Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const std::size_t> targets) {
  detail::require_matrix(logits, "cross_entropy_from_logits");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy_from_logits: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  }
  std::vector<double> probs(n * v);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= v) throw VocabularyError("cross_entropy_from_logits: target outside vocabulary");
    const double* row = logits.data().data() + i * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - log_z);
    loss += log_z - row[targets[i]];
  }
  return Tensor::from_op({}, {loss}, "cross_entropy_from_logits", {logits},
                         [n, v, probs = std::move(probs),
                          t = std::vector<std::size_t>(targets.begin(), targets.end())](detail::Node& self) {
                           auto& gl = self.inputs[0]->grad_buffer();
                           const double g = self.grad[0];
                           for (std::size_t i = 0; i < n; ++i) {
                             for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += g * probs[i * v + j];
                             gl[i * v + t[i]] -= g;
                           }
                         });
}

}  // namespace reasoner
