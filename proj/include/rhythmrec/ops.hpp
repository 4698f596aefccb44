#pragma once

// Differentiable operations over Tensor. Each op computes its forward
// value eagerly; when a Tape is active and an input requires gradients,
// the op records an adjoint closure on the tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <memory>
#include <vector>

#include "rhythmrec/rng.hpp"
#include "rhythmrec/tensor.hpp"

namespace rhythmrec {

namespace detail {

// Test-only hook: deliberately corrupts the GELU adjoint so gradient
// self-checks can prove they detect a wrong derivative.
inline bool& corrupt_gelu_adjoint() {
  static bool flag = false;
  return flag;
}

inline std::shared_ptr<TensorNode> make_node(Shape shape) {
  auto n = std::make_shared<TensorNode>();
  n->values.assign(shape_numel(shape), 0.0);
  n->shape = std::move(shape);
  return n;
}

inline bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

inline Tensor finish(std::shared_ptr<TensorNode> out, bool tracked,
                     std::function<void()> backprop) {
  if (tracked) {
    out->requires_grad = true;
    out->backprop = std::move(backprop);
    Tape::active()->record(out);
  }
  return Tensor::wrap(out);
}

// C(m x n) += A(m x k) * B(k x n)
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n,
                    const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C(m x n) += A(m x k) * B(n x k)^T
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n,
                    const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C(m x n) += A(k x m)^T * B(k x n)
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n,
                    const double* a, const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

// C(m x n) += A(k x m)^T * B(n x k)^T
inline void gemm_tt(std::size_t m, std::size_t k, std::size_t n,
                    const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * bj[p];
      ci[j] += s;
    }
  }
}

inline void require_matrix(const Tensor& t, const char* role) {
  if (t.shape().size() != 2)
    throw Error(std::string(role) + " must be a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
}

// Stable softmax of one row restricted to allowed entries; disallowed
// entries are written as 0. Returns false when no entry is allowed.
inline bool softmax_row(const double* x, const std::uint8_t* allowed,
                        std::size_t n, double* y) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (!allowed || allowed[j]) mx = std::max(mx, x[j]);
  if (mx == -std::numeric_limits<double>::infinity()) return false;
  double denom = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!allowed || allowed[j]) {
      y[j] = std::exp(x[j] - mx);
      denom += y[j];
    } else {
      y[j] = 0.0;
    }
  }
  const double inv = 1.0 / denom;
  for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
  return true;
}

}  // namespace detail

// out = op(a) * op(b) with optional transposes.
inline Tensor matmul(const Tensor& a, const Tensor& b,
                     bool trans_a = false, bool trans_b = false) {
  detail::require_matrix(a, "matmul lhs");
  detail::require_matrix(b, "matmul rhs");
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != kb)
    throw Error("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                (trans_a ? "^T" : "") + " * " + shape_str(b.shape()) +
                (trans_b ? "^T" : ""));

  auto out = detail::make_node({m, n});
  if (!trans_a && !trans_b)
    detail::gemm_nn(m, k, n, a.data(), b.data(), out->values.data());
  else if (!trans_a && trans_b)
    detail::gemm_nt(m, k, n, a.data(), b.data(), out->values.data());
  else if (trans_a && !trans_b)
    detail::gemm_tn(m, k, n, a.data(), b.data(), out->values.data());
  else
    detail::gemm_tt(m, k, n, a.data(), b.data(), out->values.data());

  const bool tracked = detail::tracking({&a, &b});
  auto an = a.node();
  auto bn = b.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [an, bn, on, m, k, n, trans_a, trans_b] {
    const double* dc = on->grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      double* da = an->grad.data();
      if (!trans_a && !trans_b)
        detail::gemm_nt(m, n, k, dc, bn->values.data(), da);
      else if (!trans_a && trans_b)
        detail::gemm_nn(m, n, k, dc, bn->values.data(), da);
      else if (trans_a && !trans_b)
        detail::gemm_nt(k, n, m, bn->values.data(), dc, da);
      else
        detail::gemm_tt(k, n, m, bn->values.data(), dc, da);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      double* db = bn->grad.data();
      if (!trans_a && !trans_b)
        detail::gemm_tn(k, m, n, an->values.data(), dc, db);
      else if (!trans_a && trans_b)
        detail::gemm_tn(n, m, k, dc, an->values.data(), db);
      else if (trans_a && !trans_b)
        detail::gemm_nn(k, m, n, an->values.data(), dc, db);
      else
        detail::gemm_tt(n, m, k, dc, an->values.data(), db);
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  auto out = detail::make_node(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = a.data()[i] + b.data()[i];
  const bool tracked = detail::tracking({&a, &b});
  auto an = a.node();
  auto bn = b.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [an, bn, on, n] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  auto out = detail::make_node(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = a.data()[i] - b.data()[i];
  const bool tracked = detail::tracking({&a, &b});
  auto an = a.node();
  auto bn = b.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [an, bn, on, n] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] -= on->grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  auto out = detail::make_node(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = a.data()[i] * b.data()[i];
  const bool tracked = detail::tracking({&a, &b});
  auto an = a.node();
  auto bn = b.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [an, bn, on, n] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->values[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  auto out = detail::make_node(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = s * a.data()[i];
  const bool tracked = detail::tracking({&a});
  auto an = a.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [an, on, n, s] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) an->grad[i] += s * on->grad[i];
  });
}

// Broadcast-add a length-n vector to every row of x (m x n).
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  detail::require_matrix(x, "add_rowvec input");
  const std::size_t m = x.rows(), n = x.cols();
  if (v.size() != n)
    throw Error("add_rowvec: vector size " + std::to_string(v.size()) +
                " does not match row width " + std::to_string(n));
  auto out = detail::make_node(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out->values[i * n + j] = x.data()[i * n + j] + v.data()[j];
  const bool tracked = detail::tracking({&x, &v});
  auto xn = x.node();
  auto vn = v.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [xn, vn, on, m, n] {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < m * n; ++i) xn->grad[i] += on->grad[i];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) vn->grad[j] += on->grad[i * n + j];
    }
  });
}

// Row-wise concatenation: (m x p) ++ (m x q) -> (m x (p+q)).
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "concat_cols lhs");
  detail::require_matrix(b, "concat_cols rhs");
  if (a.rows() != b.rows())
    throw Error("concat_cols: row counts differ, " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  auto out = detail::make_node({m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data() + i * p, p, out->values.data() + i * (p + q));
    std::copy_n(b.data() + i * q, q, out->values.data() + i * (p + q) + p);
  }
  const bool tracked = detail::tracking({&a, &b});
  auto an = a.node();
  auto bn = b.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [an, bn, on, m, p, q] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j)
          an->grad[i * p + j] += on->grad[i * (p + q) + j];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < q; ++j)
          bn->grad[i * q + j] += on->grad[i * (p + q) + p + j];
    }
  });
}

inline Tensor sum(const Tensor& a) {
  auto out = detail::make_node({1});
  double s = 0.0;
  for (double v : a.values()) s += v;
  out->values[0] = s;
  const bool tracked = detail::tracking({&a});
  auto an = a.node();
  TensorNode* on = out.get();
  const std::size_t n = a.size();
  return detail::finish(out, tracked, [an, on, n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const double g = on->grad[0];
    for (std::size_t i = 0; i < n; ++i) an->grad[i] += g;
  });
}

inline Tensor tanh_op(const Tensor& a) {
  auto out = detail::make_node(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = std::tanh(a.data()[i]);
  const bool tracked = detail::tracking({&a});
  auto an = a.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [an, on, n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double y = on->values[i];
      an->grad[i] += on->grad[i] * (1.0 - y * y);
    }
  });
}

inline Tensor sigmoid_op(const Tensor& a) {
  auto out = detail::make_node(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.data()[i];
    out->values[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                              : std::exp(x) / (1.0 + std::exp(x));
  }
  const bool tracked = detail::tracking({&a});
  auto an = a.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [an, on, n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double y = on->values[i];
      an->grad[i] += on->grad[i] * y * (1.0 - y);
    }
  });
}

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline Tensor gelu_op(const Tensor& a) {
  constexpr double kC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  auto out = detail::make_node(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.data()[i];
    out->values[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  const bool tracked = detail::tracking({&a});
  auto an = a.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [an, on, n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const double bug = detail::corrupt_gelu_adjoint() ? 1.001 : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = an->values[i];
      const double t = std::tanh(kC * (x + kA * x * x * x));
      const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      an->grad[i] += bug * on->grad[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
    }
  });
}

// Row-stabilized softmax; `mask` (same shape, nonzero = allowed) restricts
// each row to its allowed entries and zeroes the rest.
inline Tensor softmax_rows(const Tensor& x, const std::vector<std::uint8_t>* mask = nullptr) {
  detail::require_matrix(x, "softmax_rows input");
  const std::size_t m = x.rows(), n = x.cols();
  if (mask && mask->size() != m * n)
    throw Error("softmax_rows: mask size does not match input");
  auto out = detail::make_node(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const std::uint8_t* allow = mask ? mask->data() + i * n : nullptr;
    if (!detail::softmax_row(x.data() + i * n, allow, n, out->values.data() + i * n))
      throw Error("softmax_rows: row " + std::to_string(i) + " is fully masked");
  }
  const bool tracked = detail::tracking({&x});
  auto xn = x.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [xn, on, m, n] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = on->values.data() + i * n;
      const double* dy = on->grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
      double* dx = xn->grad.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  });
}

// Per-row standardization over the last dimension (eps = 1e-12), then an
// elementwise affine with learnable gain and bias of width d.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  detail::require_matrix(x, "layer_norm input");
  const std::size_t m = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d)
    throw Error("layer_norm: gain/bias width must equal " + std::to_string(d));
  constexpr double kEps = 1e-12;
  auto out = detail::make_node(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(m * d);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xi[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + kEps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xi[j] - mean) * is;
      (*xhat)[i * d + j] = h;
      out->values[i * d + j] = gain.data()[j] * h + bias.data()[j];
    }
  }
  const bool tracked = detail::tracking({&x, &gain, &bias});
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [xn, gn, bn, on, xhat, inv_std, m, d] {
    for (std::size_t i = 0; i < m; ++i) {
      const double* dy = on->grad.data() + i * d;
      const double* h = xhat->data() + i * d;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) gn->grad[j] += dy[j] * h[j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) bn->grad[j] += dy[j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        double sum_dh = 0.0, sum_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = dy[j] * gn->values[j];
          sum_dh += dh;
          sum_dh_h += dh * h[j];
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        double* dx = xn->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = dy[j] * gn->values[j];
          dx[j] += (*inv_std)[i] * (dh - inv_d * sum_dh - h[j] * inv_d * sum_dh_h);
        }
      }
    }
  });
}

// Inverted dropout: zero with probability p and scale survivors by
// 1/(1-p) at training time; identity (and RNG-free) otherwise.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw Error("dropout: p must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const std::size_t n = x.size();
  auto keep = std::make_shared<std::vector<double>>(n);
  const double inv_keep = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < n; ++i)
    (*keep)[i] = rng.uniform() >= p ? inv_keep : 0.0;
  auto out = detail::make_node(x.shape());
  for (std::size_t i = 0; i < n; ++i) out->values[i] = x.data()[i] * (*keep)[i];
  const bool tracked = detail::tracking({&x});
  auto xn = x.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [xn, on, keep, n] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i] * (*keep)[i];
  });
}

// Gather rows of `table` (E x d) at `indices`; adjoints scatter-add back.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& indices) {
  detail::require_matrix(table, "embedding table");
  const std::size_t e = table.rows(), d = table.cols(), n = indices.size();
  for (std::size_t i = 0; i < n; ++i)
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= e)
      throw Error("embedding_lookup: index " + std::to_string(indices[i]) +
                  " out of range [0, " + std::to_string(e) + ")");
  auto out = detail::make_node({n, d});
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(table.data() + static_cast<std::size_t>(indices[i]) * d, d,
                out->values.data() + i * d);
  const bool tracked = detail::tracking({&table});
  auto tn = table.node();
  TensorNode* on = out.get();
  auto idx = std::make_shared<std::vector<std::int64_t>>(indices);
  return detail::finish(out, tracked, [tn, on, idx, d] {
    if (!tn->requires_grad) return;
    tn->ensure_grad();
    for (std::size_t i = 0; i < idx->size(); ++i) {
      double* row = tn->grad.data() + static_cast<std::size_t>((*idx)[i]) * d;
      const double* g = on->grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += g[j];
    }
  });
}

// Overwrites one column with a constant; that column's adjoint is dropped.
inline Tensor fill_column(const Tensor& x, std::size_t col, double value) {
  detail::require_matrix(x, "fill_column input");
  const std::size_t m = x.rows(), n = x.cols();
  if (col >= n) throw Error("fill_column: column out of range");
  auto out = detail::make_node(x.shape());
  out->values = x.values();
  for (std::size_t i = 0; i < m; ++i) out->values[i * n + col] = value;
  const bool tracked = detail::tracking({&x});
  auto xn = x.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [xn, on, m, n, col] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (j != col) xn->grad[i * n + j] += on->grad[i * n + j];
  });
}

// Mean over masked-in rows of -log softmax(logits)[target]. Gradients flow
// to the logits only.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& targets,
                            const std::vector<std::uint8_t>& mask) {
  detail::require_matrix(logits, "cross_entropy logits");
  const std::size_t r = logits.rows(), v = logits.cols();
  if (targets.size() != r || mask.size() != r)
    throw Error("cross_entropy: targets/mask length must equal logit rows");
  std::size_t count = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
      throw Error("cross_entropy: target " + std::to_string(targets[i]) +
                  " out of range [0, " + std::to_string(v) + ")");
  }
  if (count == 0) throw Error("cross_entropy: no masked-in positions");

  auto probs = std::make_shared<std::vector<double>>(r * v, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (!mask[i]) continue;
    const double* row = logits.data() + i * v;
    double* prow = probs->data() + i * v;
    detail::softmax_row(row, nullptr, v, prow);
    const double p = prow[static_cast<std::size_t>(targets[i])];
    total += -std::log(std::max(p, 1e-300));
  }
  auto out = detail::make_node({1});
  out->values[0] = total / static_cast<double>(count);

  const bool tracked = detail::tracking({&logits});
  auto ln = logits.node();
  TensorNode* on = out.get();
  auto tgt = std::make_shared<std::vector<std::int64_t>>(targets);
  auto msk = std::make_shared<std::vector<std::uint8_t>>(mask);
  return detail::finish(out, tracked, [ln, on, probs, tgt, msk, r, v, count] {
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    const double g = on->grad[0] / static_cast<double>(count);
    for (std::size_t i = 0; i < r; ++i) {
      if (!(*msk)[i]) continue;
      const double* prow = probs->data() + i * v;
      double* drow = ln->grad.data() + i * v;
      for (std::size_t j = 0; j < v; ++j) drow[j] += g * prow[j];
      drow[static_cast<std::size_t>((*tgt)[i])] -= g;
    }
  });
}

// Batched multi-head causal attention core. q/k/v are (batch*seq_len) x d
// with per-user blocks of seq_len rows. Scores use 1/sqrt(d/heads); queries
// may only attend to earlier-or-equal positions whose key_mask is nonzero.
// Rows with no allowed key (left padding) produce zeros. `attn_p` applies
// inverted dropout to the attention probabilities at training time.
inline Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                               std::size_t batch, std::size_t seq_len, std::size_t heads,
                               const std::vector<std::uint8_t>& key_mask,
                               double attn_p = 0.0, bool training = false,
                               Rng* rng = nullptr) {
  detail::require_same_shape(q, k, "causal_attention q/k");
  detail::require_same_shape(q, v, "causal_attention q/v");
  const std::size_t rows = q.rows(), d = q.cols();
  if (rows != batch * seq_len)
    throw Error("causal_attention: rows != batch * seq_len");
  if (d % heads != 0)
    throw Error("causal_attention: width not divisible by head count");
  if (key_mask.size() != rows)
    throw Error("causal_attention: key_mask length mismatch");
  if (attn_p > 0.0 && training && rng == nullptr)
    throw Error("causal_attention: attention dropout needs an rng");

  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool drop = training && attn_p > 0.0;
  const double inv_keep = drop ? 1.0 / (1.0 - attn_p) : 1.0;

  // Pre-dropout softmax probabilities and the dropout scale mask are both
  // needed by the backward pass (the dropout scale does not commute with
  // the softmax Jacobian).
  auto probs = std::make_shared<std::vector<double>>(batch * heads * seq_len * seq_len, 0.0);
  auto dmask = drop ? std::make_shared<std::vector<double>>(probs->size(), 0.0) : nullptr;
  auto out = detail::make_node(q.shape());

  std::vector<double> srow(seq_len);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * seq_len;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t hoff = h * dh;
      double* p_bh = probs->data() + (b * heads + h) * seq_len * seq_len;
      for (std::size_t i = 0; i < seq_len; ++i) {
        const double* qi = q.data() + (base + i) * d + hoff;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          if (!key_mask[base + j]) continue;
          const double* kj = k.data() + (base + j) * d + hoff;
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
          srow[j] = s * sc;
          mx = std::max(mx, srow[j]);
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;  // dead pad row
        double* prow = p_bh + i * seq_len;
        double denom = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          if (!key_mask[base + j]) continue;
          prow[j] = std::exp(srow[j] - mx);
          denom += prow[j];
        }
        const double inv = 1.0 / denom;
        for (std::size_t j = 0; j <= i; ++j) prow[j] *= inv;
        double* mrow = drop ? dmask->data() + (b * heads + h) * seq_len * seq_len + i * seq_len
                            : nullptr;
        if (drop)
          for (std::size_t j = 0; j <= i; ++j)
            if (prow[j] != 0.0) mrow[j] = rng->uniform() >= attn_p ? inv_keep : 0.0;
        double* oi = out->values.data() + (base + i) * d + hoff;
        for (std::size_t j = 0; j <= i; ++j) {
          const double aij = drop ? prow[j] * mrow[j] : prow[j];
          if (aij == 0.0) continue;
          const double* vj = v.data() + (base + j) * d + hoff;
          for (std::size_t t = 0; t < dh; ++t) oi[t] += aij * vj[t];
        }
      }
    }
  }

  const bool tracked = detail::tracking({&q, &k, &v});
  auto qn = q.node();
  auto kn = k.node();
  auto vn = v.node();
  TensorNode* on = out.get();
  return detail::finish(out, tracked, [qn, kn, vn, on, probs, dmask, batch, seq_len,
                                       heads, d, dh, sc] {
    qn->ensure_grad();
    kn->ensure_grad();
    vn->ensure_grad();
    std::vector<double> dp(seq_len);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = b * seq_len;
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t hoff = h * dh;
        const std::size_t bh = (b * heads + h) * seq_len * seq_len;
        const double* p_bh = probs->data() + bh;
        const double* m_bh = dmask ? dmask->data() + bh : nullptr;
        for (std::size_t i = 0; i < seq_len; ++i) {
          const double* prow = p_bh + i * seq_len;
          const double* mrow = m_bh ? m_bh + i * seq_len : nullptr;
          const double* doi = on->grad.data() + (base + i) * d + hoff;
          // dV from O = A*V, and dP = (dO . V_j) * dropout scale.
          for (std::size_t j = 0; j <= i; ++j) {
            dp[j] = 0.0;
            if (prow[j] == 0.0) continue;
            const double scale_j = mrow ? mrow[j] : 1.0;
            const double aij = prow[j] * scale_j;
            const double* vjv = vn->values.data() + (base + j) * d + hoff;
            double s = 0.0;
            for (std::size_t t = 0; t < dh; ++t) s += doi[t] * vjv[t];
            dp[j] = s * scale_j;
            if (aij != 0.0) {
              double* dvj = vn->grad.data() + (base + j) * d + hoff;
              for (std::size_t t = 0; t < dh; ++t) dvj[t] += aij * doi[t];
            }
          }
          // Softmax backward over the pre-dropout probabilities.
          double dot = 0.0;
          for (std::size_t j = 0; j <= i; ++j) dot += prow[j] * dp[j];
          const double* qi = qn->values.data() + (base + i) * d + hoff;
          double* dqi = qn->grad.data() + (base + i) * d + hoff;
          for (std::size_t j = 0; j <= i; ++j) {
            if (prow[j] == 0.0) continue;
            const double ds = prow[j] * (dp[j] - dot) * sc;
            const double* kj = kn->values.data() + (base + j) * d + hoff;
            double* dkj = kn->grad.data() + (base + j) * d + hoff;
            for (std::size_t t = 0; t < dh; ++t) {
              dqi[t] += ds * kj[t];
              dkj[t] += ds * qi[t];
            }
          }
        }
      }
    }
  });
}

// x * w + b, the standard dense layer.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

}  // namespace rhythmrec
