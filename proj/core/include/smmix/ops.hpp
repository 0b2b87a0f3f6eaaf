#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "smmix/blas.hpp"
#include "smmix/graph.hpp"
#include "smmix/tensor.hpp"

// Differentiable operations over Tensor<S>. Each op computes its forward
// value eagerly and, when the tape has gradients enabled and an input
// requires grad, records a backward closure. Gradients accumulate (+=) so a
// tensor used twice receives the sum of both contributions.
namespace smmix::ops {

inline constexpr double kLogFloor = 1e-12;  // clamp under logs and divisions

namespace detail {

template <class S>
bool wants_grad(const Tape<S>& tape, std::initializer_list<Tensor<S>> inputs) {
  if (!tape.grad_enabled) return false;
  for (const auto& t : inputs)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}

template <class S>
Tensor<S> make_output(std::vector<int> shape, bool needs_grad) {
  Tensor<S> out(std::move(shape));
  if (needs_grad) out.set_requires_grad(true);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic. Broadcasting is limited to
// scalar-with-any (add_scalar/scale) and trailing-axis vector-with-matrix
// (add_rowvec); everything else requires exact shape match.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(Tape<S>& tape, Tensor<S> a, Tensor<S> b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  bool ng = detail::wants_grad(tape, {a, b});
  auto out = detail::make_output<S>(a.shape(), ng);
  for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] + b.value()[i];
  if (ng) {
    tape.record("add", {a, b}, [a, b, out]() mutable {
      if (a.requires_grad())
        for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < b.size(); ++i) b.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> sub(Tape<S>& tape, Tensor<S> a, Tensor<S> b) {
  if (a.shape() != b.shape())
    throw DimensionError("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  bool ng = detail::wants_grad(tape, {a, b});
  auto out = detail::make_output<S>(a.shape(), ng);
  for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
  if (ng) {
    tape.record("sub", {a, b}, [a, b, out]() mutable {
      if (a.requires_grad())
        for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < b.size(); ++i) b.grad()[i] -= out.grad()[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(Tape<S>& tape, Tensor<S> a, Tensor<S> b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  bool ng = detail::wants_grad(tape, {a, b});
  auto out = detail::make_output<S>(a.shape(), ng);
  for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] * b.value()[i];
  if (ng) {
    tape.record("mul", {a, b}, [a, b, out]() mutable {
      if (a.requires_grad())
        for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[i] * b.value()[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < b.size(); ++i) b.grad()[i] += out.grad()[i] * a.value()[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(Tape<S>& tape, Tensor<S> a, S c) {
  bool ng = detail::wants_grad(tape, {a});
  auto out = detail::make_output<S>(a.shape(), ng);
  for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] * c;
  if (ng) {
    tape.record("scale", {a}, [a, out, c]() mutable {
      for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[i] * c;
    });
  }
  return out;
}

template <class S>
Tensor<S> add_scalar(Tape<S>& tape, Tensor<S> a, S c) {
  bool ng = detail::wants_grad(tape, {a});
  auto out = detail::make_output<S>(a.shape(), ng);
  for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] + c;
  if (ng) {
    tape.record("add_scalar", {a}, [a, out]() mutable {
      for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

// x[.. x n] + v[n], v broadcast along the trailing axis.
template <class S>
Tensor<S> add_rowvec(Tape<S>& tape, Tensor<S> x, Tensor<S> v) {
  int n = x.cols();
  if (v.ndim() != 1 || v.cols() != n)
    throw DimensionError("add_rowvec: vector " + shape_str(v.shape()) +
                         " does not match trailing axis of " + shape_str(x.shape()));
  bool ng = detail::wants_grad(tape, {x, v});
  auto out = detail::make_output<S>(x.shape(), ng);
  int rows = x.rows();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < n; ++c) out.at(r, c) = x.at(r, c) + v.at(c);
  if (ng) {
    tape.record("add_rowvec", {x, v}, [x, v, out, rows, n]() mutable {
      if (x.requires_grad())
        for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += out.grad()[i];
      if (v.requires_grad())
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < n; ++c) v.grad()[c] += out.grad()[static_cast<std::size_t>(r) * n + c];
    });
  }
  return out;
}

// x[(B*N) x d] + p[N x d] tiled B times along the rows (positional embedding).
template <class S>
Tensor<S> add_tiled_rows(Tape<S>& tape, Tensor<S> x, Tensor<S> p) {
  int d = x.cols();
  if (p.cols() != d || x.rows() % p.rows() != 0)
    throw DimensionError("add_tiled_rows: " + shape_str(p.shape()) + " does not tile " +
                         shape_str(x.shape()));
  int n = p.rows();
  int reps = x.rows() / n;
  bool ng = detail::wants_grad(tape, {x, p});
  auto out = detail::make_output<S>(x.shape(), ng);
  for (int r = 0; r < x.rows(); ++r) {
    const S* pr = p.data() + static_cast<std::size_t>(r % n) * d;
    for (int c = 0; c < d; ++c) out.at(r, c) = x.at(r, c) + pr[c];
  }
  if (ng) {
    tape.record("add_tiled_rows", {x, p}, [x, p, out, n, d, reps]() mutable {
      if (x.requires_grad())
        for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += out.grad()[i];
      if (p.requires_grad())
        for (int rep = 0; rep < reps; ++rep)
          for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) p.grad()[static_cast<std::size_t>(r) * d + c] +=
                out.grad()[(static_cast<std::size_t>(rep) * n + r) * d + c];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix product, strictly 2-D. op(a)[m x k] * op(b)[k x n].
// dL/da = dL/dout * b^T and dL/db = a^T * dL/dout (adjusted for the
// transpose flags). Inner products are delegated to BLAS gemm.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(Tape<S>& tape, Tensor<S> a, Tensor<S> b, bool trans_a = false,
                 bool trans_b = false) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw DimensionError("matmul: expects 2-D operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  int m = trans_a ? a.shape()[1] : a.shape()[0];
  int k = trans_a ? a.shape()[0] : a.shape()[1];
  int kb = trans_b ? b.shape()[1] : b.shape()[0];
  int n = trans_b ? b.shape()[0] : b.shape()[1];
  if (k != kb)
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         (trans_a ? "^T" : "") + " * " + shape_str(b.shape()) +
                         (trans_b ? "^T" : ""));
  bool ng = detail::wants_grad(tape, {a, b});
  auto out = detail::make_output<S>({m, n}, ng);
  smmix::detail::gemm(trans_a, trans_b, m, n, k, S(1), a.data(), b.data(), S(0),
                      out.value().data());
  if (ng) {
    tape.record("matmul", {a, b}, [a, b, out, m, n, k, trans_a, trans_b]() mutable {
      const S* g = out.grad().data();
      if (a.requires_grad()) {
        if (!trans_a) {
          // dA = G * op(B)^T
          if (!trans_b)
            smmix::detail::gemm(false, true, m, k, n, S(1), g, b.data(), S(1), a.grad().data());
          else
            smmix::detail::gemm(false, false, m, k, n, S(1), g, b.data(), S(1), a.grad().data());
        } else {
          // dA = op(B) * G^T
          if (!trans_b)
            smmix::detail::gemm(false, true, k, m, n, S(1), b.data(), g, S(1), a.grad().data());
          else
            smmix::detail::gemm(true, true, k, m, n, S(1), b.data(), g, S(1), a.grad().data());
        }
      }
      if (b.requires_grad()) {
        if (!trans_b) {
          // dB = op(A)^T * G
          if (!trans_a)
            smmix::detail::gemm(true, false, k, n, m, S(1), a.data(), g, S(1), b.grad().data());
          else
            smmix::detail::gemm(false, false, k, n, m, S(1), a.data(), g, S(1), b.grad().data());
        } else {
          // dB = G^T * op(A)
          if (!trans_a)
            smmix::detail::gemm(true, false, n, k, m, S(1), g, a.data(), S(1), b.grad().data());
          else
            smmix::detail::gemm(true, true, n, k, m, S(1), g, a.data(), S(1), b.grad().data());
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax along the last axis, max-subtracted for stability.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> softmax_rows(Tape<S>& tape, Tensor<S> x) {
  bool ng = detail::wants_grad(tape, {x});
  auto out = detail::make_output<S>(x.shape(), ng);
  int rows = x.rows(), n = x.cols();
  for (int r = 0; r < rows; ++r) {
    const S* xr = x.data() + static_cast<std::size_t>(r) * n;
    S* yr = out.value().data() + static_cast<std::size_t>(r) * n;
    S mx = *std::max_element(xr, xr + n);
    S sum = 0;
    for (int c = 0; c < n; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    for (int c = 0; c < n; ++c) yr[c] /= sum;
  }
  if (ng) {
    tape.record("softmax", {x}, [x, out, rows, n]() mutable {
      for (int r = 0; r < rows; ++r) {
        const S* y = out.value().data() + static_cast<std::size_t>(r) * n;
        const S* gy = out.grad().data() + static_cast<std::size_t>(r) * n;
        S* gx = x.grad().data() + static_cast<std::size_t>(r) * n;
        S dot = 0;
        for (int c = 0; c < n; ++c) dot += gy[c] * y[c];
        for (int c = 0; c < n; ++c) gx[c] += (gy[c] - dot) * y[c];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// LayerNorm over the last axis with affine gamma/beta.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> layer_norm_rows(Tape<S>& tape, Tensor<S> x, Tensor<S> gamma, Tensor<S> beta, S eps) {
  int d = x.cols();
  if (gamma.size() != static_cast<std::size_t>(d) || beta.size() != static_cast<std::size_t>(d))
    throw DimensionError("layer_norm: gamma/beta must have length " + std::to_string(d));
  if (!(eps > S(0))) throw ValidationError("layer_norm: eps must be > 0");
  bool ng = detail::wants_grad(tape, {x, gamma, beta});
  auto out = detail::make_output<S>(x.shape(), ng);
  int rows = x.rows();
  // Normalized values and inverse stddev are needed by backward; keep them.
  auto xhat = std::make_shared<std::vector<S>>(x.size());
  auto inv_std = std::make_shared<std::vector<S>>(rows);
  for (int r = 0; r < rows; ++r) {
    const S* xr = x.data() + static_cast<std::size_t>(r) * d;
    S mean = 0;
    for (int c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<S>(d);
    S var = 0;
    for (int c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<S>(d);
    S istd = S(1) / std::sqrt(var + eps);
    (*inv_std)[r] = istd;
    for (int c = 0; c < d; ++c) {
      S h = (xr[c] - mean) * istd;
      (*xhat)[static_cast<std::size_t>(r) * d + c] = h;
      out.at(r, c) = gamma.at(c) * h + beta.at(c);
    }
  }
  if (ng) {
    tape.record("layer_norm", {x, gamma, beta}, [x, gamma, beta, out, xhat, inv_std, rows,
                                                 d]() mutable {
      for (int r = 0; r < rows; ++r) {
        const S* gy = out.grad().data() + static_cast<std::size_t>(r) * d;
        const S* h = xhat->data() + static_cast<std::size_t>(r) * d;
        if (gamma.requires_grad())
          for (int c = 0; c < d; ++c) gamma.grad()[c] += gy[c] * h[c];
        if (beta.requires_grad())
          for (int c = 0; c < d; ++c) beta.grad()[c] += gy[c];
        if (x.requires_grad()) {
          // dxhat = gy * gamma; dx = istd/d * (d*dxhat - sum(dxhat) - h*sum(dxhat*h))
          S sum1 = 0, sum2 = 0;
          for (int c = 0; c < d; ++c) {
            S dh = gy[c] * gamma.at(c);
            sum1 += dh;
            sum2 += dh * h[c];
          }
          S istd = (*inv_std)[r];
          S* gx = x.grad().data() + static_cast<std::size_t>(r) * d;
          for (int c = 0; c < d; ++c) {
            S dh = gy[c] * gamma.at(c);
            gx[c] += istd * (dh - (sum1 + h[c] * sum2) / static_cast<S>(d));
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// GELU, tanh approximation:
//   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
// The same closed form is differentiated analytically below.
// ---------------------------------------------------------------------------

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

template <class S>
Tensor<S> gelu(Tape<S>& tape, Tensor<S> x) {
  bool ng = detail::wants_grad(tape, {x});
  auto out = detail::make_output<S>(x.shape(), ng);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = static_cast<double>(x.value()[i]);
    double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    out.value()[i] = static_cast<S>(0.5 * v * (1.0 + t));
  }
  if (ng) {
    tape.record("gelu", {x}, [x, out]() mutable {
      for (std::size_t i = 0; i < x.size(); ++i) {
        double v = static_cast<double>(x.value()[i]);
        double u = kGeluC * (v + kGeluA * v * v * v);
        double t = std::tanh(u);
        double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        double grad = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        x.grad()[i] += out.grad()[i] * static_cast<S>(grad);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and row gathers.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum_all(Tape<S>& tape, Tensor<S> x) {
  bool ng = detail::wants_grad(tape, {x});
  auto out = detail::make_output<S>({1}, ng);
  S s = 0;
  for (S v : x.value()) s += v;
  out.value()[0] = s;
  if (ng) {
    tape.record("sum_all", {x}, [x, out]() mutable {
      S g = out.grad()[0];
      for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += g;
    });
  }
  return out;
}

template <class S>
Tensor<S> rows_slice(Tape<S>& tape, Tensor<S> x, int r0, int count) {
  int d = x.cols();
  if (r0 < 0 || count <= 0 || r0 + count > x.rows())
    throw DimensionError("rows_slice: range [" + std::to_string(r0) + ", " +
                         std::to_string(r0 + count) + ") out of " + std::to_string(x.rows()));
  bool ng = detail::wants_grad(tape, {x});
  auto out = detail::make_output<S>({count, d}, ng);
  std::copy_n(x.data() + static_cast<std::size_t>(r0) * d, static_cast<std::size_t>(count) * d,
              out.value().data());
  if (ng) {
    tape.record("rows_slice", {x}, [x, out, r0, count, d]() mutable {
      S* gx = x.grad().data() + static_cast<std::size_t>(r0) * d;
      for (std::size_t i = 0; i < static_cast<std::size_t>(count) * d; ++i) gx[i] += out.grad()[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> cols_slice(Tape<S>& tape, Tensor<S> x, int c0, int count) {
  if (x.ndim() != 2) throw DimensionError("cols_slice: expects 2-D input");
  int rows = x.rows(), d = x.cols();
  if (c0 < 0 || count <= 0 || c0 + count > d)
    throw DimensionError("cols_slice: range out of " + std::to_string(d) + " columns");
  bool ng = detail::wants_grad(tape, {x});
  auto out = detail::make_output<S>({rows, count}, ng);
  for (int r = 0; r < rows; ++r)
    std::copy_n(x.data() + static_cast<std::size_t>(r) * d + c0, count,
                out.value().data() + static_cast<std::size_t>(r) * count);
  if (ng) {
    tape.record("cols_slice", {x}, [x, out, rows, d, c0, count]() mutable {
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < count; ++c)
          x.grad()[static_cast<std::size_t>(r) * d + c0 + c] +=
              out.grad()[static_cast<std::size_t>(r) * count + c];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_rows(Tape<S>& tape, const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  int d = parts[0].cols();
  int total = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.cols() != d) throw DimensionError("concat_rows: column mismatch");
    total += p.rows();
    ng = ng || (tape.grad_enabled && p.requires_grad());
  }
  auto out = detail::make_output<S>({total, d}, ng);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.data(), p.size(), out.value().data() + off);
    off += p.size();
  }
  if (ng) {
    tape.record("concat_rows", parts, [parts = std::vector<Tensor<S>>(parts), out]() mutable {
      std::size_t off = 0;
      for (auto& p : parts) {
        if (p.requires_grad())
          for (std::size_t i = 0; i < p.size(); ++i) p.grad()[i] += out.grad()[off + i];
        off += p.size();
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_cols(Tape<S>& tape, const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  int rows = parts[0].rows();
  int total = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch");
    total += p.cols();
    ng = ng || (tape.grad_enabled && p.requires_grad());
  }
  auto out = detail::make_output<S>({rows, total}, ng);
  int off = 0;
  for (const auto& p : parts) {
    int pc = p.cols();
    for (int r = 0; r < rows; ++r)
      std::copy_n(p.data() + static_cast<std::size_t>(r) * pc, pc,
                  out.value().data() + static_cast<std::size_t>(r) * total + off);
    off += pc;
  }
  if (ng) {
    tape.record("concat_cols", parts,
                [parts = std::vector<Tensor<S>>(parts), out, rows, total]() mutable {
      int off = 0;
      for (auto& p : parts) {
        int pc = p.cols();
        if (p.requires_grad())
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < pc; ++c)
              p.grad()[static_cast<std::size_t>(r) * pc + c] +=
                  out.grad()[static_cast<std::size_t>(r) * total + off + c];
        off += pc;
      }
    });
  }
  return out;
}

// Output row g = mean of x's rows listed in groups[g]. Used for the pooled
// classifier input, class-token extraction, and region token aggregation.
template <class S>
Tensor<S> group_mean_rows(Tape<S>& tape, Tensor<S> x, const std::vector<std::vector<int>>& groups) {
  int d = x.cols();
  for (const auto& g : groups) {
    if (g.empty()) throw ValidationError("group_mean_rows: empty group");
    for (int r : g)
      if (r < 0 || r >= x.rows()) throw DimensionError("group_mean_rows: row index out of range");
  }
  bool ng = detail::wants_grad(tape, {x});
  auto out = detail::make_output<S>({static_cast<int>(groups.size()), d}, ng);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    S inv = S(1) / static_cast<S>(groups[g].size());
    for (int r : groups[g]) {
      const S* xr = x.data() + static_cast<std::size_t>(r) * d;
      S* yr = out.value().data() + g * d;
      for (int c = 0; c < d; ++c) yr[c] += xr[c] * inv;
    }
  }
  if (ng) {
    tape.record("group_mean_rows", {x}, [x, out, groups, d]() mutable {
      for (std::size_t g = 0; g < groups.size(); ++g) {
        S inv = S(1) / static_cast<S>(groups[g].size());
        const S* gy = out.grad().data() + g * d;
        for (int r : groups[g]) {
          S* gx = x.grad().data() + static_cast<std::size_t>(r) * d;
          for (int c = 0; c < d; ++c) gx[c] += gy[c] * inv;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses. Both are batch means over the leading axis.
// ---------------------------------------------------------------------------

template <class S>
void check_distribution_rows(const Tensor<S>& t, const char* what) {
  int rows = t.rows(), n = t.cols();
  for (int r = 0; r < rows; ++r) {
    double sum = 0;
    for (int c = 0; c < n; ++c) {
      double v = static_cast<double>(t.at(r, c));
      if (v < 0)
        throw ValidationError(std::string(what) + ": negative entry in row " + std::to_string(r));
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw ValidationError(std::string(what) + ": row " + std::to_string(r) +
                            " sums to " + std::to_string(sum) + ", not 1");
  }
}

// Mean over rows of -sum_c target * log softmax(logits); the log is floored
// at kLogFloor so one-hot targets never produce -inf.
template <class S>
Tensor<S> cross_entropy_soft(Tape<S>& tape, Tensor<S> logits, Tensor<S> target) {
  if (logits.shape() != target.shape())
    throw DimensionError("cross_entropy_soft: shape mismatch " + shape_str(logits.shape()) +
                         " vs " + shape_str(target.shape()));
  check_distribution_rows(target, "cross_entropy_soft target");
  int rows = logits.rows(), n = logits.cols();
  bool ng = detail::wants_grad(tape, {logits, target});
  auto out = detail::make_output<S>({1}, ng);
  const S log_floor = static_cast<S>(std::log(kLogFloor));
  // probs retained for backward
  auto probs = std::make_shared<std::vector<S>>(logits.size());
  double total = 0;
  for (int r = 0; r < rows; ++r) {
    const S* xr = logits.data() + static_cast<std::size_t>(r) * n;
    S mx = *std::max_element(xr, xr + n);
    double lse = 0;
    for (int c = 0; c < n; ++c) lse += std::exp(static_cast<double>(xr[c] - mx));
    lse = static_cast<double>(mx) + std::log(lse);
    for (int c = 0; c < n; ++c) {
      S logp = std::max(static_cast<S>(static_cast<double>(xr[c]) - lse), log_floor);
      (*probs)[static_cast<std::size_t>(r) * n + c] =
          static_cast<S>(std::exp(static_cast<double>(xr[c]) - lse));
      total -= static_cast<double>(target.at(r, c)) * static_cast<double>(logp);
    }
  }
  out.value()[0] = static_cast<S>(total / rows);
  if (ng && logits.requires_grad()) {
    tape.record("cross_entropy_soft", {logits}, [logits, target, out, probs, rows, n]() mutable {
      S g = out.grad()[0] / static_cast<S>(rows);
      const S floor_p = static_cast<S>(kLogFloor);
      for (int r = 0; r < rows; ++r) {
        const S* p = probs->data() + static_cast<std::size_t>(r) * n;
        S* gx = logits.grad().data() + static_cast<std::size_t>(r) * n;
        // Terms whose log hit the clamp contribute no direct gradient but
        // still appear through the log-sum-exp of unclamped terms.
        S tmass = 0;
        for (int c = 0; c < n; ++c)
          if (p[c] > floor_p) tmass += target.at(r, c);
        for (int c = 0; c < n; ++c) {
          S direct = (p[c] > floor_p) ? target.at(r, c) : S(0);
          gx[c] += g * (tmass * p[c] - direct);
        }
      }
    });
  }
  return out;
}

// Mean over rows of D_KL(p || q) = sum_c p log(p / q). Zero-probability p
// entries contribute 0; q is clamped at kLogFloor under the log.
template <class S>
Tensor<S> kl_divergence(Tape<S>& tape, Tensor<S> p, Tensor<S> q) {
  if (p.shape() != q.shape())
    throw DimensionError("kl_divergence: shape mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(q.shape()));
  check_distribution_rows(p, "kl_divergence p");
  check_distribution_rows(q, "kl_divergence q");
  int rows = p.rows(), n = p.cols();
  bool ng = detail::wants_grad(tape, {p, q});
  auto out = detail::make_output<S>({1}, ng);
  double total = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < n; ++c) {
      double pv = static_cast<double>(p.at(r, c));
      if (pv <= 0) continue;
      double qv = std::max(static_cast<double>(q.at(r, c)), kLogFloor);
      total += pv * (std::log(pv) - std::log(qv));
    }
  }
  out.value()[0] = static_cast<S>(total / rows);
  if (ng) {
    tape.record("kl_divergence", {p, q}, [p, q, out, rows, n]() mutable {
      S g = out.grad()[0] / static_cast<S>(rows);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < n; ++c) {
          double pv = static_cast<double>(p.at(r, c));
          double qv = static_cast<double>(q.at(r, c));
          double qc = std::max(qv, kLogFloor);
          if (p.requires_grad() && pv > 0)
            p.grad()[static_cast<std::size_t>(r) * n + c] +=
                g * static_cast<S>(std::log(pv) - std::log(qc) + 1.0);
          if (q.requires_grad() && pv > 0 && qv > kLogFloor)
            q.grad()[static_cast<std::size_t>(r) * n + c] -= g * static_cast<S>(pv / qc);
        }
      }
    });
  }
  return out;
}

// Value-only copy with no graph connection. Gradients never flow through.
template <class S>
Tensor<S> detach(const Tensor<S>& x) {
  return Tensor<S>::from(x.shape(), x.value(), false);
}

}  // namespace smmix::ops
