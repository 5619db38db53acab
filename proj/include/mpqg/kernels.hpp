#pragma once

// Differentiable kernels. Each records its forward result on the tape of its
// inputs together with a backward closure that adds into the input gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mpqg/errors.hpp"
#include "mpqg/tape.hpp"
#include "mpqg/tensor.hpp"

namespace mpqg {

// Norms below this are treated as zero by cosine-style kernels.
inline constexpr double kCosineNormFloor = 1e-12;

namespace testing_hooks {
// Multiplies the tanh backward pass when not 1. Exists only so gradient
// checking can be shown to catch a broken backward.
inline double& tanh_backward_scale() {
  static double scale = 1.0;
  return scale;
}
}  // namespace testing_hooks

namespace detail {

inline Tape& tape_of(const Var& v) {
  if (!v.valid()) throw ContractError("uninitialised Var");
  return *v.tape();
}

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(v.shape()));
}

inline void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

inline void require_scalar(const Var& s, const char* op) {
  if (s.size() != 1)
    throw DimensionError(std::string(op) + ": expected a scalar, got " + shape_string(s.shape()));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k)
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(A.shape()) + " x " +
                         shape_string(B.shape()));
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A.at(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * B.at(p, j);
    }
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b, m, k, n](const Tensor& g, Tape& t) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * B.at(p, j);
          ga[i * k + p] += s;
        }
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A.at(i, p);
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g.at(i, j);
        }
  });
}

// W[m×k] · x[k] -> [m]
inline Var matvec(const Var& w, const Var& x) {
  detail::require_rank(w, 2, "matvec");
  detail::require_rank(x, 1, "matvec");
  const Tensor& W = w.value();
  const Tensor& X = x.value();
  const std::size_t m = W.rows(), k = W.cols();
  if (X.size() != k)
    throw DimensionError("matvec: " + shape_string(W.shape()) + " times " + shape_string(X.shape()));
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += W.at(i, p) * X[p];
    out[i] = s;
  }
  return detail::tape_of(w).record(std::move(out), {w, x}, [w, x, m, k](const Tensor& g, Tape& t) {
    const Tensor& W = w.value();
    const Tensor& X = x.value();
    if (auto gw = t.grad_buffer(w); !gw.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) gw[i * k + p] += g[i] * X[p];
    if (auto gx = t.grad_buffer(x); !gx.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) gx[p] += g[i] * W.at(i, p);
  });
}

// x[m] · W[m×n] -> [n]
inline Var vecmat(const Var& x, const Var& w) {
  detail::require_rank(w, 2, "vecmat");
  detail::require_rank(x, 1, "vecmat");
  const Tensor& W = w.value();
  const Tensor& X = x.value();
  const std::size_t m = W.rows(), n = W.cols();
  if (X.size() != m)
    throw DimensionError("vecmat: " + shape_string(X.shape()) + " times " + shape_string(W.shape()));
  Tensor out({n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += X[i] * W.at(i, j);
  return detail::tape_of(w).record(std::move(out), {x, w}, [w, x, m, n](const Tensor& g, Tape& t) {
    const Tensor& W = w.value();
    const Tensor& X = x.value();
    if (auto gw = t.grad_buffer(w); !gw.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += X[i] * g[j];
    if (auto gx = t.grad_buffer(x); !gx.empty())
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += W.at(i, j) * g[j];
        gx[i] += s;
      }
  });
}

inline Var transpose(const Var& a) {
  detail::require_rank(a, 2, "transpose");
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
  return detail::tape_of(a).record(std::move(out), {a}, [a, m, n](const Tensor& g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g.at(j, i);
  });
}

inline Var reshape(const Var& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  return detail::tape_of(a).record(a.value().reshaped(std::move(shape)), {a}, [a](const Tensor& g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same(a, b, "add");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, Tape& t) {
    for (const Var& v : {a, b}) {
      auto gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same(a, b, "sub");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, Tape& t) {
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

// Sum of several same-shaped terms.
inline Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw ContractError("add_n: no terms");
  Tensor out = terms[0].value();
  for (std::size_t k = 1; k < terms.size(); ++k) {
    detail::require_same(terms[0], terms[k], "add_n");
    const Tensor& T = terms[k].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += T[i];
  }
  return detail::tape_of(terms[0]).record(std::move(out), terms, [terms](const Tensor& g, Tape& t) {
    for (const Var& v : terms) {
      auto gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i];
    }
  });
}

// M[n×a] + v[a] added to every row.
inline Var add_row(const Var& m, const Var& v) {
  detail::require_rank(m, 2, "add_row");
  detail::require_rank(v, 1, "add_row");
  const std::size_t n = m.value().rows(), a = m.value().cols();
  if (v.size() != a)
    throw DimensionError("add_row: " + shape_string(m.shape()) + " + " + shape_string(v.shape()));
  Tensor out = m.value();
  const Tensor& V = v.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < a; ++j) out.at(i, j) += V[j];
  return detail::tape_of(m).record(std::move(out), {m, v}, [m, v, n, a](const Tensor& g, Tape& t) {
    if (auto gm = t.grad_buffer(m); !gm.empty())
      for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += g[i];
    if (auto gv = t.grad_buffer(v); !gv.empty())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < a; ++j) gv[j] += g.at(i, j);
  });
}

// Hadamard product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same(a, b, "mul");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, Tape& t) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * B[i];
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * A[i];
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& x : out.values()) x *= c;
  return detail::tape_of(a).record(std::move(out), {a}, [a, c](const Tensor& g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * g[i];
  });
}

inline Var add_const(const Var& a, double c) {
  Tensor out = a.value();
  for (double& x : out.values()) x += c;
  return detail::tape_of(a).record(std::move(out), {a}, [a](const Tensor& g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

inline Var tanh(const Var& a) {
  Tensor out = a.value();
  for (double& x : out.values()) x = std::tanh(x);
  return detail::tape_of(a).record(out, {a}, [a, y = out](const Tensor& g, Tape& t) {
    const double k = testing_hooks::tanh_backward_scale();
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += k * g[i] * (1.0 - y[i] * y[i]);
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (double& x : out.values()) x = detail::sigmoid(x);
  return detail::tape_of(a).record(out, {a}, [a, y = out](const Tensor& g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

// Concatenation of vectors.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat: no parts");
  std::vector<double> values;
  for (const Var& p : parts) {
    detail::require_rank(p, 1, "concat");
    auto s = p.value().values();
    values.insert(values.end(), s.begin(), s.end());
  }
  return detail::tape_of(parts[0]).record(Tensor::vector(std::move(values)), parts,
                                          [parts](const Tensor& g, Tape& t) {
                                            std::size_t off = 0;
                                            for (const Var& p : parts) {
                                              auto gp = t.grad_buffer(p);
                                              for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                                              off += p.size();
                                            }
                                          });
}

// Column-wise concatenation of matrices with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const std::size_t n = parts[0].value().rows();
  std::size_t width = 0;
  for (const Var& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.value().rows() != n)
      throw DimensionError("concat_cols: row counts differ " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    width += p.value().cols();
  }
  Tensor out({n, width});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) out.at(i, off + j) = P.at(i, j);
    off += P.cols();
  }
  return detail::tape_of(parts[0]).record(std::move(out), parts, [parts, n, width](const Tensor& g, Tape& t) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t c = p.value().cols();
      if (auto gp = t.grad_buffer(p); !gp.empty())
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * width + off + j];
      off += c;
    }
  });
}

// Stacks equal-length vectors as the rows of a matrix.
inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw ContractError("stack_rows: no rows");
  const std::size_t w = rows[0].size();
  std::vector<double> values;
  values.reserve(rows.size() * w);
  for (const Var& r : rows) {
    detail::require_rank(r, 1, "stack_rows");
    if (r.size() != w) throw DimensionError("stack_rows: ragged rows");
    auto s = r.value().values();
    values.insert(values.end(), s.begin(), s.end());
  }
  return detail::tape_of(rows[0]).record(Tensor::matrix(rows.size(), w, std::move(values)), rows,
                                         [rows, w](const Tensor& g, Tape& t) {
                                           for (std::size_t r = 0; r < rows.size(); ++r) {
                                             auto gr = t.grad_buffer(rows[r]);
                                             for (std::size_t i = 0; i < gr.size(); ++i) gr[i] += g[r * w + i];
                                           }
                                         });
}

inline Var row(const Var& m, std::size_t r) {
  detail::require_rank(m, 2, "row");
  const Tensor& M = m.value();
  if (r >= M.rows()) throw DimensionError("row: index " + std::to_string(r) + " out of " + shape_string(M.shape()));
  auto s = M.row(r);
  const std::size_t w = M.cols();
  return detail::tape_of(m).record(Tensor::vector({s.begin(), s.end()}), {m}, [m, r, w](const Tensor& g, Tape& t) {
    auto gm = t.grad_buffer(m);
    for (std::size_t j = 0; j < w; ++j) gm[r * w + j] += g[j];
  });
}

inline Var slice(const Var& v, std::size_t start, std::size_t len) {
  detail::require_rank(v, 1, "slice");
  if (len == 0 || start + len > v.size())
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(len) + ") of " +
                         shape_string(v.shape()));
  auto s = v.value().values().subspan(start, len);
  return detail::tape_of(v).record(Tensor::vector({s.begin(), s.end()}), {v},
                                   [v, start, len](const Tensor& g, Tape& t) {
                                     auto gv = t.grad_buffer(v);
                                     for (std::size_t i = 0; i < len; ++i) gv[start + i] += g[i];
                                   });
}

// Maximum along `axis` of a matrix: axis 0 reduces over rows (one value per
// column), axis 1 over columns. Ties route the gradient to the first maximum.
inline Var max_over(const Var& m, std::size_t axis) {
  detail::require_rank(m, 2, "max_over");
  if (axis > 1) throw DimensionError("max_over: axis must be 0 or 1");
  const Tensor& M = m.value();
  const std::size_t rows = M.rows(), cols = M.cols();
  const std::size_t outer = axis == 0 ? cols : rows;
  const std::size_t inner = axis == 0 ? rows : cols;
  Tensor out({outer});
  std::vector<std::size_t> arg(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t best = 0;
    double bv = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < inner; ++i) {
      const double x = axis == 0 ? M.at(i, o) : M.at(o, i);
      if (x > bv) {
        bv = x;
        best = i;
      }
    }
    out[o] = bv;
    arg[o] = axis == 0 ? best * cols + o : o * cols + best;
  }
  return detail::tape_of(m).record(std::move(out), {m}, [m, arg](const Tensor& g, Tape& t) {
    auto gm = t.grad_buffer(m);
    for (std::size_t o = 0; o < arg.size(); ++o) gm[arg[o]] += g[o];
  });
}

inline Var sum_over(const Var& m, std::size_t axis) {
  detail::require_rank(m, 2, "sum_over");
  if (axis > 1) throw DimensionError("sum_over: axis must be 0 or 1");
  const Tensor& M = m.value();
  const std::size_t rows = M.rows(), cols = M.cols();
  Tensor out({axis == 0 ? cols : rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[axis == 0 ? j : i] += M.at(i, j);
  return detail::tape_of(m).record(std::move(out), {m}, [m, axis, rows, cols](const Tensor& g, Tape& t) {
    auto gm = t.grad_buffer(m);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) gm[i * cols + j] += g[axis == 0 ? j : i];
  });
}

inline Var sum(const Var& a) {
  return detail::tape_of(a).record(Tensor::scalar(a.value().sum()), {a}, [a](const Tensor& g, Tape& t) {
    auto ga = t.grad_buffer(a);
    for (double& x : ga) x += g[0];
  });
}

inline Var softmax(const Var& v) {
  detail::require_rank(v, 1, "softmax");
  const Tensor& V = v.value();
  const double mx = *std::max_element(V.values().begin(), V.values().end());
  Tensor out = V;
  double z = 0.0;
  for (double& x : out.values()) {
    x = std::exp(x - mx);
    z += x;
  }
  for (double& x : out.values()) x /= z;
  return detail::tape_of(v).record(out, {v}, [v, y = out](const Tensor& g, Tape& t) {
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
    auto gv = t.grad_buffer(v);
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += y[i] * (g[i] - dot);
  });
}

// log(max(x, floor)); the clamped region has zero gradient.
inline Var log_clamped(const Var& a, double floor = 1e-12) {
  Tensor out = a.value();
  for (double& x : out.values()) x = std::log(std::max(x, floor));
  return detail::tape_of(a).record(std::move(out), {a}, [a, floor](const Tensor& g, Tape& t) {
    const Tensor& A = a.value();
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (A[i] > floor) ga[i] += g[i] / A[i];
  });
}

inline Var pick(const Var& v, std::size_t i) {
  if (i >= v.size()) throw DimensionError("pick: index " + std::to_string(i) + " out of " + shape_string(v.shape()));
  return detail::tape_of(v).record(Tensor::scalar(v.value()[i]), {v}, [v, i](const Tensor& g, Tape& t) {
    t.grad_buffer(v)[i] += g[0];
  });
}

inline Var dot(const Var& a, const Var& b) {
  detail::require_same(a, b, "dot");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i] * B[i];
  return detail::tape_of(a).record(Tensor::scalar(s), {a, b}, [a, b](const Tensor& g, Tape& t) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * B[i];
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * A[i];
  });
}

namespace detail {

// cos(a, b) and its partial derivatives. Returns 0 with zero derivatives
// when either norm is below kCosineNormFloor.
struct CosineParts {
  double value = 0.0;
  double na = 0.0, nb = 0.0;
  bool degenerate = true;
};

inline CosineParts cosine_parts(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  CosineParts c;
  c.na = std::sqrt(aa);
  c.nb = std::sqrt(bb);
  if (c.na < kCosineNormFloor || c.nb < kCosineNormFloor) return c;
  c.degenerate = false;
  c.value = ab / (c.na * c.nb);
  return c;
}

}  // namespace detail

inline double cosine_value(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine: dimension mismatch");
  return detail::cosine_parts(a, b).value;
}

inline Var cosine(const Var& a, const Var& b) {
  detail::require_rank(a, 1, "cosine");
  detail::require_same(a, b, "cosine");
  const auto parts = detail::cosine_parts(a.value().values(), b.value().values());
  return detail::tape_of(a).record(Tensor::scalar(parts.value), {a, b}, [a, b, parts](const Tensor& g, Tape& t) {
    if (parts.degenerate) return;
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const double inv = 1.0 / (parts.na * parts.nb);
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i)
        ga[i] += g[0] * (B[i] * inv - parts.value * A[i] / (parts.na * parts.na));
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i)
        gb[i] += g[0] * (A[i] * inv - parts.value * B[i] / (parts.nb * parts.nb));
  });
}

// Multi-perspective cosine: m_k = cos(W_k ∘ v1, W_k ∘ v2) for each row k of W[l×d].
inline Var multi_perspective_cosine(const Var& v1, const Var& v2, const Var& w) {
  detail::require_rank(v1, 1, "multi_perspective_cosine");
  detail::require_rank(w, 2, "multi_perspective_cosine");
  detail::require_same(v1, v2, "multi_perspective_cosine");
  const Tensor& W = w.value();
  const std::size_t l = W.rows(), d = W.cols();
  if (v1.size() != d)
    throw DimensionError("multi_perspective_cosine: vectors " + shape_string(v1.shape()) + " against weights " +
                         shape_string(W.shape()));
  const Tensor& A = v1.value();
  const Tensor& B = v2.value();
  Tensor out({l});
  std::vector<detail::CosineParts> parts(l);
  std::vector<double> wa(d), wb(d);
  for (std::size_t k = 0; k < l; ++k) {
    for (std::size_t i = 0; i < d; ++i) {
      wa[i] = W.at(k, i) * A[i];
      wb[i] = W.at(k, i) * B[i];
    }
    parts[k] = detail::cosine_parts(wa, wb);
    out[k] = parts[k].value;
  }
  return detail::tape_of(v1).record(std::move(out), {v1, v2, w}, [v1, v2, w, parts, l, d](const Tensor& g, Tape& t) {
    const Tensor& W = w.value();
    const Tensor& A = v1.value();
    const Tensor& B = v2.value();
    auto g1 = t.grad_buffer(v1);
    auto g2 = t.grad_buffer(v2);
    auto gw = t.grad_buffer(w);
    for (std::size_t k = 0; k < l; ++k) {
      const auto& p = parts[k];
      if (p.degenerate || g[k] == 0.0) continue;
      const double inv = 1.0 / (p.na * p.nb);
      const double ia2 = p.value / (p.na * p.na);
      const double ib2 = p.value / (p.nb * p.nb);
      for (std::size_t i = 0; i < d; ++i) {
        const double wk = W.at(k, i);
        const double a = wk * A[i], b = wk * B[i];
        const double da = g[k] * (b * inv - ia2 * a);  // d m_k / d(W_k∘v1)_i
        const double db = g[k] * (a * inv - ib2 * b);
        if (!g1.empty()) g1[i] += da * wk;
        if (!g2.empty()) g2[i] += db * wk;
        if (!gw.empty()) gw[k * d + i] += da * A[i] + db * B[i];
      }
    }
  });
}

// a[n] ⊗ b[m] -> n×m
inline Var outer(const Var& a, const Var& b) {
  detail::require_rank(a, 1, "outer");
  detail::require_rank(b, 1, "outer");
  const std::size_t n = a.size(), m = b.size();
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = A[i] * B[j];
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b, n, m](const Tensor& g, Tape& t) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ga[i] += g.at(i, j) * B[j];
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g.at(i, j) * A[i];
  });
}

// v / s for a scalar s.
inline Var divide_by(const Var& v, const Var& s) {
  detail::require_scalar(s, "divide_by");
  const double sv = s.value()[0];
  Tensor out = v.value();
  for (double& x : out.values()) x /= sv;
  return detail::tape_of(v).record(std::move(out), {v, s}, [v, s, sv](const Tensor& g, Tape& t) {
    const Tensor& V = v.value();
    if (auto gv = t.grad_buffer(v); !gv.empty())
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i] / sv;
    if (auto gs = t.grad_buffer(s); !gs.empty()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < V.size(); ++i) acc += g[i] * V[i];
      gs[0] -= acc / (sv * sv);
    }
  });
}

// Elementwise min; ties send the gradient to `a`.
inline Var minimum(const Var& a, const Var& b) {
  detail::require_same(a, b, "minimum");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(A[i], B[i]);
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, Tape& t) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    auto ga = t.grad_buffer(a);
    auto gb = t.grad_buffer(b);
    for (std::size_t i = 0; i < A.size(); ++i) {
      if (A[i] <= B[i]) {
        if (!ga.empty()) ga[i] += g[i];
      } else if (!gb.empty()) {
        gb[i] += g[i];
      }
    }
  });
}

// out[indices[i]] += v[i]; output has length `size`.
inline Var scatter_add(const Var& v, std::vector<std::size_t> indices, std::size_t size) {
  detail::require_rank(v, 1, "scatter_add");
  if (indices.size() != v.size()) throw DimensionError("scatter_add: index count differs from input length");
  const Tensor& V = v.value();
  Tensor out({size});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size) throw DimensionError("scatter_add: index out of range");
    out[indices[i]] += V[i];
  }
  return detail::tape_of(v).record(std::move(out), {v}, [v, indices = std::move(indices)](const Tensor& g, Tape& t) {
    auto gv = t.grad_buffer(v);
    for (std::size_t i = 0; i < indices.size(); ++i) gv[i] += g[indices[i]];
  });
}

// Zero-pads a vector to `size`.
inline Var pad(const Var& v, std::size_t size) {
  detail::require_rank(v, 1, "pad");
  if (size < v.size()) throw DimensionError("pad: target shorter than input");
  Tensor out({size});
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v.value()[i];
  return detail::tape_of(v).record(std::move(out), {v}, [v](const Tensor& g, Tape& t) {
    auto gv = t.grad_buffer(v);
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i];
  });
}

// gate·a + (1 − gate)·b for a scalar gate.
inline Var interpolate(const Var& gate, const Var& a, const Var& b) {
  detail::require_scalar(gate, "interpolate");
  detail::require_same(a, b, "interpolate");
  const double gv = gate.value()[0];
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gv * A[i] + (1.0 - gv) * B[i];
  return detail::tape_of(a).record(std::move(out), {gate, a, b}, [gate, a, b, gv](const Tensor& g, Tape& t) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (auto gg = t.grad_buffer(gate); !gg.empty()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < A.size(); ++i) acc += g[i] * (A[i] - B[i]);
      gg[0] += acc;
    }
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv * g[i];
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += (1.0 - gv) * g[i];
  });
}

}  // namespace mpqg
