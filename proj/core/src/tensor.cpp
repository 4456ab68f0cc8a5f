/*
 * Copyright 2026 The regioncap Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "regioncap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace regioncap {

// ---------------------------------------------------------------------------
// Tensor

namespace {
std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}
}  // namespace

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != element_count(shape_)) {
    throw ShapeError("value count " + std::to_string(values_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

Tensor Tensor::of(int rows, int cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

int Tensor::rows() const {
  if (shape_.empty()) return values_.empty() ? 0 : 1;
  if (shape_.size() == 1) return 1;
  int r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

int Tensor::cols() const { return shape_.empty() ? static_cast<int>(values_.size()) : shape_.back(); }

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on a tensor of shape " + shape_string(shape_));
  return values_[0];
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::make_unique<Tensor>(std::move(value));
  n.value = n.owned.get();
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Var Tape::parameter(const Tensor& value) {
  Node n;
  n.value = &value;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  Node n;
  n.owned = std::make_unique<Tensor>(std::move(value));
  n.value = n.owned.get();
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty() && !n.value->empty()) return Tensor(n.value->shape(), 0.0);
  return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() != n.value->size()) n.grad = Tensor(n.value->shape(), 0.0);
  return n.grad;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::make_unique<Tensor>(std::move(value));
  n.value = n.owned.get();
  if (grad_enabled_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [&](Var v) { return nodes_[v.id].requires_grad; });
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_string(value(loss).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // Backward rules only write to inputs, which always have lower ids.
    n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------------------
// kernels

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::string dims(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

/// C += op(A) * op(B)
void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c) {
  const int m = ta ? a.cols() : a.rows();
  const int k = ta ? a.rows() : a.cols();
  const int n = tb ? b.rows() : b.cols();
  const double* A = a.values().data();
  const double* B = b.values().data();
  double* C = c.values().data();
  const int lda = a.cols();
  const int ldb = b.cols();
  for (int i = 0; i < m; ++i) {
    double* crow = C + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ta ? A[static_cast<std::size_t>(p) * lda + i]
                           : A[static_cast<std::size_t>(i) * lda + p];
      if (av == 0.0) continue;
      if (!tb) {
        const double* brow = B + static_cast<std::size_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * B[static_cast<std::size_t>(j) * ldb + p];
      }
    }
  }
}

Tensor as_matrix(const Tensor& t) { return Tensor({t.rows(), t.cols()}, t.values()); }

}  // namespace

namespace ops {

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.cols() == B.rows(), "matmul: inner dimensions differ (" + dims(A) + " * " + dims(B) + ")");
  Tensor C = Tensor::matrix(A.rows(), B.cols());
  gemm(A, false, B, false, C);
  return t.record(std::move(C), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) gemm(g, false, tp.value(b), true, tp.grad_buffer(a));
    if (tp.requires_grad(b)) gemm(tp.value(a), true, g, false, tp.grad_buffer(b));
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          "add: shapes differ (" + dims(A) + " vs " + dims(B) + ")");
  Tensor C = as_matrix(A);
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  return t.record(std::move(C), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      Tensor& gv = tp.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var add_row(Tape& t, Var x, Var bias) {
  const Tensor& X = t.value(x);
  const Tensor& B = t.value(bias);
  require(B.size() == static_cast<std::size_t>(X.cols()),
          "add_row: bias of size " + std::to_string(B.size()) + " for " + dims(X));
  Tensor Y = as_matrix(X);
  const int n = X.cols();
  for (int r = 0; r < X.rows(); ++r) {
    for (int c = 0; c < n; ++c) Y(r, c) += B[c];
  }
  return t.record(std::move(Y), {x, bias}, [x, bias, n](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(x)) {
      Tensor& gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.requires_grad(bias)) {
      Tensor& gb = tp.grad_buffer(bias);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
}

Var scale(Tape& t, Var x, double s) {
  Tensor Y = as_matrix(t.value(x));
  for (double& v : Y.values()) v *= s;
  return t.record(std::move(Y), {x}, [x, s](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          "mul: shapes differ (" + dims(A) + " vs " + dims(B) + ")");
  Tensor C = as_matrix(A);
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  return t.record(std::move(C), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      const Tensor& B = tp.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      const Tensor& A = tp.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var row_scale(Tape& t, Var x, Var s) {
  const Tensor& X = t.value(x);
  const Tensor& S = t.value(s);
  require(S.size() == static_cast<std::size_t>(X.rows()),
          "row_scale: " + std::to_string(S.size()) + " scales for " + dims(X));
  Tensor Y = as_matrix(X);
  for (int r = 0; r < X.rows(); ++r) {
    for (int c = 0; c < X.cols(); ++c) Y(r, c) *= S[r];
  }
  return t.record(std::move(Y), {x, s}, [x, s](Tape& tp, const Tensor& g) {
    const Tensor& X = tp.value(x);
    const Tensor& S = tp.value(s);
    const int m = X.rows();
    const int n = X.cols();
    if (tp.requires_grad(x)) {
      Tensor& gx = tp.grad_buffer(x);
      for (int r = 0; r < m; ++r) {
        for (int c = 0; c < n; ++c) gx[static_cast<std::size_t>(r) * n + c] += g(r, c) * S[r];
      }
    }
    if (tp.requires_grad(s)) {
      Tensor& gs = tp.grad_buffer(s);
      for (int r = 0; r < m; ++r) {
        double acc = 0.0;
        for (int c = 0; c < n; ++c) acc += g(r, c) * X[static_cast<std::size_t>(r) * n + c];
        gs[r] += acc;
      }
    }
  });
}

Var transpose(Tape& t, Var x) {
  const Tensor& X = t.value(x);
  Tensor Y = Tensor::matrix(X.cols(), X.rows());
  for (int r = 0; r < X.rows(); ++r) {
    for (int c = 0; c < X.cols(); ++c) Y(c, r) = X[static_cast<std::size_t>(r) * X.cols() + c];
  }
  return t.record(std::move(Y), {x}, [x](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    const int rows = g.cols();  // x rows
    const int cols = g.rows();  // x cols
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) gx[static_cast<std::size_t>(r) * cols + c] += g(c, r);
    }
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  const int n = t.value(parts[0]).cols();
  int rows = 0;
  for (Var p : parts) {
    require(t.value(p).cols() == n, "concat_rows: column counts differ");
    rows += t.value(p).rows();
  }
  Tensor Y = Tensor::matrix(rows, n);
  std::size_t off = 0;
  for (Var p : parts) {
    const auto& v = t.value(p).values();
    std::copy(v.begin(), v.end(), Y.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(Y), parts, [inputs](Tape& tp, const Tensor& g) {
    std::size_t off = 0;
    for (Var p : inputs) {
      const std::size_t sz = tp.value(p).size();
      if (tp.requires_grad(p)) {
        Tensor& gp = tp.grad_buffer(p);
        for (std::size_t i = 0; i < sz; ++i) gp[i] += g[off + i];
      }
      off += sz;
    }
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  const int m = t.value(parts[0]).rows();
  int cols = 0;
  for (Var p : parts) {
    require(t.value(p).rows() == m, "concat_cols: row counts differ");
    cols += t.value(p).cols();
  }
  Tensor Y = Tensor::matrix(m, cols);
  int off = 0;
  for (Var p : parts) {
    const Tensor& P = t.value(p);
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < P.cols(); ++c) Y(r, off + c) = P[static_cast<std::size_t>(r) * P.cols() + c];
    }
    off += P.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(Y), parts, [inputs](Tape& tp, const Tensor& g) {
    int off = 0;
    for (Var p : inputs) {
      const int pc = tp.value(p).cols();
      if (tp.requires_grad(p)) {
        Tensor& gp = tp.grad_buffer(p);
        for (int r = 0; r < g.rows(); ++r) {
          for (int c = 0; c < pc; ++c) gp[static_cast<std::size_t>(r) * pc + c] += g(r, off + c);
        }
      }
      off += pc;
    }
  });
}

Var slice_rows(Tape& t, Var x, int start, int count) {
  const Tensor& X = t.value(x);
  require(start >= 0 && count >= 0 && start + count <= X.rows(), "slice_rows: range outside " + dims(X));
  const int n = X.cols();
  Tensor Y = Tensor::matrix(count, n);
  std::copy_n(X.values().begin() + static_cast<std::ptrdiff_t>(start) * n,
              static_cast<std::size_t>(count) * n, Y.values().begin());
  return t.record(std::move(Y), {x}, [x, start, n](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    const std::size_t off = static_cast<std::size_t>(start) * n;
    for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
  });
}

Var slice_cols(Tape& t, Var x, int start, int count) {
  const Tensor& X = t.value(x);
  require(start >= 0 && count >= 0 && start + count <= X.cols(), "slice_cols: range outside " + dims(X));
  const int m = X.rows();
  const int n = X.cols();
  Tensor Y = Tensor::matrix(m, count);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < count; ++c) Y(r, c) = X[static_cast<std::size_t>(r) * n + start + c];
  }
  return t.record(std::move(Y), {x}, [x, start, count, n](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    for (int r = 0; r < g.rows(); ++r) {
      for (int c = 0; c < count; ++c) gx[static_cast<std::size_t>(r) * n + start + c] += g(r, c);
    }
  });
}

Var embedding(Tape& t, Var table, std::span<const int> ids) {
  const Tensor& T = t.value(table);
  const int d = T.cols();
  Tensor Y = Tensor::matrix(static_cast<int>(ids.size()), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < T.rows(), "embedding: id " + std::to_string(ids[i]) +
                                                  " outside table of " + std::to_string(T.rows()));
    std::copy_n(T.values().begin() + static_cast<std::ptrdiff_t>(ids[i]) * d, d,
                Y.values().begin() + static_cast<std::ptrdiff_t>(i) * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return t.record(std::move(Y), {table}, [table, idv, d](Tape& tp, const Tensor& g) {
    Tensor& gt = tp.grad_buffer(table);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      for (int c = 0; c < d; ++c) {
        gt[static_cast<std::size_t>(idv[i]) * d + c] += g[i * d + c];
      }
    }
  });
}

Var relu(Tape& t, Var x) {
  Tensor Y = as_matrix(t.value(x));
  for (double& v : Y.values()) v = v > 0 ? v : 0.0;
  return t.record(std::move(Y), {x}, [x](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    const Tensor& X = tp.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (X[i] > 0) gx[i] += g[i];
    }
  });
}

Var log(Tape& t, Var x) {
  Tensor Y = as_matrix(t.value(x));
  for (double& v : Y.values()) v = std::log(v);
  return t.record(std::move(Y), {x}, [x](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    const Tensor& X = tp.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / X[i];
  });
}

Var softmax_rows(Tape& t, Var x) {
  const Tensor& X = t.value(x);
  const int m = X.rows();
  const int n = X.cols();
  Tensor Y = Tensor::matrix(m, n);
  for (int r = 0; r < m; ++r) {
    const double* xr = X.values().data() + static_cast<std::size_t>(r) * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (int c = 0; c < n; ++c) z += (Y(r, c) = std::exp(xr[c] - mx));
    for (int c = 0; c < n; ++c) Y(r, c) /= z;
  }
  Tensor saved = Y;
  return t.record(std::move(Y), {x}, [x, saved = std::move(saved)](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    const int m = saved.rows();
    const int n = saved.cols();
    for (int r = 0; r < m; ++r) {
      double dot = 0.0;
      for (int c = 0; c < n; ++c) dot += g(r, c) * saved(r, c);
      for (int c = 0; c < n; ++c) {
        gx[static_cast<std::size_t>(r) * n + c] += saved(r, c) * (g(r, c) - dot);
      }
    }
  });
}

Var log_softmax_rows(Tape& t, Var x) {
  const Tensor& X = t.value(x);
  const int m = X.rows();
  const int n = X.cols();
  Tensor Y = Tensor::matrix(m, n);
  for (int r = 0; r < m; ++r) {
    const double* xr = X.values().data() + static_cast<std::size_t>(r) * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (int c = 0; c < n; ++c) z += std::exp(xr[c] - mx);
    const double lse = mx + std::log(z);
    for (int c = 0; c < n; ++c) Y(r, c) = xr[c] - lse;
  }
  Tensor saved = Y;
  return t.record(std::move(Y), {x}, [x, saved = std::move(saved)](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    const int m = saved.rows();
    const int n = saved.cols();
    for (int r = 0; r < m; ++r) {
      double gsum = 0.0;
      for (int c = 0; c < n; ++c) gsum += g(r, c);
      for (int c = 0; c < n; ++c) {
        gx[static_cast<std::size_t>(r) * n + c] += g(r, c) - std::exp(saved(r, c)) * gsum;
      }
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = t.value(x);
  const int m = X.rows();
  const int n = X.cols();
  require(t.value(gamma).size() == static_cast<std::size_t>(n) &&
              t.value(beta).size() == static_cast<std::size_t>(n),
          "layer_norm: gain/bias size does not match " + dims(X));
  const Tensor& G = t.value(gamma);
  const Tensor& B = t.value(beta);
  Tensor Y = Tensor::matrix(m, n);
  Tensor xhat = Tensor::matrix(m, n);
  std::vector<double> rstd(m);
  for (int r = 0; r < m; ++r) {
    const double* xr = X.values().data() + static_cast<std::size_t>(r) * n;
    double mu = 0.0;
    for (int c = 0; c < n; ++c) mu += xr[c];
    mu /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= n;
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < n; ++c) {
      xhat(r, c) = (xr[c] - mu) * rstd[r];
      Y(r, c) = xhat(r, c) * G[c] + B[c];
    }
  }
  return t.record(std::move(Y), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd)](
                      Tape& tp, const Tensor& g) {
                    const int m = xhat.rows();
                    const int n = xhat.cols();
                    if (tp.requires_grad(gamma)) {
                      Tensor& gg = tp.grad_buffer(gamma);
                      for (int r = 0; r < m; ++r) {
                        for (int c = 0; c < n; ++c) gg[c] += g(r, c) * xhat(r, c);
                      }
                    }
                    if (tp.requires_grad(beta)) {
                      Tensor& gb = tp.grad_buffer(beta);
                      for (int r = 0; r < m; ++r) {
                        for (int c = 0; c < n; ++c) gb[c] += g(r, c);
                      }
                    }
                    if (tp.requires_grad(x)) {
                      const Tensor& G = tp.value(gamma);
                      Tensor& gx = tp.grad_buffer(x);
                      for (int r = 0; r < m; ++r) {
                        double mean_d = 0.0;
                        double mean_dx = 0.0;
                        for (int c = 0; c < n; ++c) {
                          const double d = g(r, c) * G[c];
                          mean_d += d;
                          mean_dx += d * xhat(r, c);
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for (int c = 0; c < n; ++c) {
                          const double d = g(r, c) * G[c];
                          gx[static_cast<std::size_t>(r) * n + c] +=
                              rstd[r] * (d - mean_d - xhat(r, c) * mean_dx);
                        }
                      }
                    }
                  });
}

Var sum(Tape& t, Var x) {
  const Tensor& X = t.value(x);
  const double s = std::accumulate(X.values().begin(), X.values().end(), 0.0);
  return t.record(Tensor::scalar(s), {x}, [x](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    for (double& v : gx.values()) v += g[0];
  });
}

Var mean(Tape& t, Var x) {
  const std::size_t n = t.value(x).size();
  require(n > 0, "mean of an empty tensor");
  return scale(t, sum(t, x), 1.0 / static_cast<double>(n));
}

namespace {

std::pair<std::vector<int>, int> active_targets(std::span<const int> targets, int rows, int vocab,
                                                int ignore_index, const char* op) {
  require(static_cast<int>(targets.size()) == rows,
          std::string(op) + ": " + std::to_string(targets.size()) + " targets for " +
              std::to_string(rows) + " rows");
  std::vector<int> tv(targets.begin(), targets.end());
  int count = 0;
  for (int y : tv) {
    if (y == ignore_index) continue;
    require(y >= 0 && y < vocab, std::string(op) + ": target id out of range");
    ++count;
  }
  return {tv, count};
}

}  // namespace

Var cross_entropy(Tape& t, Var logits, std::span<const int> targets, int ignore_index,
                  Reduction reduction) {
  const Tensor& X = t.value(logits);
  const int m = X.rows();
  const int n = X.cols();
  auto [tv, count] = active_targets(targets, m, n, ignore_index, "cross_entropy");
  Tensor probs = Tensor::matrix(m, n);
  double loss = 0.0;
  for (int r = 0; r < m; ++r) {
    const double* xr = X.values().data() + static_cast<std::size_t>(r) * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (int c = 0; c < n; ++c) z += (probs(r, c) = std::exp(xr[c] - mx));
    for (int c = 0; c < n; ++c) probs(r, c) /= z;
    if (tv[r] != ignore_index) loss -= xr[tv[r]] - mx - std::log(z);
  }
  const double denom = (reduction == Reduction::Mean && count > 0) ? count : 1.0;
  return t.record(Tensor::scalar(loss / denom), {logits},
                  [logits, tv = std::move(tv), probs = std::move(probs), denom, ignore_index](
                      Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad_buffer(logits);
                    const int n = probs.cols();
                    const double s = g[0] / denom;
                    for (int r = 0; r < probs.rows(); ++r) {
                      if (tv[r] == ignore_index) continue;
                      for (int c = 0; c < n; ++c) {
                        gx[static_cast<std::size_t>(r) * n + c] +=
                            s * (probs(r, c) - (c == tv[r] ? 1.0 : 0.0));
                      }
                    }
                  });
}

Var nll_from_probs(Tape& t, Var probs, std::span<const int> targets, int ignore_index,
                   Reduction reduction) {
  const Tensor& P = t.value(probs);
  const int m = P.rows();
  const int n = P.cols();
  auto [tv, count] = active_targets(targets, m, n, ignore_index, "nll_from_probs");
  double loss = 0.0;
  for (int r = 0; r < m; ++r) {
    if (tv[r] != ignore_index) loss -= std::log(P(r, tv[r]));
  }
  const double denom = (reduction == Reduction::Mean && count > 0) ? count : 1.0;
  return t.record(Tensor::scalar(loss / denom), {probs},
                  [probs, tv = std::move(tv), denom, ignore_index](Tape& tp, const Tensor& g) {
                    Tensor& gp = tp.grad_buffer(probs);
                    const Tensor& P = tp.value(probs);
                    const int n = P.cols();
                    for (int r = 0; r < P.rows(); ++r) {
                      if (tv[r] == ignore_index) continue;
                      const std::size_t i = static_cast<std::size_t>(r) * n + tv[r];
                      gp[i] -= g[0] / (denom * P[i]);
                    }
                  });
}

}  // namespace ops

Tensor softmax(const Tensor& logits_row) {
  Tensor out({1, static_cast<int>(logits_row.size())}, 0.0);
  const auto& x = logits_row.values();
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (out[i] = std::exp(x[i] - mx));
  for (double& v : out.values()) v /= z;
  return out;
}

int argmax_row(const Tensor& x, int row) {
  const int n = x.cols();
  const double* xr = x.values().data() + static_cast<std::size_t>(row) * n;
  return static_cast<int>(std::max_element(xr, xr + n) - xr);
}

int sample_categorical(std::span<const double> probs, CounterRng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0) continue;
    acc += probs[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

}  // namespace regioncap
