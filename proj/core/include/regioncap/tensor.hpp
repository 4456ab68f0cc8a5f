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
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "regioncap/rng.hpp"

namespace regioncap {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles. Operations in this library treat every
/// tensor as a matrix: rank-1 tensors are single rows.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor matrix(int rows, int cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }
  /// Row-major literal, e.g. Tensor::of(2, 2, {1, 2, 3, 4}).
  static Tensor of(int rows, int cols, std::initializer_list<double> values);
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rows() const;
  int cols() const;
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(int r, int c) { return values_[static_cast<std::size_t>(r) * cols() + c]; }
  double operator()(int r, int c) const {
    return values_[static_cast<std::size_t>(r) * cols() + c];
  }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> data() { return values_; }
  std::span<const double> data() const { return values_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double item() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<int> shape_;
  std::vector<double> values_;
};

std::string shape_string(const std::vector<int>& shape);

class Tape;

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Records operations as they execute and replays their backward rules in
/// reverse. A tape belongs to one thread. Parameter leaves alias external
/// tensors, which must outlive the tape.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf aliasing `value`; accumulates a gradient during backward().
  Var parameter(const Tensor& value);
  /// Leaf owning `value`; accumulates a gradient during backward().
  Var variable(Tensor value);

  const Tensor& value(Var v) const { return *nodes_[v.id].value; }
  /// Gradient of the last backward() call; zeros if the node was not reached.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Reverse sweep from a 1x1 loss. Throws ShapeError for non-scalar losses.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  /// Appends an op result. `backward` is dropped when no input needs a
  /// gradient or recording is disabled.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  /// Gradient buffer of `v`, allocated as zeros on first access.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    std::unique_ptr<Tensor> owned;
    const Tensor* value = nullptr;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

/// Differentiable primitives. All shapes are explicit; the only broadcast is
/// the row-vector bias in add_row.
namespace ops {

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
/// x [m x n] + bias [1 x n] on every row.
Var add_row(Tape& t, Var x, Var bias);
Var scale(Tape& t, Var x, double s);
Var mul(Tape& t, Var a, Var b);
/// x [m x n] with row i multiplied by s[i, 0].
Var row_scale(Tape& t, Var x, Var s);
Var transpose(Tape& t, Var x);
Var concat_rows(Tape& t, std::span<const Var> parts);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var slice_rows(Tape& t, Var x, int start, int count);
Var slice_cols(Tape& t, Var x, int start, int count);
/// Gathers rows of `table` [V x d] for each id.
Var embedding(Tape& t, Var table, std::span<const int> ids);
Var relu(Tape& t, Var x);
/// Elementwise natural log; inputs must be positive.
Var log(Tape& t, Var x);
Var softmax_rows(Tape& t, Var x);
Var log_softmax_rows(Tape& t, Var x);
/// Per-row normalisation followed by gamma/beta [1 x n].
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);
Var sum(Tape& t, Var x);
Var mean(Tape& t, Var x);

enum class Reduction { Mean, Sum };

/// Token cross-entropy of logits [m x V] against targets; rows whose target
/// equals `ignore_index` contribute nothing. Returns a 1x1 tensor.
Var cross_entropy(Tape& t, Var logits, std::span<const int> targets, int ignore_index = -1,
                  Reduction reduction = Reduction::Mean);
/// Negative log-likelihood when the rows already hold probabilities.
Var nll_from_probs(Tape& t, Var probs, std::span<const int> targets, int ignore_index = -1,
                   Reduction reduction = Reduction::Mean);

}  // namespace ops

/// Non-differentiable helpers.
Tensor softmax(const Tensor& logits_row);
int argmax_row(const Tensor& x, int row = 0);
/// Draws an index from a probability row.
int sample_categorical(std::span<const double> probs, CounterRng& rng);

}  // namespace regioncap
