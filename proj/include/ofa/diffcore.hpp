// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over dense row-major double matrices.
//
// A Tape records every op in creation order, which is a valid topological
// order, and backward() walks it once in reverse. Every tensor in the engine
// is two-dimensional; scalars are 1x1 and vectors are 1xn. Broadcasting is
// limited to the row-bias add the transformer needs.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ofa::diff {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Plain (non-recording) helpers shared by the engine and post-hoc analysis.

/// c = a * b, or c += a * b when `accumulate`.
void gemm(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate = false);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
void softmax_rows_inplace(Tensor& t);

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  /// Zero tensor of the value's shape when no gradient reached this node.
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const;

  Tape* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  Tape() { nodes_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Learnable input. The value is copied onto the tape.
  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Seeds d(root) = seed (every element) and propagates to all ancestors.
  /// Leaf gradients accumulate across calls until zero_grad(); interior
  /// gradients hold the latest call only.
  void backward(const Var& root, double seed = 1.0);
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  /// Accumulates into a node's gradient buffer (used by backward rules).
  Tensor& grad_buffer(std::uint32_t id);

  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;
  Var record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward);
  std::span<const std::uint32_t> inputs(std::uint32_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;  // allocated on first touch
    bool requires_grad = false;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Differentiable ops. All operands must live on the same tape.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// a[m,n] + bias[1,n] broadcast over rows.
Var add_row_bias(const Var& a, const Var& bias);
Var scale(const Var& a, double s);
Var transpose(const Var& a);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);
/// Softmax along each row, computed after subtracting the row max.
Var row_softmax(const Var& a);
/// Per-row normalisation with affine gamma[1,n], beta[1,n].
Var layer_norm(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Exact (erf) GELU.
Var gelu(const Var& a);
/// Stacks b's rows below a's rows.
Var concat_rows(const Var& a, const Var& b);
Var concat_cols(std::span<const Var> parts);
Var slice(const Var& a, std::size_t row0, std::size_t rows, std::size_t col0, std::size_t cols);
/// Mean of all elements, 1x1.
Var mean(const Var& a);
/// Sum of all elements, 1x1.
Var sum(const Var& a);
/// mean((a - b)^2), 1x1.
Var mse(const Var& a, const Var& b);
/// softplus(z) - y z for a 1x1 logit z and label y in [0, 1].
Var bce_with_logits(const Var& logit, double label);

// ---------------------------------------------------------------------------
// Finite-difference gradient certification.

/// Builds a scalar (1x1) function of the given leaves on the supplied tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var> params)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-6;
  /// Above this many coordinates each tensor is subsampled (seeded) in
  /// proportion to its size, with at least 8 coordinates per tensor.
  std::size_t max_coordinates = 10000;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::size_t total_coordinates = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

/// |a - n| / max(1e-8, |a| + |n|).
double relative_error(double analytic, double numeric);

/// Compares analytic gradients with central differences
/// (f(x+eps) - f(x-eps)) / (2 eps). Throws NonDeterministic if two forward
/// evaluations at the same point disagree.
GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> params, const GradCheckOptions& options = {});

}  // namespace ofa::diff
