// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>

#include "ofa/error.hpp"

namespace ofa::diff {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorKind::ShapeMismatch, "tensor payload of " + std::to_string(data_.size()) + " for shape " +
                                              shape_str());
  }
}

std::string Tensor::shape_str() const { return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]"; }

void gemm(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (!accumulate) std::fill(c.values().begin(), c.values().end(), 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw Error(ErrorKind::ShapeMismatch, "matmul " + a.shape_str() + " x " + b.shape_str());
  Tensor c(a.rows(), b.cols());
  gemm(a, b, c);
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

void softmax_rows_inplace(Tensor& t) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double* row = t.data() + i * t.cols();
    const double mx = *std::max_element(row, row + t.cols());
    double z = 0.0;
    for (std::size_t j = 0; j < t.cols(); ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < t.cols(); ++j) row[j] /= z;
  }
}

namespace {

// dA += dC * B^T, row-dot form so both operands stream contiguously.
void gemm_nt_acc(const Tensor& dc, const Tensor& b, Tensor& da) {
  const std::size_t m = dc.rows(), n = dc.cols(), k = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* g = dc.data() + i * n;
    double* out = da.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      const double* brow = b.data() + j * n;
      double acc = 0.0;
      for (std::size_t p = 0; p < n; ++p) acc += g[p] * brow[p];
      out[j] += acc;
    }
  }
}

// dB += A^T * dC.
void gemm_tn_acc(const Tensor& a, const Tensor& dc, Tensor& db) {
  const std::size_t m = a.rows(), k = a.cols(), n = dc.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* g = dc.data() + i * n;
    for (std::size_t j = 0; j < k; ++j) {
      const double av = a(i, j);
      if (av == 0.0) continue;
      double* out = db.data() + j * n;
      for (std::size_t p = 0; p < n; ++p) out[p] += av * g[p];
    }
  }
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, std::string(op) + " produced a non-finite value");
  }
}

void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (!a.valid() || a.tape() != b.tape()) throw Error(ErrorKind::ShapeMismatch, std::string(op) + ": operands on different tapes");
}

void require_shape(bool ok, const char* op, const Tensor& a, const Tensor& b) {
  if (!ok) throw Error(ErrorKind::ShapeMismatch, std::string(op) + " " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }
double Var::item() const {
  const auto& v = value();
  if (v.size() != 1) throw Error(ErrorKind::ShapeMismatch, "item() on " + v.shape_str());
  return v[0];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  check_finite(value, "leaf");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::uint32_t i) { return nodes_[i].requires_grad; });
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Tape::grad(std::uint32_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& root, double seed) {
  if (root.tape() != this) throw Error(ErrorKind::ShapeMismatch, "backward root belongs to another tape");
  // Interior buffers restart so each call propagates only its own seed.
  for (std::uint32_t id = 0; id <= root.id(); ++id) {
    if (!nodes_[id].inputs.empty()) nodes_[id].grad = Tensor();
  }
  std::vector<char> reached(root.id() + 1, 0);
  Tensor& g = grad_buffer(root.id());
  for (auto& v : g.values()) v += seed;
  reached[root.id()] = 1;
  for (std::int64_t id = root.id(); id >= 0; --id) {
    const auto uid = static_cast<std::uint32_t>(id);
    Node& n = nodes_[uid];
    if (!reached[uid] || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, uid);
    for (auto in : n.inputs) reached[in] = 1;
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad = Tensor();
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_shape(av.cols() == bv.rows(), "matmul", av, bv);
  Tensor out = matmul(av, bv);
  check_finite(out, "matmul");
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) gemm_nt_acc(g, t.value(ib), t.grad_buffer(ia));
    if (t.requires_grad(ib)) gemm_tn_acc(t.value(ia), g, t.grad_buffer(ib));
  });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b, "add");
  require_shape(a.value().same_shape(b.value()), "add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  check_finite(out, "add");
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    for (auto id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      Tensor& d = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b, "sub");
  require_shape(a.value().same_shape(b.value()), "sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  check_finite(out, "sub");
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var add_row_bias(const Var& a, const Var& bias) {
  require_same_tape(a, bias, "add_row_bias");
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  require_shape(bv.rows() == 1 && bv.cols() == av.cols(), "add_row_bias", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) += bv[j];
  }
  check_finite(out, "add_row_bias");
  const auto ia = a.id(), ib = bias.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) d[j] += g(i, j);
      }
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  check_finite(out, "scale");
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia, s](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
  });
}

Var transpose(const Var& a) {
  const auto ia = a.id();
  return a.tape()->record(transpose(a.value()), {ia}, [ia](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) d(j, i) += g(i, j);
    }
  });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  const Tensor& av = a.value();
  if (rows * cols != av.size()) {
    throw Error(ErrorKind::ShapeMismatch, "reshape " + av.shape_str() + " to " + std::to_string(rows) + "x" +
                                              std::to_string(cols));
  }
  Tensor out(rows, cols, std::vector<double>(av.values().begin(), av.values().end()));
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Var row_softmax(const Var& a) {
  Tensor out = a.value();
  softmax_rows_inplace(out);
  check_finite(out, "row_softmax");
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& d = t.grad_buffer(ia);
    const std::size_t n = y.cols();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const double* yr = y.data() + i * n;
      const double* gr = g.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      double* dr = d.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var layer_norm(const Var& a, const Var& gamma, const Var& beta, double eps) {
  require_same_tape(a, gamma, "layer_norm");
  require_same_tape(a, beta, "layer_norm");
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  require_shape(gamma.value().rows() == 1 && gamma.value().cols() == n, "layer_norm gamma", x, gamma.value());
  require_shape(beta.value().rows() == 1 && beta.value().cols() == n, "layer_norm beta", x, beta.value());

  // xhat and per-row inverse std are kept for the backward rule.
  auto xhat = std::make_shared<Tensor>(m, n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  Tensor out(m, n);
  const double* gv = gamma.value().data();
  const double* bv = beta.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)(i, j) = h;
      out(i, j) = gv[j] * h + bv[j];
    }
  }
  check_finite(out, "layer_norm");
  const auto ia = a.id(), ig = gamma.id(), ib = beta.id();
  return a.tape()->record(std::move(out), {ia, ig, ib}, [ia, ig, ib, xhat, inv_std](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const std::size_t m = g.rows(), n = g.cols();
    const double* gv = t.value(ig).data();
    if (t.requires_grad(ig)) {
      Tensor& dg = t.grad_buffer(ig);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) dg[j] += g(i, j) * (*xhat)(i, j);
      }
    }
    if (t.requires_grad(ib)) {
      Tensor& db = t.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) db[j] += g(i, j);
      }
    }
    if (t.requires_grad(ia)) {
      Tensor& dx = t.grad_buffer(ia);
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < m; ++i) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = g(i, j) * gv[j];
          s1 += dh;
          s2 += dh * (*xhat)(i, j);
        }
        s1 *= inv_n;
        s2 *= inv_n;
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = g(i, j) * gv[j];
          dx(i, j) += (*inv_std)[i] * (dh - s1 - (*xhat)(i, j) * s2);
        }
      }
    }
  });
}

Var gelu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  check_finite(out, "gelu");
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    Tensor& d = t.grad_buffer(ia);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      d[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var concat_rows(const Var& a, const Var& b) {
  require_same_tape(a, b, "concat_rows");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_shape(av.cols() == bv.cols(), "concat_rows", av, bv);
  std::vector<double> data;
  data.reserve(av.size() + bv.size());
  data.insert(data.end(), av.values().begin(), av.values().end());
  data.insert(data.end(), bv.values().begin(), bv.values().end());
  const std::size_t split = av.size();
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(Tensor(av.rows() + bv.rows(), av.cols(), std::move(data)), {ia, ib},
                          [ia, ib, split](Tape& t, std::uint32_t self) {
                            const Tensor& g = t.grad(self);
                            if (t.requires_grad(ia)) {
                              Tensor& d = t.grad_buffer(ia);
                              for (std::size_t i = 0; i < split; ++i) d[i] += g[i];
                            }
                            if (t.requires_grad(ib)) {
                              Tensor& d = t.grad_buffer(ib);
                              for (std::size_t i = split; i < g.size(); ++i) d[i - split] += g[i];
                            }
                          });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::ShapeMismatch, "concat_cols of nothing");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::uint32_t> ids;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p, "concat_cols");
    require_shape(p.rows() == m, "concat_cols", parts[0].value(), p.value());
    n += p.cols();
    ids.push_back(p.id());
  }
  Tensor out(m, n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(v.data() + i * v.cols(), v.cols(), out.data() + i * n + off);
    }
    off += v.cols();
  }
  auto inputs = ids;
  return parts[0].tape()->record(std::move(out), std::move(inputs), [ids](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t w = t.value(id).cols();
      if (t.requires_grad(id)) {
        Tensor& d = t.grad_buffer(id);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < w; ++j) d(i, j) += g(i, off + j);
        }
      }
      off += w;
    }
  });
}

Var slice(const Var& a, std::size_t row0, std::size_t rows, std::size_t col0, std::size_t cols) {
  const Tensor& av = a.value();
  if (row0 + rows > av.rows() || col0 + cols > av.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "slice out of range of " + av.shape_str());
  }
  Tensor out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(av.data() + (row0 + i) * av.cols() + col0, cols, out.data() + i * cols);
  }
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia, row0, col0](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) d(row0 + i, col0 + j) += g(i, j);
    }
  });
}

Var sum(const Var& a) {
  const auto& v = a.value().values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  const auto ia = a.id();
  return a.tape()->record(Tensor::scalar(s), {ia}, [ia](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    for (auto& d : t.grad_buffer(ia).values()) d += g;
  });
}

Var mean(const Var& a) {
  const auto& v = a.value().values();
  const double inv = 1.0 / static_cast<double>(v.size());
  const double s = std::accumulate(v.begin(), v.end(), 0.0) * inv;
  const auto ia = a.id();
  return a.tape()->record(Tensor::scalar(s), {ia}, [ia, inv](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0] * inv;
    for (auto& d : t.grad_buffer(ia).values()) d += g;
  });
}

Var mse(const Var& a, const Var& b) {
  require_same_tape(a, b, "mse");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_shape(av.same_shape(bv), "mse", av, bv);
  const double inv = 1.0 / static_cast<double>(av.size());
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(Tensor::scalar(s * inv), {ia, ib}, [ia, ib, inv](Tape& t, std::uint32_t self) {
    const double g = 2.0 * inv * t.grad(self)[0];
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < av.size(); ++i) d[i] += g * (av[i] - bv[i]);
    }
    if (t.requires_grad(ib)) {
      Tensor& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < av.size(); ++i) d[i] -= g * (av[i] - bv[i]);
    }
  });
}

Var bce_with_logits(const Var& logit, double label) {
  const double z = logit.item();
  // softplus(z) - y z, with softplus(z) = max(z, 0) + log1p(exp(-|z|)).
  const double loss = std::max(z, 0.0) - label * z + std::log1p(std::exp(-std::abs(z)));
  const auto ia = logit.id();
  return logit.tape()->record(Tensor::scalar(loss), {ia}, [ia, label](Tape& t, std::uint32_t self) {
    const double z = t.value(ia)[0];
    const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    t.grad_buffer(ia)[0] += t.grad(self)[0] * (sig - label);
  });
}

// ---------------------------------------------------------------------------
// grad_check

constexpr std::size_t kMinPerTensor = 8;

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p, false));
  return f(tape, leaves).item();
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> params, const GradCheckOptions& options) {
  GradCheckReport report;

  // Analytic gradients.
  std::vector<Tensor> analytic;
  double f0 = 0.0;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
    Var out = f(tape, leaves);
    f0 = out.item();
    tape.backward(out);
    for (const auto& l : leaves) analytic.push_back(l.grad());
  }
  const double f1 = evaluate(f, params);
  if (f0 != f1) {
    throw Error(ErrorKind::NonDeterministic, "two forward passes disagree: " + std::to_string(f0) + " vs " +
                                                 std::to_string(f1));
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (const auto& p : params) report.total_coordinates += p.size();
  const bool subsample = report.total_coordinates > options.max_coordinates;
  std::mt19937_64 rng(options.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t n = params[p].size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (subsample) {
      const double share = static_cast<double>(options.max_coordinates) * static_cast<double>(n) /
                           static_cast<double>(report.total_coordinates);
      const auto quota = std::min(n, std::max<std::size_t>(kMinPerTensor, static_cast<std::size_t>(std::llround(share))));
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(quota);
      std::sort(idx.begin(), idx.end());
    }
    for (auto i : idx) coords.emplace_back(p, i);
  }

  for (const auto& [p, i] : coords) {
    const double x = params[p][i];
    params[p][i] = x + options.epsilon;
    const double fp = evaluate(f, params);
    params[p][i] = x - options.epsilon;
    const double fm = evaluate(f, params);
    params[p][i] = x;
    const double numeric = (fp - fm) / (2.0 * options.epsilon);
    const double a = analytic[p][i];
    const double err = relative_error(a, numeric);
    if (report.coordinates_checked++ == 0 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_param = p;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace ofa::diff
