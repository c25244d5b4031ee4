#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ftlab/rng.hpp"

namespace ftlab {

// Dense row-major tensor of doubles. Rank is 1 or 2 in practice; the shape
// vector is kept general so checkpoints can describe anything.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);
  Tensor(std::vector<std::size_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v);
  static Tensor matrix(std::size_t r, std::size_t c) { return Tensor({r, c}); }
  static Tensor row(std::vector<double> d);

  std::size_t numel() const { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  bool operator==(const Tensor&) const = default;
};

// FNV-1a over the raw bytes of the data buffer; used for determinism checks.
std::uint64_t hash_bytes(const void* p, std::size_t n, std::uint64_t h = 1469598103934665603ull);
std::uint64_t hash_tensor(const Tensor& t, std::uint64_t h = 1469598103934665603ull);

enum class ElemKind { Add, Sub, Mul, Scale, Tanh, Relu };

// Reverse-mode autodiff tape. Operations append nodes in execution order;
// backward() visits them in exact reverse. A tape is single-threaded and
// typically lives for one training step.
class Tape {
 public:
  struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves: parameters (requires_grad) and constants (inputs, targets).
  Var leaf(Tensor value, bool requires_grad = false);

  // a[m,k] @ b[k,n] -> [m,n]
  Var matmul(Var a, Var b);
  // a[m,k] @ b[n,k]^T -> [m,n]; attention scores use this.
  Var matmul_transposed(Var a, Var b);
  // x[m,k] @ w[k,n] + bias[n] broadcast over rows
  Var linear(Var x, Var w, Var bias);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var tanh(Var a);
  Var relu(Var a);
  // Generic entry point; Add/Sub/Mul accept equal shapes or a one-element
  // operand broadcast as a scalar. Scale/Tanh/Relu are unary (b ignored,
  // scalar `s` used by Scale).
  Var elementwise(ElemKind kind, Var a, Var b = {}, double s = 0.0);

  // Row-wise softmax; rows with large negative entries (masking) behave
  // correctly thanks to max subtraction.
  Var row_softmax(Var a);

  // Mean negative log-likelihood over the batch, stabilized by max
  // subtraction. labels[i] in [0, cols).
  Var softmax_cross_entropy(Var logits, std::vector<int> labels);

  // Mean squared error against a constant target of identical shape.
  Var mse(Var pred, const Tensor& target);

  // Per-row normalization over the last axis followed by gain/bias affine.
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

  // Training: zero each element w.p. p and scale survivors by 1/(1-p).
  // Inference (training=false) or p=0: identity without consuming the rng.
  Var dropout(Var x, double p, Rng& rng, bool training);

  // Gather rows of an embedding table; backward scatters into the rows.
  Var embedding_rows(Var table, std::vector<int> ids);

  Var slice_cols(Var x, std::size_t c0, std::size_t c1);
  Var concat_cols(std::span<const Var> parts);
  Var take_row(Var x, std::size_t r);
  Var stack_rows(std::span<const Var> rows);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  // Reverse sweep from a scalar root. Gradients are reset first, so calling
  // backward twice yields identical results.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&)> back;
  };

  Var push(Tensor value, bool requires_grad, std::function<void(Tape&)> back);
  bool needs(Var v) const { return v.valid() && nodes_[v.id].requires_grad; }
  Tensor& g(Var v) { return nodes_[v.id].grad; }
  const Tensor& val(Var v) const { return nodes_[v.id].value; }

  std::vector<Node> nodes_;
};

// Raw matrix product kernels shared by the tape and non-autodiff callers.
// c is accumulated into (caller zeroes first when needed).
void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

// Central finite differences of a scalar function; the oracle the gradient
// tests and the acceptance suite rest on. Independent of Tape::backward.
std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f,
                                std::span<double> x, double h = 1e-5);

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t worst_index = 0;
};

// Compares analytic against finite-difference gradients. Relative error uses
// |a-b| / max(|a|, |b|, den_floor) so near-zero components do not dominate.
GradCheckResult compare_gradients(std::span<const double> analytic,
                                  std::span<const double> numeric,
                                  double den_floor = 1e-6);

}  // namespace ftlab
