#include "ftlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace ftlab {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_numel(shape)) throw std::invalid_argument("tensor data length does not match shape");
}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

Tensor Tensor::row(std::vector<double> d) {
  std::size_t n = d.size();
  return Tensor({1, n}, std::move(d));
}

std::size_t Tensor::rows() const {
  if (shape.empty()) throw std::invalid_argument("rank-0 tensor has no rows");
  return shape.size() == 1 ? 1 : shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.empty()) throw std::invalid_argument("rank-0 tensor has no cols");
  return shape.back();
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::uint64_t hash_bytes(const void* p, std::size_t n, std::uint64_t h) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t hash_tensor(const Tensor& t, std::uint64_t h) {
  for (std::size_t d : t.shape) h = hash_bytes(&d, sizeof(d), h);
  return hash_bytes(t.data.data(), t.data.size() * sizeof(double), h);
}

// ---------------------------------------------------------------------------
// matmul kernels

void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  // c[m,n] += a[m,k] @ b[n,k]^T
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

void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  // c[m,n] += a[k,m]^T @ b[k,n]
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      double av = ap[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// ---------------------------------------------------------------------------
// tape

Tape::Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> back) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tape::Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

static void require_matrix(const Tensor& t, const char* what) {
  if (t.shape.size() != 2) throw std::invalid_argument(std::string(what) + ": expected a rank-2 tensor");
}

Tape::Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require_matrix(ta, "matmul");
  require_matrix(tb, "matmul");
  if (ta.cols() != tb.rows()) throw std::invalid_argument("matmul: inner dimensions disagree");
  std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out({m, n});
  matmul_nn(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
  bool rg = needs(a) || needs(b);
  Var v = push(std::move(out), rg, nullptr);
  nodes_.back().back = [a, b, v, m, k, n](Tape& t) {
    const Tensor& dc = t.g(v);
    if (t.needs(a)) matmul_nt(dc.data.data(), t.val(b).data.data(), t.g(a).data.data(), m, n, k);
    if (t.needs(b)) matmul_tn(t.val(a).data.data(), dc.data.data(), t.g(b).data.data(), k, m, n);
  };
  return v;
}

Tape::Var Tape::matmul_transposed(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require_matrix(ta, "matmul_transposed");
  require_matrix(tb, "matmul_transposed");
  if (ta.cols() != tb.cols()) throw std::invalid_argument("matmul_transposed: inner dimensions disagree");
  std::size_t m = ta.rows(), k = ta.cols(), n = tb.rows();
  Tensor out({m, n});
  matmul_nt(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
  bool rg = needs(a) || needs(b);
  Var v = push(std::move(out), rg, nullptr);
  nodes_.back().back = [a, b, v, m, k, n](Tape& t) {
    const Tensor& dy = t.g(v);
    if (t.needs(a)) matmul_nn(dy.data.data(), t.val(b).data.data(), t.g(a).data.data(), m, n, k);
    if (t.needs(b)) matmul_tn(dy.data.data(), t.val(a).data.data(), t.g(b).data.data(), n, m, k);
  };
  return v;
}

Tape::Var Tape::linear(Var x, Var w, Var bias) {
  const Tensor& tx = val(x);
  const Tensor& tw = val(w);
  const Tensor& tb = val(bias);
  require_matrix(tx, "linear");
  require_matrix(tw, "linear");
  if (tx.cols() != tw.rows()) throw std::invalid_argument("linear: inner dimensions disagree");
  if (tb.numel() != tw.cols()) throw std::invalid_argument("linear: bias length must equal output width");
  std::size_t m = tx.rows(), k = tx.cols(), n = tw.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    std::memcpy(out.data.data() + i * n, tb.data.data(), n * sizeof(double));
  matmul_nn(tx.data.data(), tw.data.data(), out.data.data(), m, k, n);
  bool rg = needs(x) || needs(w) || needs(bias);
  Var v = push(std::move(out), rg, nullptr);
  nodes_.back().back = [x, w, bias, v, m, k, n](Tape& t) {
    const Tensor& dy = t.g(v);
    if (t.needs(x)) matmul_nt(dy.data.data(), t.val(w).data.data(), t.g(x).data.data(), m, n, k);
    if (t.needs(w)) matmul_tn(t.val(x).data.data(), dy.data.data(), t.g(w).data.data(), k, m, n);
    if (t.needs(bias)) {
      double* db = t.g(bias).data.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += dy.data[i * n + j];
    }
  };
  return v;
}

namespace {

enum class Broadcast { None, AScalar, BScalar };

Broadcast binary_broadcast(const Tensor& a, const Tensor& b) {
  if (a.shape == b.shape) return Broadcast::None;
  if (b.numel() == 1) return Broadcast::BScalar;
  if (a.numel() == 1) return Broadcast::AScalar;
  throw std::invalid_argument("elementwise: shapes must match or one operand must be scalar");
}

}  // namespace

Tape::Var Tape::add(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  Broadcast bc = binary_broadcast(ta, tb);
  const Tensor& big = bc == Broadcast::AScalar ? tb : ta;
  Tensor out = big;
  if (bc == Broadcast::None) {
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] + tb.data[i];
  } else {
    double s = bc == Broadcast::BScalar ? tb.data[0] : ta.data[0];
    const Tensor& full = bc == Broadcast::BScalar ? ta : tb;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = full.data[i] + s;
  }
  Var v = push(std::move(out), needs(a) || needs(b), nullptr);
  nodes_.back().back = [a, b, v, bc](Tape& t) {
    const Tensor& dy = t.g(v);
    auto accum = [&](Var x, bool scalar) {
      if (!t.needs(x)) return;
      Tensor& dx = t.g(x);
      if (scalar) {
        double s = 0.0;
        for (double d : dy.data) s += d;
        dx.data[0] += s;
      } else {
        for (std::size_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i];
      }
    };
    accum(a, bc == Broadcast::AScalar);
    accum(b, bc == Broadcast::BScalar);
  };
  return v;
}

Tape::Var Tape::sub(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  Broadcast bc = binary_broadcast(ta, tb);
  const Tensor& big = bc == Broadcast::AScalar ? tb : ta;
  Tensor out = big;
  if (bc == Broadcast::None) {
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] - tb.data[i];
  } else if (bc == Broadcast::BScalar) {
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] - tb.data[0];
  } else {
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[0] - tb.data[i];
  }
  Var v = push(std::move(out), needs(a) || needs(b), nullptr);
  nodes_.back().back = [a, b, v, bc](Tape& t) {
    const Tensor& dy = t.g(v);
    if (t.needs(a)) {
      Tensor& da = t.g(a);
      if (bc == Broadcast::AScalar) {
        double s = 0.0;
        for (double d : dy.data) s += d;
        da.data[0] += s;
      } else {
        for (std::size_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i];
      }
    }
    if (t.needs(b)) {
      Tensor& db = t.g(b);
      if (bc == Broadcast::BScalar) {
        double s = 0.0;
        for (double d : dy.data) s += d;
        db.data[0] -= s;
      } else {
        for (std::size_t i = 0; i < dy.numel(); ++i) db.data[i] -= dy.data[i];
      }
    }
  };
  return v;
}

Tape::Var Tape::mul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  Broadcast bc = binary_broadcast(ta, tb);
  const Tensor& big = bc == Broadcast::AScalar ? tb : ta;
  Tensor out = big;
  if (bc == Broadcast::None) {
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] * tb.data[i];
  } else {
    double s = bc == Broadcast::BScalar ? tb.data[0] : ta.data[0];
    const Tensor& full = bc == Broadcast::BScalar ? ta : tb;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = full.data[i] * s;
  }
  Var v = push(std::move(out), needs(a) || needs(b), nullptr);
  nodes_.back().back = [a, b, v, bc](Tape& t) {
    const Tensor& dy = t.g(v);
    const Tensor& ta = t.val(a);
    const Tensor& tb = t.val(b);
    if (t.needs(a)) {
      Tensor& da = t.g(a);
      if (bc == Broadcast::AScalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < dy.numel(); ++i) s += dy.data[i] * tb.data[i];
        da.data[0] += s;
      } else if (bc == Broadcast::BScalar) {
        for (std::size_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i] * tb.data[0];
      } else {
        for (std::size_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i] * tb.data[i];
      }
    }
    if (t.needs(b)) {
      Tensor& db = t.g(b);
      if (bc == Broadcast::BScalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < dy.numel(); ++i) s += dy.data[i] * ta.data[i];
        db.data[0] += s;
      } else if (bc == Broadcast::AScalar) {
        for (std::size_t i = 0; i < dy.numel(); ++i) db.data[i] += dy.data[i] * ta.data[0];
      } else {
        for (std::size_t i = 0; i < dy.numel(); ++i) db.data[i] += dy.data[i] * ta.data[i];
      }
    }
  };
  return v;
}

Tape::Var Tape::scale(Var a, double s) {
  Tensor out = val(a);
  for (double& d : out.data) d *= s;
  Var v = push(std::move(out), needs(a), nullptr);
  nodes_.back().back = [a, v, s](Tape& t) {
    if (!t.needs(a)) return;
    const Tensor& dy = t.g(v);
    Tensor& da = t.g(a);
    for (std::size_t i = 0; i < dy.numel(); ++i) da.data[i] += s * dy.data[i];
  };
  return v;
}

Tape::Var Tape::tanh(Var a) {
  Tensor out = val(a);
  for (double& d : out.data) d = std::tanh(d);
  Var v = push(std::move(out), needs(a), nullptr);
  nodes_.back().back = [a, v](Tape& t) {
    if (!t.needs(a)) return;
    const Tensor& y = t.val(v);
    const Tensor& dy = t.g(v);
    Tensor& da = t.g(a);
    for (std::size_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i] * (1.0 - y.data[i] * y.data[i]);
  };
  return v;
}

Tape::Var Tape::relu(Var a) {
  Tensor out = val(a);
  for (double& d : out.data) d = d > 0.0 ? d : 0.0;
  Var v = push(std::move(out), needs(a), nullptr);
  nodes_.back().back = [a, v](Tape& t) {
    if (!t.needs(a)) return;
    const Tensor& x = t.val(a);
    const Tensor& dy = t.g(v);
    Tensor& da = t.g(a);
    for (std::size_t i = 0; i < dy.numel(); ++i)
      if (x.data[i] > 0.0) da.data[i] += dy.data[i];
  };
  return v;
}

Tape::Var Tape::elementwise(ElemKind kind, Var a, Var b, double s) {
  switch (kind) {
    case ElemKind::Add: return add(a, b);
    case ElemKind::Sub: return sub(a, b);
    case ElemKind::Mul: return mul(a, b);
    case ElemKind::Scale: return scale(a, s);
    case ElemKind::Tanh: return tanh(a);
    case ElemKind::Relu: return relu(a);
  }
  throw std::invalid_argument("elementwise: unknown kind");
}

Tape::Var Tape::row_softmax(Var a) {
  const Tensor& ta = val(a);
  require_matrix(ta, "row_softmax");
  std::size_t m = ta.rows(), n = ta.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = ta.data.data() + i * n;
    double* y = out.data.data() + i * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  Var v = push(std::move(out), needs(a), nullptr);
  nodes_.back().back = [a, v, m, n](Tape& t) {
    if (!t.needs(a)) return;
    const Tensor& y = t.val(v);
    const Tensor& dy = t.g(v);
    Tensor& da = t.g(a);
    for (std::size_t i = 0; i < m; ++i) {
      const double* yi = y.data.data() + i * n;
      const double* gi = dy.data.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += yi[j] * gi[j];
      double* di = da.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) di[j] += yi[j] * (gi[j] - dot);
    }
  };
  return v;
}

Tape::Var Tape::softmax_cross_entropy(Var logits, std::vector<int> labels) {
  const Tensor& tl = val(logits);
  require_matrix(tl, "softmax_cross_entropy");
  std::size_t m = tl.rows(), n = tl.cols();
  if (labels.size() != m) throw std::invalid_argument("softmax_cross_entropy: one label per row required");
  for (int lbl : labels)
    if (lbl < 0 || static_cast<std::size_t>(lbl) >= n)
      throw std::out_of_range("softmax_cross_entropy: label out of range");
  // Cache softmax probabilities for the backward pass.
  Tensor probs({m, n});
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = tl.data.data() + i * n;
    double* p = probs.data.data() + i * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = std::exp(x[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < n; ++j) p[j] /= z;
    loss += -(x[labels[i]] - mx - std::log(z));
  }
  loss /= static_cast<double>(m);
  Var v = push(Tensor({1}, {loss}), needs(logits), nullptr);
  auto cache = std::make_shared<Tensor>(std::move(probs));
  nodes_.back().back = [logits, v, labels = std::move(labels), cache, m, n](Tape& t) {
    if (!t.needs(logits)) return;
    double dl = t.g(v).data[0] / static_cast<double>(m);
    Tensor& dx = t.g(logits);
    for (std::size_t i = 0; i < m; ++i) {
      const double* p = cache->data.data() + i * n;
      double* d = dx.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) d[j] += dl * p[j];
      d[labels[i]] -= dl;
    }
  };
  return v;
}

Tape::Var Tape::mse(Var pred, const Tensor& target) {
  const Tensor& tp = val(pred);
  if (!tp.same_shape(target)) throw std::invalid_argument("mse: shape mismatch");
  std::size_t n = tp.numel();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = tp.data[i] - target.data[i];
    loss += d * d;
  }
  loss /= static_cast<double>(n);
  Var v = push(Tensor({1}, {loss}), needs(pred), nullptr);
  auto tgt = std::make_shared<Tensor>(target);
  nodes_.back().back = [pred, v, tgt, n](Tape& t) {
    if (!t.needs(pred)) return;
    double dl = t.g(v).data[0] * 2.0 / static_cast<double>(n);
    const Tensor& p = t.val(pred);
    Tensor& dx = t.g(pred);
    for (std::size_t i = 0; i < n; ++i) dx.data[i] += dl * (p.data[i] - tgt->data[i]);
  };
  return v;
}

Tape::Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& tx = val(x);
  require_matrix(tx, "layer_norm");
  std::size_t m = tx.rows(), n = tx.cols();
  if (val(gain).numel() != n || val(bias).numel() != n)
    throw std::invalid_argument("layer_norm: gain/bias length must equal last axis");
  Tensor out({m, n});
  auto xhat = std::make_shared<Tensor>(Tensor({m, n}));
  auto inv_std = std::make_shared<std::vector<double>>(m);
  const double* gp = val(gain).data.data();
  const double* bp = val(bias).data.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = tx.data.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = xi[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    double* hi = xhat->data.data() + i * n;
    double* oi = out.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      hi[j] = (xi[j] - mean) * is;
      oi[j] = gp[j] * hi[j] + bp[j];
    }
  }
  bool rg = needs(x) || needs(gain) || needs(bias);
  Var v = push(std::move(out), rg, nullptr);
  nodes_.back().back = [x, gain, bias, v, xhat, inv_std, m, n](Tape& t) {
    const Tensor& dy = t.g(v);
    const double* gp = t.val(gain).data.data();
    if (t.needs(gain) || t.needs(bias)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = dy.data.data() + i * n;
        const double* hi = xhat->data.data() + i * n;
        if (t.needs(gain)) {
          double* dg = t.g(gain).data.data();
          for (std::size_t j = 0; j < n; ++j) dg[j] += gi[j] * hi[j];
        }
        if (t.needs(bias)) {
          double* db = t.g(bias).data.data();
          for (std::size_t j = 0; j < n; ++j) db[j] += gi[j];
        }
      }
    }
    if (t.needs(x)) {
      Tensor& dx = t.g(x);
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = dy.data.data() + i * n;
        const double* hi = xhat->data.data() + i * n;
        double mean_g = 0.0, mean_gh = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          double gg = gi[j] * gp[j];
          mean_g += gg;
          mean_gh += gg * hi[j];
        }
        mean_g /= static_cast<double>(n);
        mean_gh /= static_cast<double>(n);
        double is = (*inv_std)[i];
        double* di = dx.data.data() + i * n;
        for (std::size_t j = 0; j < n; ++j)
          di[j] += (gi[j] * gp[j] - mean_g - hi[j] * mean_gh) * is;
      }
    }
  };
  return v;
}

Tape::Var Tape::dropout(Var x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const Tensor& tx = val(x);
  std::size_t n = tx.numel();
  double keep_scale = 1.0 / (1.0 - p);
  // mask holds 0 or 1/(1-p); shared with the backward closure.
  auto mask = std::make_shared<std::vector<double>>(n);
  Tensor out = tx;
  for (std::size_t i = 0; i < n; ++i) {
    double m = rng.uniform() < p ? 0.0 : keep_scale;
    (*mask)[i] = m;
    out.data[i] *= m;
  }
  Var v = push(std::move(out), needs(x), nullptr);
  nodes_.back().back = [x, v, mask, n](Tape& t) {
    if (!t.needs(x)) return;
    const Tensor& dy = t.g(v);
    Tensor& dx = t.g(x);
    for (std::size_t i = 0; i < n; ++i) dx.data[i] += dy.data[i] * (*mask)[i];
  };
  return v;
}

Tape::Var Tape::embedding_rows(Var table, std::vector<int> ids) {
  const Tensor& tt = val(table);
  require_matrix(tt, "embedding_rows");
  std::size_t n = tt.cols();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= tt.rows())
      throw std::out_of_range("embedding_rows: id out of range");
  Tensor out({ids.size(), n});
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::memcpy(out.data.data() + r * n, tt.data.data() + static_cast<std::size_t>(ids[r]) * n, n * sizeof(double));
  Var v = push(std::move(out), needs(table), nullptr);
  nodes_.back().back = [table, v, ids = std::move(ids), n](Tape& t) {
    if (!t.needs(table)) return;
    const Tensor& dy = t.g(v);
    Tensor& dt = t.g(table);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      double* row = dt.data.data() + static_cast<std::size_t>(ids[r]) * n;
      const double* src = dy.data.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += src[j];
    }
  };
  return v;
}

Tape::Var Tape::slice_cols(Var x, std::size_t c0, std::size_t c1) {
  const Tensor& tx = val(x);
  require_matrix(tx, "slice_cols");
  if (c0 >= c1 || c1 > tx.cols()) throw std::invalid_argument("slice_cols: bad column range");
  std::size_t m = tx.rows(), n = tx.cols(), w = c1 - c0;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i)
    std::memcpy(out.data.data() + i * w, tx.data.data() + i * n + c0, w * sizeof(double));
  Var v = push(std::move(out), needs(x), nullptr);
  nodes_.back().back = [x, v, c0, m, n, w](Tape& t) {
    if (!t.needs(x)) return;
    const Tensor& dy = t.g(v);
    Tensor& dx = t.g(x);
    for (std::size_t i = 0; i < m; ++i) {
      double* d = dx.data.data() + i * n + c0;
      const double* s = dy.data.data() + i * w;
      for (std::size_t j = 0; j < w; ++j) d[j] += s[j];
    }
  };
  return v;
}

Tape::Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  std::size_t m = val(parts[0]).rows();
  std::size_t total = 0;
  bool rg = false;
  for (Var p : parts) {
    require_matrix(val(p), "concat_cols");
    if (val(p).rows() != m) throw std::invalid_argument("concat_cols: row counts disagree");
    total += val(p).cols();
    rg = rg || needs(p);
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& tp = val(p);
    std::size_t w = tp.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::memcpy(out.data.data() + i * total + off, tp.data.data() + i * w, w * sizeof(double));
    off += w;
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  Var v = push(std::move(out), rg, nullptr);
  nodes_.back().back = [owned = std::move(owned), v, m, total](Tape& t) {
    const Tensor& dy = t.g(v);
    std::size_t off = 0;
    for (Var p : owned) {
      std::size_t w = t.val(p).cols();
      if (t.needs(p)) {
        Tensor& dp = t.g(p);
        for (std::size_t i = 0; i < m; ++i) {
          double* d = dp.data.data() + i * w;
          const double* s = dy.data.data() + i * total + off;
          for (std::size_t j = 0; j < w; ++j) d[j] += s[j];
        }
      }
      off += w;
    }
  };
  return v;
}

Tape::Var Tape::take_row(Var x, std::size_t r) {
  const Tensor& tx = val(x);
  require_matrix(tx, "take_row");
  if (r >= tx.rows()) throw std::out_of_range("take_row: row out of range");
  std::size_t n = tx.cols();
  Tensor out({1, n});
  std::memcpy(out.data.data(), tx.data.data() + r * n, n * sizeof(double));
  Var v = push(std::move(out), needs(x), nullptr);
  nodes_.back().back = [x, v, r, n](Tape& t) {
    if (!t.needs(x)) return;
    const Tensor& dy = t.g(v);
    double* d = t.g(x).data.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) d[j] += dy.data[j];
  };
  return v;
}

Tape::Var Tape::stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  std::size_t n = val(rows[0]).cols();
  bool rg = false;
  for (Var r : rows) {
    require_matrix(val(r), "stack_rows");
    if (val(r).rows() != 1 || val(r).cols() != n)
      throw std::invalid_argument("stack_rows: expected 1xN rows of equal width");
    rg = rg || needs(r);
  }
  Tensor out({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::memcpy(out.data.data() + i * n, val(rows[i]).data.data(), n * sizeof(double));
  std::vector<Var> owned(rows.begin(), rows.end());
  Var v = push(std::move(out), rg, nullptr);
  nodes_.back().back = [owned = std::move(owned), v, n](Tape& t) {
    const Tensor& dy = t.g(v);
    for (std::size_t i = 0; i < owned.size(); ++i) {
      if (!t.needs(owned[i])) continue;
      double* d = t.g(owned[i]).data.data();
      const double* s = dy.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) d[j] += s[j];
    }
  };
  return v;
}

void Tape::backward(Var root) {
  if (!root.valid() || static_cast<std::size_t>(root.id) >= nodes_.size())
    throw std::invalid_argument("backward: invalid root");
  if (nodes_[root.id].value.numel() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  // Fresh gradient buffers every sweep; repeated backward calls agree.
  for (Node& n : nodes_) {
    if (!n.requires_grad) continue;
    n.grad = Tensor(n.value.shape);
  }
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad.data[0] = 1.0;
  for (std::int32_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.back) n.back(*this);
  }
}

// ---------------------------------------------------------------------------
// finite differences

std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f,
                                std::span<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double fp = f(x);
    x[i] = orig - h;
    double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

GradCheckResult compare_gradients(std::span<const double> analytic,
                                  std::span<const double> numeric,
                                  double den_floor) {
  if (analytic.size() != numeric.size())
    throw std::invalid_argument("compare_gradients: length mismatch");
  GradCheckResult r;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double abs_err = std::fabs(analytic[i] - numeric[i]);
    double den = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), den_floor});
    double rel = abs_err / den;
    if (rel > r.max_rel_err) {
      r.max_rel_err = rel;
      r.worst_index = i;
    }
    r.max_abs_err = std::max(r.max_abs_err, abs_err);
  }
  return r;
}

}  // namespace ftlab
