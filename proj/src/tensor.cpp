#include "fedad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace fedad {

namespace {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Interprets rank-1 [n] as one row, rank-2 as rows x cols.
std::pair<std::size_t, std::size_t> as_rows_cols(const Tensor& t, const char* op) {
  if (t.rank() == 1) return {1, t.shape()[0]};
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(t.shape()));
}

thread_local bool g_grad_enabled = true;

}  // namespace

namespace autograd {

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

}  // namespace autograd

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor: values length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  node_ = std::make_shared<autograd::Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, {value}, requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows(): tensor is not rank 2, shape " + shape_str(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols(): tensor is not rank 2, shape " + shape_str(shape()));
  return node_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item(): tensor is not scalar, shape " + shape_str(shape()));
  return node_->values[0];
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

void Tensor::set_values(const std::vector<double>& v) {
  if (v.size() != node_->values.size()) throw ContractError("set_values: length mismatch");
  node_->values = v;
}

std::vector<double>& Tensor::mutable_values() { return node_->values; }

// --- op construction ---------------------------------------------------------

Tensor make_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& parents,
               std::function<void(autograd::Node&)> backward) {
  Tensor out(std::move(shape), std::move(values), false);
  bool needs = false;
  if (autograd::grad_enabled()) {
    for (const auto& p : parents) {
      if (p.node_->requires_grad) {
        needs = true;
        break;
      }
    }
  }
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (const auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward_fn = std::move(backward);
  }
  return out;
}

namespace {

// Accumulate g into a parent's grad buffer if it participates in the pass.
inline void accum(autograd::Node& parent, std::size_t idx, double g) {
  parent.grad[idx] += g;
}

inline bool wants_grad(const std::shared_ptr<autograd::Node>& n) { return n->requires_grad; }

}  // namespace

// --- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](autograd::Node& n) {
    for (int k = 0; k < 2; ++k) {
      auto& p = n.parents[k];
      if (!wants_grad(p)) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i) accum(*p, i, n.grad[i]);
    }
  });
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "subtract");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](autograd::Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (wants_grad(pa)) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i) accum(*pa, i, n.grad[i]);
    }
    if (wants_grad(pb)) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i) accum(*pb, i, -n.grad[i]);
    }
  });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "multiply");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](autograd::Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (wants_grad(pa)) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i) accum(*pa, i, n.grad[i] * pb->values[i]);
    }
    if (wants_grad(pb)) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i) accum(*pb, i, n.grad[i] * pa->values[i]);
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  return make_op(a.shape(), std::move(out), {a}, [c](autograd::Node& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < n.size(); ++i) accum(*p, i, c * n.grad[i]);
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
  return make_op(a.shape(), std::move(out), {a}, [](autograd::Node& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < n.size(); ++i) accum(*p, i, n.grad[i]);
  });
}

// --- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](autograd::Node& nd) {
    auto& pa = nd.parents[0];
    auto& pb = nd.parents[1];
    const double* g = nd.grad.data();
    if (wants_grad(pa)) {
      pa->ensure_grad();
      // dA = g . B^T
      const double* bv = pb->values.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = g + i * n;
          const double* brow = bv + p * n;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          pa->grad[i * k + p] += s;
        }
    }
    if (wants_grad(pb)) {
      pb->ensure_grad();
      // dB = A^T . g
      const double* av = pa->values.data();
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) {
          const double aval = av[i * k + p];
          const double* grow = g + i * n;
          double* brow = pb->grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += aval * grow[j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank-2, got " + shape_str(a.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  return make_op({n, m}, std::move(out), {a}, [m, n](autograd::Node& nd) {
    auto& p = nd.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p->grad[i * n + j] += nd.grad[j * m + i];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  if (a.rank() != 2) throw ShapeError("slice_rows: expected rank-2, got " + shape_str(a.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  if (start + count > m) throw ShapeError("slice_rows: range out of bounds");
  std::vector<double> out(count * n);
  std::copy(a.values().begin() + start * n, a.values().begin() + (start + count) * n, out.begin());
  return make_op({count, n}, std::move(out), {a}, [start, n, count](autograd::Node& nd) {
    auto& p = nd.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < count * n; ++i) p->grad[start * n + i] += nd.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  if (a.rank() != 2) throw ShapeError("slice_cols: expected rank-2, got " + shape_str(a.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  if (start + count > n) throw ShapeError("slice_cols: range out of bounds");
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.values()[i * n + start + j];
  return make_op({m, count}, std::move(out), {a}, [m, n, start, count](autograd::Node& nd) {
    auto& p = nd.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) p->grad[i * n + start + j] += nd.grad[i * count + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0].rank() == 2 ? parts[0].cols() : 0;
  if (n == 0) throw ShapeError("concat_rows: expected rank-2 inputs");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != n) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_op({total, n}, std::move(out), parts, [](autograd::Node& nd) {
    std::size_t off = 0;
    for (auto& p : nd.parents) {
      const std::size_t len = p->values.size();
      if (wants_grad(p)) {
        p->ensure_grad();
        for (std::size_t i = 0; i < len; ++i) p->grad[i] += nd.grad[off + i];
      }
      off += len;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  if (parts[0].rank() != 2) throw ShapeError("concat_cols: expected rank-2 inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t coff = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].values();
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + coff + j] = v[i * w + j];
    coff += w;
  }
  return make_op({m, total}, std::move(out), parts, [m, total, widths](autograd::Node& nd) {
    std::size_t coff = 0;
    for (std::size_t k = 0; k < nd.parents.size(); ++k) {
      auto& p = nd.parents[k];
      const std::size_t w = widths[k];
      if (wants_grad(p)) {
        p->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) p->grad[i * w + j] += nd.grad[i * total + coff + j];
      }
      coff += w;
    }
  });
}

Tensor add_rowwise(const Tensor& mat, const Tensor& row) {
  auto [m, n] = as_rows_cols(mat, "add_rowwise");
  if (row.size() != n) {
    throw ShapeError("add_rowwise: row length " + std::to_string(row.size()) +
                     " does not match columns " + std::to_string(n));
  }
  std::vector<double> out(mat.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = mat.values()[i * n + j] + row.values()[j];
  return make_op(mat.shape(), std::move(out), {mat, row}, [m, n](autograd::Node& nd) {
    auto& pm = nd.parents[0];
    auto& pr = nd.parents[1];
    if (wants_grad(pm)) {
      pm->ensure_grad();
      for (std::size_t i = 0; i < nd.size(); ++i) pm->grad[i] += nd.grad[i];
    }
    if (wants_grad(pr)) {
      pr->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pr->grad[j] += nd.grad[i * n + j];
    }
  });
}

// --- reductions ----------------------------------------------------------------

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_op({1}, {s * inv}, {a}, [inv](autograd::Node& nd) {
    auto& p = nd.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    const double g = nd.grad[0] * inv;
    for (auto& gv : p->grad) gv += g;
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_op({1}, {s}, {a}, [](autograd::Node& nd) {
    auto& p = nd.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    const double g = nd.grad[0];
    for (auto& gv : p->grad) gv += g;
  });
}

// --- nonlinearities -------------------------------------------------------------

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
  return make_op(a.shape(), std::move(out), {a}, [](autograd::Node& nd) {
    auto& p = nd.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < nd.size(); ++i) p->grad[i] += nd.grad[i] * nd.values[i];
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    const double u = kGeluC * (x + kGeluA * x * x * x);
    out[i] = 0.5 * x * (1.0 + std::tanh(u));
  }
  return make_op(a.shape(), std::move(out), {a}, [](autograd::Node& nd) {
    auto& p = nd.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < nd.size(); ++i) {
      const double x = p->values[i];
      const double u = kGeluC * (x + kGeluA * x * x * x);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      p->grad[i] += nd.grad[i] * d;
    }
  });
}

Tensor softmax(const Tensor& a) {
  auto [m, n] = as_rows_cols(a, "softmax");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.values().data() + i * n;
    double* y = out.data() + i * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
  }
  return make_op(a.shape(), std::move(out), {a}, [m, n](autograd::Node& nd) {
    auto& p = nd.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = nd.values.data() + i * n;
      const double* g = nd.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      double* px = p->grad.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) px[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  auto [m, n] = as_rows_cols(a, "layer_norm");
  if (gain.size() != n || bias.size() != n) {
    throw ShapeError("layer_norm: gain/bias length must equal last axis " + std::to_string(n));
  }
  std::vector<double> out(a.size());
  std::vector<double> xhat(a.size());
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.values().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = x[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (x[j] - mu) * is;
      xhat[i * n + j] = xh;
      out[i * n + j] = gain.values()[j] * xh + bias.values()[j];
    }
  }
  return make_op(a.shape(), std::move(out), {a, gain, bias},
                 [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](autograd::Node& nd) {
                   auto& px = nd.parents[0];
                   auto& pg = nd.parents[1];
                   auto& pb = nd.parents[2];
                   const double invn = 1.0 / static_cast<double>(n);
                   if (wants_grad(pg)) pg->ensure_grad();
                   if (wants_grad(pb)) pb->ensure_grad();
                   if (wants_grad(px)) px->ensure_grad();
                   for (std::size_t i = 0; i < m; ++i) {
                     const double* g = nd.grad.data() + i * n;
                     const double* xh = xhat.data() + i * n;
                     if (wants_grad(pg) || wants_grad(pb)) {
                       for (std::size_t j = 0; j < n; ++j) {
                         if (wants_grad(pg)) pg->grad[j] += g[j] * xh[j];
                         if (wants_grad(pb)) pb->grad[j] += g[j];
                       }
                     }
                     if (wants_grad(px)) {
                       double s1 = 0.0, s2 = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         const double gj = g[j] * pg->values[j];
                         s1 += gj;
                         s2 += gj * xh[j];
                       }
                       s1 *= invn;
                       s2 *= invn;
                       const double is = inv_std[i];
                       double* px_g = px->grad.data() + i * n;
                       for (std::size_t j = 0; j < n; ++j) {
                         const double gj = g[j] * pg->values[j];
                         px_g[j] += (gj - s1 - xh[j] * s2) * is;
                       }
                     }
                   }
                 });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse");
  const double inv = 1.0 / static_cast<double>(pred.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.values()[i] - target.values()[i];
    s += d * d;
  }
  return make_op({1}, {s * inv}, {pred, target}, [inv](autograd::Node& nd) {
    auto& pp = nd.parents[0];
    auto& pt = nd.parents[1];
    const double g = 2.0 * inv * nd.grad[0];
    if (wants_grad(pp)) {
      pp->ensure_grad();
      for (std::size_t i = 0; i < pp->values.size(); ++i)
        pp->grad[i] += g * (pp->values[i] - pt->values[i]);
    }
    if (wants_grad(pt)) {
      pt->ensure_grad();
      for (std::size_t i = 0; i < pt->values.size(); ++i)
        pt->grad[i] -= g * (pp->values[i] - pt->values[i]);
    }
  });
}

// --- reverse pass ----------------------------------------------------------------

Tape build_tape(const Tensor& root) {
  Tape tape;
  if (!root.defined()) return tape;
  std::unordered_set<autograd::Node*> visited;
  // iterative post-order DFS: parents land on the tape before their consumers
  std::vector<std::pair<autograd::Node*, std::size_t>> stack;
  stack.emplace_back(root.node_.get(), 0);
  visited.insert(root.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      autograd::Node* parent = node->parents[next].get();
      ++next;
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      tape.nodes.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  Tape tape = build_tape(loss);
  for (auto* node : tape.nodes) {
    if (!node->is_leaf()) {
      node->grad.assign(node->values.size(), 0.0);
    } else if (node->requires_grad) {
      node->ensure_grad();
    }
  }
  loss.node_->ensure_grad();
  loss.node_->grad[0] += 1.0;
  for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
    autograd::Node* node = *it;
    if (node->backward_fn && node->requires_grad) node->backward_fn(*node);
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double h) {
  Tensor leaf(x.shape(), x.values(), true);
  Tensor loss = fn(leaf);
  if (loss.size() != 1) throw ContractError("grad_check: fn must return a scalar");
  backward(loss);
  const std::vector<double> analytic = leaf.grad();

  double worst = 0.0;
  std::vector<double> vals = x.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double fp = fn(Tensor(x.shape(), vals)).item();
    vals[i] = orig - h;
    const double fm = fn(Tensor(x.shape(), vals)).item();
    vals[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace fedad
